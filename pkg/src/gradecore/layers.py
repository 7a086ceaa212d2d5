"""Network layers with hand-derived backward passes.

Each layer caches whatever its backward pass needs during forward; calling
backward before forward is a StateError. Gradients land on the layer
(`dw`, `db`) and backward returns the gradient w.r.t. the layer input.
A layer instance must not be shared between concurrent forward/backward pairs.
"""

import numpy as np

from .errors import ConfigError, ShapeError, StateError
from .functions import relu, relu_grad
from .tensor import (
    DEFAULT_DTYPE,
    Rng,
    col2im_batch,
    he_init,
    im2col_batch,
    matmul,
)


class Dense:
    """Fully connected layer: y = x @ w.T + b with w shaped (out, in)."""

    def __init__(self, in_dim, out_dim, rng: Rng | None = None, dtype=DEFAULT_DTYPE, name="dense"):
        self.name = name
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        if rng is None:
            self.w = np.zeros((out_dim, in_dim), dtype=dtype)
        else:
            self.w = he_init(rng, in_dim, (out_dim, in_dim), dtype)
        self.b = np.zeros(out_dim, dtype=dtype)
        self.dw = None
        self.db = None
        self._x = None

    def param_items(self):
        return [("w", self.w), ("b", self.b)]

    def grad_items(self):
        return [("w", self.dw), ("b", self.db)]

    def forward(self, x, training=False):
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"{self.name}: input {x.shape} does not match in_dim {self.in_dim}")
        self._x = x
        return matmul(x, self.w.T) + self.b

    def backward(self, d_out):
        if self._x is None:
            raise StateError(f"{self.name}: backward before forward")
        d_out = np.asarray(d_out)
        if d_out.shape != (self._x.shape[0], self.out_dim):
            raise ShapeError(f"{self.name}: d_out {d_out.shape} does not match cached batch")
        self.dw = matmul(d_out.T, self._x)
        self.db = d_out.sum(axis=0)
        return matmul(d_out, self.w)


class Relu:
    def __init__(self, name="relu"):
        self.name = name
        self._x = None

    def param_items(self):
        return []

    def grad_items(self):
        return []

    def forward(self, x, training=False):
        self._x = x
        return relu(x)

    def backward(self, d_out):
        if self._x is None:
            raise StateError(f"{self.name}: backward before forward")
        return relu_grad(self._x, d_out)


class Conv2D:
    """Valid cross-correlation (no kernel flip) lowered to im2col + matmul.

    Filters are (F, C, K, K); output spatial dims are floor((in-K)/stride)+1.
    """

    def __init__(self, in_channels, filters, kernel, rng: Rng | None = None,
                 stride=1, dtype=DEFAULT_DTYPE, name="conv"):
        self.name = name
        self.in_channels = int(in_channels)
        self.filters = int(filters)
        self.kernel = int(kernel)
        self.stride = int(stride)
        if self.stride < 1:
            raise ConfigError(f"{name}: stride must be positive")
        fan_in = in_channels * kernel * kernel
        shape = (filters, in_channels, kernel, kernel)
        if rng is None:
            self.w = np.zeros(shape, dtype=dtype)
        else:
            self.w = he_init(rng, fan_in, shape, dtype)
        self.b = np.zeros(filters, dtype=dtype)
        self.dw = None
        self.db = None
        self._cols = None
        self._x_shape = None

    def param_items(self):
        return [("w", self.w), ("b", self.b)]

    def grad_items(self):
        return [("w", self.dw), ("b", self.db)]

    def out_size(self, h, w):
        return (h - self.kernel) // self.stride + 1, (w - self.kernel) // self.stride + 1

    def forward(self, x, training=False):
        x = np.asarray(x)
        if x.ndim != 4:
            raise ShapeError(f"{self.name}: expected (B, C, H, W), got {x.shape}")
        if x.shape[1] != self.in_channels:
            raise ShapeError(
                f"{self.name}: input has {x.shape[1]} channels, filters expect {self.in_channels}"
            )
        b, _, h, w = x.shape
        h_out, w_out = self.out_size(h, w)
        cols = im2col_batch(x, self.kernel, self.stride)  # (B, C*K*K, L)
        self._cols = cols
        self._x_shape = x.shape
        w2 = self.w.reshape(self.filters, -1)
        out = w2 @ cols  # (B, F, L)
        out = out + self.b[:, None]
        return out.reshape(b, self.filters, h_out, w_out)

    def backward(self, d_out):
        if self._cols is None:
            raise StateError(f"{self.name}: backward before forward")
        d_out = np.asarray(d_out)
        b = self._x_shape[0]
        d2 = d_out.reshape(b, self.filters, -1)  # (B, F, L)
        # dW: accumulate d2[b] @ cols[b].T over the batch.
        self.dw = np.tensordot(d2, self._cols, axes=([0, 2], [0, 2])).reshape(self.w.shape)
        self.db = d_out.sum(axis=(0, 2, 3))
        w2 = self.w.reshape(self.filters, -1)
        d_cols = w2.T @ d2  # (B, C*K*K, L)
        return col2im_batch(d_cols, self._x_shape, self.kernel, self.stride)


class MaxPool2D:
    """2x2 max pooling with stride 2; ties route to the first index in
    row-major window order so backward is deterministic."""

    def __init__(self, name="pool"):
        self.name = name
        self.pool = 2
        self.stride = 2
        self._arg = None
        self._x_shape = None

    def param_items(self):
        return []

    def grad_items(self):
        return []

    def _windows(self, x):
        b, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"{self.name}: spatial dims must be even, got {h}x{w}")
        xr = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return xr.reshape(b, c, h // 2, w // 2, 4)

    def forward(self, x, training=False):
        x = np.asarray(x)
        if x.ndim != 4:
            raise ShapeError(f"{self.name}: expected (B, C, H, W), got {x.shape}")
        win = self._windows(x)
        self._arg = win.argmax(axis=-1)  # first maximal index on ties
        self._x_shape = x.shape
        return win.max(axis=-1)

    def backward(self, d_out):
        if self._arg is None:
            raise StateError(f"{self.name}: backward before forward")
        d_out = np.asarray(d_out)
        b, c, h, w = self._x_shape
        buf = np.zeros((b, c, h // 2, w // 2, 4), dtype=d_out.dtype)
        np.put_along_axis(buf, self._arg[..., None], d_out[..., None], axis=-1)
        return (
            buf.reshape(b, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, h, w)
        )


class Dropout:
    """Inverted dropout: train-time zeroing with 1/(1-rate) scaling, so
    inference is exactly the identity."""

    def __init__(self, rate, rng: Rng | None = None, name="dropout"):
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"{name}: dropout rate must be in [0, 1), got {rate}")
        self.name = name
        self.rate = float(rate)
        self.rng = rng if rng is not None else Rng(0)
        self._mask = None
        self._training = None

    def param_items(self):
        return []

    def grad_items(self):
        return []

    def forward(self, x, training=False):
        self._training = bool(training)
        if not training:
            self._mask = None
            return x
        u = self.rng.uniform(np.shape(x))
        self._mask = (u >= self.rate).astype(np.asarray(x).dtype)
        self._scale = 1.0 / (1.0 - self.rate)
        return x * self._mask * self._scale

    def backward(self, d_out):
        if self._training is None:
            raise StateError(f"{self.name}: backward before forward")
        if not self._training:
            return d_out
        return d_out * self._mask * self._scale


class Flatten:
    def __init__(self, name="flatten"):
        self.name = name
        self._shape = None

    def param_items(self):
        return []

    def grad_items(self):
        return []

    def forward(self, x, training=False):
        x = np.asarray(x)
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, d_out):
        if self._shape is None:
            raise StateError(f"{self.name}: backward before forward")
        return np.asarray(d_out).reshape(self._shape)
