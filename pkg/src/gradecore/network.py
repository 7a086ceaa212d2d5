"""Layer stacks for the two neural models, plus rebuild-from-descriptor.

A descriptor is a plain JSON-able dict describing the architecture; it is what
the checkpoint format stores, so `network_from_descriptor` must be able to
rebuild any network the builders here produce.
"""

import numpy as np

from .errors import ShapeError
from .functions import softmax
from .layers import Conv2D, Dense, Dropout, Flatten, MaxPool2D, Relu
from .tensor import DEFAULT_DTYPE, Rng


class Network:
    """A sequential stack with chained forward/backward and flat param access."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training=training)
        return x

    def backward(self, d_logits):
        d = d_logits
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    def params(self):
        return [t for layer in self.layers for _, t in layer.param_items()]

    def grads(self):
        return [g for layer in self.layers for _, g in layer.grad_items()]

    def param_names(self):
        return [f"{layer.name}.{n}" for layer in self.layers for n, _ in layer.param_items()]

    def snapshot(self):
        return [p.copy() for p in self.params()]

    def load_values(self, values):
        params = self.params()
        if len(values) != len(params):
            raise ShapeError(f"expected {len(params)} parameter tensors, got {len(values)}")
        for p, v in zip(params, values):
            if p.shape != v.shape:
                raise ShapeError(f"parameter shape mismatch: {p.shape} vs {v.shape}")
            p[...] = v


def build_mlp(input_dim, hidden=500, classes=4, rng: Rng | None = None, dtype=DEFAULT_DTYPE):
    """input_dim -> hidden (ReLU) -> classes. He-normal weights, zero biases."""
    rng = rng if rng is not None else Rng(0)
    net = Network([
        Dense(input_dim, hidden, rng.child(0), dtype, name="dense1"),
        Relu(name="relu1"),
        Dense(hidden, classes, rng.child(1), dtype, name="dense2"),
    ])
    descriptor = {
        "arch": "mlp",
        "input_dim": int(input_dim),
        "hidden": int(hidden),
        "classes": int(classes),
    }
    return net, descriptor


def cnn_shape_audit(input_size, filters, kernel):
    """Walk the conv/pool stack and fail fast on impossible sizes."""
    size = int(input_size)
    for i, _ in enumerate(filters):
        size = size - kernel + 1
        if size < 1:
            raise ShapeError(f"conv block {i + 1}: kernel {kernel} does not fit input {input_size}")
        if size % 2:
            raise ShapeError(
                f"conv block {i + 1} leaves an odd {size}x{size} map; 2x2 pooling needs even dims"
            )
        size //= 2
    return size


def build_cnn(input_size, in_channels=3, classes=4, rng: Rng | None = None,
              dtype=DEFAULT_DTYPE, filters=(32, 64), kernel=5, dense_units=256,
              dropout_rate=0.3):
    """Conv-pool blocks, then flatten -> dense(ReLU) -> dropout -> classifier."""
    rng = rng if rng is not None else Rng(0)
    final = cnn_shape_audit(input_size, filters, kernel)
    layers = []
    channels = in_channels
    for i, f in enumerate(filters):
        layers.append(Conv2D(channels, f, kernel, rng.child(2 * i), stride=1,
                             dtype=dtype, name=f"conv{i + 1}"))
        layers.append(Relu(name=f"relu{i + 1}"))
        layers.append(MaxPool2D(name=f"pool{i + 1}"))
        channels = f
    flat_dim = final * final * channels
    layers.append(Flatten(name="flatten"))
    layers.append(Dense(flat_dim, dense_units, rng.child(100), dtype, name="dense1"))
    layers.append(Relu(name="relu_dense"))
    layers.append(Dropout(dropout_rate, rng.child(101), name="dropout"))
    layers.append(Dense(dense_units, classes, rng.child(102), dtype, name="dense2"))
    descriptor = {
        "arch": "cnn",
        "input_size": int(input_size),
        "in_channels": int(in_channels),
        "classes": int(classes),
        "filters": [int(f) for f in filters],
        "kernel": int(kernel),
        "dense_units": int(dense_units),
        "dropout_rate": float(dropout_rate),
    }
    return Network(layers), descriptor


def network_from_descriptor(descriptor, dtype=DEFAULT_DTYPE):
    """Rebuild a zero-initialized network; parameters come from the checkpoint."""
    arch = descriptor.get("arch")
    if arch == "mlp":
        net, _ = build_mlp(descriptor["input_dim"], descriptor["hidden"],
                           descriptor["classes"], rng=None, dtype=dtype)
        return net
    if arch == "cnn":
        net, _ = build_cnn(descriptor["input_size"], descriptor["in_channels"],
                           descriptor["classes"], rng=None, dtype=dtype,
                           filters=tuple(descriptor["filters"]),
                           kernel=descriptor["kernel"],
                           dense_units=descriptor["dense_units"],
                           dropout_rate=descriptor["dropout_rate"])
        return net
    raise ShapeError(f"unknown architecture {arch!r}")


class MlpModel:
    """Flattens (B, C, H, W) images and runs them through the dense stack."""

    kind = "mlp"

    def __init__(self, net: Network, descriptor, class_names, input_size):
        self.net = net
        self.arch = descriptor
        self.class_names = list(class_names)
        self.input_size = int(input_size)

    def predict_proba(self, images):
        x = np.asarray(images)
        x = x.reshape(x.shape[0], -1)
        return softmax(self.net.forward(x, training=False))

    def param_tensors(self):
        return self.net.params()


class CnnModel:
    kind = "cnn"

    def __init__(self, net: Network, descriptor, class_names, input_size):
        self.net = net
        self.arch = descriptor
        self.class_names = list(class_names)
        self.input_size = int(input_size)

    def predict_proba(self, images):
        return softmax(self.net.forward(np.asarray(images), training=False))

    def param_tensors(self):
        return self.net.params()
