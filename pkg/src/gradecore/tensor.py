"""Dense array primitives the models are built on.

Arrays are plain numpy ndarrays in row-major order; images live channel-first
as (C, H, W). Element precision is float64 by default (required for gradient
checking) with float32 available for speed on full-size images.

Randomness comes from `Rng`, a counter-mode SplitMix64 stream, so that every
draw is reproducible bit-for-bit across platforms and thread counts.
"""

import numpy as np

from .errors import NumericError, ShapeError

DTYPE_64 = np.float64
DTYPE_32 = np.float32
DEFAULT_DTYPE = DTYPE_64

_U64 = np.uint64
_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB
_INV_2_53 = 2.0 ** -53


def _mix64(z: int) -> int:
    # SplitMix64 finalizer on a python int, modulo 2**64.
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX_A) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX_B) & _MASK64
    return z ^ (z >> 31)


class Rng:
    """Deterministic random stream (counter-mode SplitMix64).

    Word i of the stream seeded with s is

        mix64(s + (i + 1) * 0x9E3779B97F4A7C15)   (mod 2**64)

    where mix64 is the SplitMix64 finalizer: z ^= z>>30; z *= 0xBF58476D1CE4E5B9;
    z ^= z>>27; z *= 0x94D049BB133111EB; z ^= z>>31. Uniform doubles take the
    top 53 bits of a word: (w >> 11) * 2**-53. Normals are Box-Muller pairs
    (cosine branch only) from two consecutive uniform words.

    `child(*keys)` derives an independent stream whose seed is
    mix64(s ^ mix64(key + GOLDEN)) folded over the keys, which lets callers
    key sub-streams by (epoch, sample index) etc. without coupling draws.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def child(self, *keys: int) -> "Rng":
        s = self.seed
        for k in keys:
            s = _mix64(s ^ _mix64((int(k) & _MASK64) + _GOLDEN))
        return Rng(s)

    def _words(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=_U64)
        self.counter += n
        z = _U64(self.seed) + idx * _U64(_GOLDEN)
        z = (z ^ (z >> _U64(30))) * _U64(_MIX_A)
        z = (z ^ (z >> _U64(27))) * _U64(_MIX_B)
        return z ^ (z >> _U64(31))

    def uniform(self, shape=None, lo=0.0, hi=1.0, dtype=DEFAULT_DTYPE):
        """Draws in [lo, hi). Scalar when shape is None."""
        n = 1 if shape is None else int(np.prod(shape))
        u = (self._words(n) >> _U64(11)).astype(np.float64) * _INV_2_53
        out = lo + u * (hi - lo)
        if shape is None:
            return float(out[0])
        return out.reshape(shape).astype(dtype, copy=False)

    def normal(self, shape, mean=0.0, std=1.0, dtype=DEFAULT_DTYPE):
        n = int(np.prod(shape))
        w = self._words(2 * n)
        # u1 in (0, 1] so the log is finite; u2 in [0, 1).
        u1 = ((w[:n] >> _U64(11)).astype(np.float64) + 1.0) * _INV_2_53
        u2 = (w[n:] >> _U64(11)).astype(np.float64) * _INV_2_53
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return (mean + std * z).reshape(shape).astype(dtype, copy=False)

    def randint_below(self, bound: int) -> int:
        """One integer in [0, bound) via Lemire's multiply-shift."""
        w = int(self._words(1)[0])
        return (w * int(bound)) >> 64

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.randint_below(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def _check_finite(a: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{op} produced non-finite values")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rank-2 matrix product a[m,k] @ b[k,n]."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return _check_finite(a @ b, "matmul")


_ELEMENTWISE_OPS = {"add", "sub", "mul", "div"}


def elementwise(a: np.ndarray, b, op: str) -> np.ndarray:
    """Combine a with b (same shape, scalar, or last-axis row vector).

    Broadcasting is deliberately restricted to the row-vector-bias case; any
    other shape pair is a ShapeError. Division by an exact zero raises.
    """
    if op not in _ELEMENTWISE_OPS:
        raise ValueError(f"unknown elementwise op {op!r}")
    a = np.asarray(a)
    if np.isscalar(b) or np.ndim(b) == 0:
        b_arr = np.asarray(b)
    else:
        b_arr = np.asarray(b)
        if b_arr.shape != a.shape and b_arr.shape != (a.shape[-1],):
            raise ShapeError(
                f"elementwise shapes not compatible: {a.shape} vs {b_arr.shape}"
            )
    if op == "div" and np.any(b_arr == 0):
        raise NumericError("division by exact zero")
    if op == "add":
        out = a + b_arr
    elif op == "sub":
        out = a - b_arr
    elif op == "mul":
        out = a * b_arr
    else:
        out = a / b_arr
    return _check_finite(out, f"elementwise {op}")


def reshape(a: np.ndarray, new_shape) -> np.ndarray:
    a = np.asarray(a)
    new_shape = tuple(int(d) for d in new_shape)
    if any(d <= 0 for d in new_shape):
        raise ShapeError(f"reshape target has non-positive dimension: {new_shape}")
    if int(np.prod(new_shape)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} ({a.size} elements) to {new_shape}")
    return a.reshape(new_shape)


def _patch_indices(c: int, h: int, w: int, kernel: int, stride: int):
    """Gather indices for im2col: rows ordered channel-major then row-major
    within the patch, columns in output row-major scan order."""
    h_out = (h - kernel) // stride + 1
    w_out = (w - kernel) // stride + 1
    ch = np.repeat(np.arange(c), kernel * kernel)
    ky = np.tile(np.repeat(np.arange(kernel), kernel), c)
    kx = np.tile(np.arange(kernel), c * kernel)
    oy = stride * np.repeat(np.arange(h_out), w_out)
    ox = stride * np.tile(np.arange(w_out), h_out)
    ys = ky[:, None] + oy[None, :]
    xs = kx[:, None] + ox[None, :]
    return ch[:, None], ys, xs, h_out, w_out


def _check_patch_shape(shape, kernel, stride):
    c, h, w = shape
    kernel = int(kernel)
    stride = int(stride)
    if kernel < 1 or stride < 1:
        raise ShapeError(f"kernel and stride must be positive, got {kernel}, {stride}")
    if h < kernel or w < kernel:
        raise ShapeError(f"kernel {kernel} larger than input {h}x{w}")
    return c, h, w, kernel, stride


def im2col(image: np.ndarray, kernel: int, stride: int = 1) -> np.ndarray:
    """Unroll a (C, H, W) image into a (C*K*K, H_out*W_out) patch matrix.

    Column j holds the receptive field of output position j (row-major scan).
    """
    image = np.asarray(image)
    if image.ndim != 3:
        raise ShapeError(f"im2col expects (C, H, W), got {image.shape}")
    c, h, w, kernel, stride = _check_patch_shape(image.shape, kernel, stride)
    ch, ys, xs, _, _ = _patch_indices(c, h, w, kernel, stride)
    return image[ch, ys, xs]


def _scatter_sum(cols, linear_idx, out_shape, dtype):
    # bincount accumulates sequentially in traversal order: deterministic and
    # far faster than np.add.at for the overlap sums col2im needs.
    flat = np.bincount(linear_idx.ravel(), weights=cols.ravel(),
                       minlength=int(np.prod(out_shape)))
    return flat.reshape(out_shape).astype(dtype, copy=False)


def col2im(cols: np.ndarray, input_shape, kernel: int, stride: int = 1) -> np.ndarray:
    """Adjoint of im2col: overlapping patch contributions are summed."""
    cols = np.asarray(cols)
    c, h, w, kernel, stride = _check_patch_shape(input_shape, kernel, stride)
    ch, ys, xs, h_out, w_out = _patch_indices(c, h, w, kernel, stride)
    if cols.shape != (c * kernel * kernel, h_out * w_out):
        raise ShapeError(
            f"col2im got {cols.shape}, expected "
            f"{(c * kernel * kernel, h_out * w_out)} for input {tuple(input_shape)}"
        )
    lin = (ch * h + ys) * w + xs
    return _scatter_sum(cols, lin, (c, h, w), cols.dtype)


def im2col_batch(x: np.ndarray, kernel: int, stride: int = 1) -> np.ndarray:
    """im2col over a (B, C, H, W) batch -> (B, C*K*K, L)."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"im2col_batch expects (B, C, H, W), got {x.shape}")
    c, h, w, kernel, stride = _check_patch_shape(x.shape[1:], kernel, stride)
    ch, ys, xs, _, _ = _patch_indices(c, h, w, kernel, stride)
    # Full advanced indexing keeps the gather C-contiguous, which the batched
    # matmul in the conv layer needs to stay on the BLAS fast path.
    bi = np.arange(x.shape[0])[:, None, None]
    return x[bi, ch[None, :, :], ys[None, :, :], xs[None, :, :]]


def col2im_batch(cols: np.ndarray, input_shape, kernel: int, stride: int = 1) -> np.ndarray:
    """Batched adjoint of im2col_batch; input_shape is (B, C, H, W)."""
    cols = np.asarray(cols)
    b = int(input_shape[0])
    c, h, w, kernel, stride = _check_patch_shape(input_shape[1:], kernel, stride)
    ch, ys, xs, h_out, w_out = _patch_indices(c, h, w, kernel, stride)
    if cols.shape != (b, c * kernel * kernel, h_out * w_out):
        raise ShapeError(f"col2im_batch got {cols.shape} for input {tuple(input_shape)}")
    plane = (ch * h + ys) * w + xs  # (CKK, L)
    bi = np.arange(b, dtype=np.int64)[:, None, None] * (c * h * w)
    return _scatter_sum(cols, bi + plane[None, :, :], (b, c, h, w), cols.dtype)


def _check_shape_arg(shape):
    shape = tuple(int(d) for d in np.atleast_1d(shape))
    if len(shape) == 0 or any(d <= 0 for d in shape):
        raise ShapeError(f"shape must be non-empty with positive dims, got {shape}")
    return shape


def rand_uniform(rng: Rng, shape, lo: float = 0.0, hi: float = 1.0, dtype=DEFAULT_DTYPE):
    if not lo < hi:
        raise ShapeError(f"rand_uniform needs lo < hi, got [{lo}, {hi})")
    return rng.uniform(_check_shape_arg(shape), lo, hi, dtype)


def he_init(rng: Rng, fan_in: int, shape, dtype=DEFAULT_DTYPE):
    """Normal(0, sqrt(2/fan_in)) draws; the standard scaling for ReLU layers."""
    if fan_in < 1:
        raise ShapeError(f"fan_in must be >= 1, got {fan_in}")
    return rng.normal(_check_shape_arg(shape), 0.0, np.sqrt(2.0 / fan_in), dtype)
