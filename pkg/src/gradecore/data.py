"""Dataset ingestion, preprocessing and training-time augmentation.

Directory layout is one subdirectory per class: root/<ClassName>/*.{png,jpg,jpeg}.
Class indices follow the lexicographic order of the directory names, which for
the road-quality corpus gives Good=0, Poor=1, Satisfactory=2, Very Poor=3.
Files are processed in sorted-path order so loading is fully deterministic.

The optional cache format "GDSET1" is little-endian:
magic b"GDSET1", u32 record count, then per record u8 class index, u16 H,
u16 W, followed by 3*H*W float32 pixels channel-first.
"""

import logging
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError, ShapeError, ValidationError
from .tensor import DEFAULT_DTYPE, Rng

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}
CACHE_MAGIC = b"GDSET1"


@dataclass
class Dataset:
    images: np.ndarray  # (N, 3, H, W) in [0, 1]
    labels: np.ndarray  # (N,) int64 class indices
    onehot: np.ndarray  # (N, num_classes)
    class_names: list
    paths: list

    def __len__(self):
        return len(self.images)

    @property
    def num_classes(self):
        return len(self.class_names)

    def subset(self, indices):
        indices = np.asarray(indices)
        if indices.dtype == bool:
            indices = np.flatnonzero(indices)
        return Dataset(
            images=self.images[indices],
            labels=self.labels[indices],
            onehot=self.onehot[indices],
            class_names=self.class_names,
            paths=[self.paths[i] for i in indices],
        )


class Split(NamedTuple):
    train: Dataset
    test: Dataset


def one_hot(label, num_classes=4):
    label = int(label)
    if not 0 <= label < num_classes:
        raise ValidationError(f"label {label} out of range for {num_classes} classes")
    row = np.zeros(num_classes, dtype=DEFAULT_DTYPE)
    row[label] = 1.0
    return row


def normalize(image):
    """Map pixel values in [0, 255] to [0, 1] by dividing by 255."""
    image = np.asarray(image, dtype=np.float64)
    if image.size and (image.min() < 0 or image.max() > 255):
        raise ValidationError(
            f"pixel values outside [0, 255]: min {image.min()}, max {image.max()}"
        )
    return image / 255.0


def resize_bilinear(image, target=224):
    """Bilinear resize of a (C, H, W) image to (C, target, target).

    Uses the corner-aligned convention: source coordinate of output index i is
    i * (src - 1) / (dst - 1), so the four corners map exactly. Interpolation
    weights are convex, so output values never overshoot the source range.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ShapeError(f"expected (C, H, W) image, got {image.shape}")
    c, h, w = image.shape
    target = int(target)
    if target < 1:
        raise ShapeError(f"target size must be >= 1, got {target}")
    if (h, w) == (target, target):
        return image.copy()

    def coords(src, dst):
        if dst == 1 or src == 1:
            return np.zeros(dst)
        return np.arange(dst) * ((src - 1) / (dst - 1))

    ys = coords(h, target)
    xs = coords(w, target)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    p00 = image[:, y0[:, None], x0[None, :]]
    p01 = image[:, y0[:, None], x1[None, :]]
    p10 = image[:, y1[:, None], x0[None, :]]
    p11 = image[:, y1[:, None], x1[None, :]]
    top = p00 * (1 - wx) + p01 * wx
    bot = p10 * (1 - wx) + p11 * wx
    return top * (1 - wy) + bot * wy


def _decode_image(path):
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr.transpose(2, 0, 1)  # HWC -> CHW


def _assemble(images, labels, class_names, paths, dtype):
    images = np.stack(images).astype(dtype, copy=False)
    labels = np.asarray(labels, dtype=np.int64)
    onehot = np.stack([one_hot(l, len(class_names)) for l in labels]).astype(dtype, copy=False)
    return Dataset(images=images, labels=labels, onehot=onehot,
                   class_names=class_names, paths=paths)


def load_directory(root, size=224, dtype=DEFAULT_DTYPE):
    """Load, resize and normalize every decodable image under root.

    Unreadable files are skipped with a warning; an empty tree is fatal.
    A class count other than 4 is unusual for this problem but not an error.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise DataError(f"no class subdirectories under {root}")
    class_names = [d.name for d in class_dirs]
    if len(class_names) != 4:
        logger.warning("expected 4 classes, found %d: %s", len(class_names), class_names)

    images, labels, paths = [], [], []
    for idx, class_dir in enumerate(class_dirs):
        files = sorted(p for p in class_dir.iterdir()
                       if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        for path in files:
            try:
                raw = _decode_image(path)
            except Exception as exc:
                logger.warning("skipping unreadable image %s: %s", path, exc)
                continue
            images.append(normalize(resize_bilinear(raw, size)))
            labels.append(idx)
            paths.append(str(path))
    if not images:
        raise DataError(f"no decodable images under {root}")
    return _assemble(images, labels, class_names, paths, dtype)


def load_image(path, size=224, dtype=DEFAULT_DTYPE):
    """Single image, preprocessed the same way the loader does it."""
    return normalize(resize_bilinear(_decode_image(path), size)).astype(dtype, copy=False)


def train_test_split(dataset: Dataset, test_fraction=0.2, rng: Rng | None = None) -> Split:
    """Stratified, seeded partition into train and test.

    Per-class test counts are the floor of the exact share, topped up by
    largest fractional remainder until round(N * fraction) is reached; a class
    never loses its last sample to the test side. Classes with fewer than two
    samples force an unstratified fallback.
    """
    n = len(dataset)
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test fraction must be in (0, 1), got {test_fraction}")
    if n < 2:
        raise ConfigError(f"need at least 2 samples to split, got {n}")
    rng = rng if rng is not None else Rng(0)

    by_class = [np.flatnonzero(dataset.labels == c) for c in range(dataset.num_classes)]
    by_class = [idx for idx in by_class if len(idx)]
    target = max(1, min(n - 1, round(n * test_fraction)))

    if any(len(idx) < 2 for idx in by_class):
        warnings.warn("a class has fewer than 2 samples; falling back to unstratified split")
        perm = rng.permutation(n)
        test_idx = np.sort(perm[:target])
        train_idx = np.sort(perm[target:])
        return Split(dataset.subset(train_idx), dataset.subset(test_idx))

    exact = [len(idx) * test_fraction for idx in by_class]
    counts = [min(int(e), len(idx) - 1) for e, idx in zip(exact, by_class)]
    remainders = sorted(
        range(len(by_class)),
        key=lambda i: (-(exact[i] - int(exact[i])), i),
    )
    short = target - sum(counts)
    for i in remainders:
        if short <= 0:
            break
        if counts[i] + 1 <= len(by_class[i]) - 1:
            counts[i] += 1
            short -= 1

    test_parts, train_parts = [], []
    for idx, count in zip(by_class, counts):
        perm = rng.permutation(len(idx))
        shuffled = idx[perm]
        test_parts.append(shuffled[:count])
        train_parts.append(shuffled[count:])
    test_idx = np.sort(np.concatenate(test_parts))
    train_idx = np.sort(np.concatenate(train_parts))
    return Split(dataset.subset(train_idx), dataset.subset(test_idx))


@dataclass
class AugmentConfig:
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5
    shear_max: float = 0.2       # radians
    zoom_range: tuple = (0.8, 1.2)
    shift_max: float = 0.1       # fraction of width/height

    def __post_init__(self):
        if not (0.0 <= self.hflip_prob <= 1.0 and 0.0 <= self.vflip_prob <= 1.0):
            raise ConfigError("flip probabilities must be in [0, 1]")
        lo, hi = self.zoom_range
        if not (lo > 0 and hi >= lo):
            raise ConfigError(f"zoom range must be positive and ordered, got {self.zoom_range}")
        if self.shear_max < 0 or self.shift_max < 0:
            raise ConfigError("shear_max and shift_max must be non-negative")


def hflip(image):
    return np.flip(image, axis=2).copy()


def vflip(image):
    return np.flip(image, axis=1).copy()


def _affine_sample(image, shear, zoom, dx, dy):
    """Inverse-map affine: zoom and horizontal shear about the image center,
    then translate; bilinear sampling with nearest-edge fill."""
    c, h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    s = np.tan(shear)
    yg, xg = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    # Forward map: x' = z*(x + s*y) + dx, y' = z*y + dy (centered coordinates).
    yr = (yg - cy - dy) / zoom
    xr = (xg - cx - dx) / zoom - s * yr
    ys = yr + cy
    xs = xr + cx
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    wy = ys - y0
    wx = xs - x0
    y0i = np.clip(y0, 0, h - 1).astype(np.int64)
    y1i = np.clip(y0 + 1, 0, h - 1).astype(np.int64)
    x0i = np.clip(x0, 0, w - 1).astype(np.int64)
    x1i = np.clip(x0 + 1, 0, w - 1).astype(np.int64)
    top = image[:, y0i, x0i] * (1 - wx) + image[:, y0i, x1i] * wx
    bot = image[:, y1i, x0i] * (1 - wx) + image[:, y1i, x1i] * wx
    return top * (1 - wy) + bot * wy


def augment(image, cfg: AugmentConfig, rng: Rng):
    """One random training transform: optional flips, then shear/zoom/shift.

    Always consumes exactly six uniform draws (hflip, vflip, shear, zoom,
    shift-x, shift-y in that order) so the stream position is config-independent.
    Output shape and [0, 1] range are preserved.
    """
    image = np.asarray(image)
    _, h, w = image.shape
    u_h = rng.uniform()
    u_v = rng.uniform()
    shear = rng.uniform(lo=-cfg.shear_max, hi=cfg.shear_max)
    zoom = rng.uniform(lo=cfg.zoom_range[0], hi=cfg.zoom_range[1])
    dx = rng.uniform(lo=-cfg.shift_max, hi=cfg.shift_max) * w
    dy = rng.uniform(lo=-cfg.shift_max, hi=cfg.shift_max) * h
    if u_h < cfg.hflip_prob:
        image = hflip(image)
    if u_v < cfg.vflip_prob:
        image = vflip(image)
    return _affine_sample(image, shear, zoom, dx, dy)


def save_cache(dataset: Dataset, path):
    """Write the GDSET1 binary cache (pixels stored as float32)."""
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<I", len(dataset)))
        for img, label in zip(dataset.images, dataset.labels):
            _, h, w = img.shape
            fh.write(struct.pack("<BHH", int(label), h, w))
            fh.write(np.ascontiguousarray(img, dtype="<f4").tobytes())


def load_cache(path, class_names=None, dtype=DEFAULT_DTYPE):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(CACHE_MAGIC)] != CACHE_MAGIC:
        raise DataError(f"{path}: not a GDSET1 cache file")
    off = len(CACHE_MAGIC)
    if len(blob) < off + 4:
        raise DataError(f"{path}: truncated cache header")
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    images, labels = [], []
    size = None
    for i in range(count):
        if len(blob) < off + 5:
            raise DataError(f"{path}: truncated at record {i}")
        label, h, w = struct.unpack_from("<BHH", blob, off)
        off += 5
        nbytes = 3 * h * w * 4
        if len(blob) < off + nbytes:
            raise DataError(f"{path}: truncated pixel data at record {i}")
        img = np.frombuffer(blob, dtype="<f4", count=3 * h * w, offset=off).reshape(3, h, w)
        off += nbytes
        if size is None:
            size = (h, w)
        elif size != (h, w):
            raise DataError(f"{path}: mixed image sizes in cache")
        images.append(img.astype(dtype))
        labels.append(label)
    if not images:
        raise DataError(f"{path}: cache contains no records")
    num_classes = max(labels) + 1
    if class_names is None:
        class_names = [f"class{i}" for i in range(max(4, num_classes))]
    return _assemble(images, labels, list(class_names), [f"{path}#{i}" for i in range(count)], dtype)
