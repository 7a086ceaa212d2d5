"""Synthetic benchmark datasets used by the tests and the acceptance suite.

Two fixed corpora:
  * solid-color set: 4 color classes, trivially separable; the MLP overfit target.
  * texture set: stripes / checkerboard / noise / flat with random phases and
    levels, where translation invariance matters; the CNN benchmark.
"""

import numpy as np
from PIL import Image

from gradecore.data import Dataset, one_hot
from gradecore.tensor import Rng

SOLID_CLASSES = ["blue", "gray", "green", "red"]
TEXTURE_CLASSES = ["checker", "flat", "noise", "stripes"]

_SOLID_RGB = {
    "red": (0.8, 0.2, 0.2),
    "green": (0.2, 0.8, 0.2),
    "blue": (0.2, 0.2, 0.8),
    "gray": (0.5, 0.5, 0.5),
}


def _assemble(images, labels, class_names):
    images = np.stack(images)
    labels = np.asarray(labels, dtype=np.int64)
    onehot = np.stack([one_hot(l, len(class_names)) for l in labels])
    paths = [f"synthetic#{i}" for i in range(len(labels))]
    return Dataset(images=images, labels=labels, onehot=onehot,
                   class_names=class_names, paths=paths)


def solid_color_dataset(n_per_class=16, size=16, seed=0):
    rng = Rng(seed)
    images, labels = [], []
    for idx, name in enumerate(SOLID_CLASSES):
        base = np.array(_SOLID_RGB[name])
        for j in range(n_per_class):
            r = rng.child(idx, j)
            brightness = r.uniform(lo=-0.1, hi=0.1)
            noise = r.uniform((3, size, size), lo=-0.05, hi=0.05)
            img = base[:, None, None] + brightness + noise
            images.append(np.clip(img, 0.0, 1.0))
            labels.append(idx)
    return _assemble(images, labels, SOLID_CLASSES)


def _grating(size, period, phase, base, amp):
    y = np.arange(size)
    row = base + amp * np.sin(2 * np.pi * (y + phase) / period)
    return np.broadcast_to(row[:, None], (size, size))


def _checker(size, period, py, px, base, amp):
    y = np.sin(2 * np.pi * (np.arange(size) + py) / period)
    x = np.sin(2 * np.pi * (np.arange(size) + px) / period)
    return base + amp * y[:, None] * x[None, :]


def texture_dataset(n_per_class=50, size=32, seed=0):
    """Continuous random phases make raw-pixel memorization useless while the
    local 2D structure stays trivially separable for convolution."""
    rng = Rng(seed)
    images, labels = [], []
    for idx, name in enumerate(TEXTURE_CLASSES):
        for j in range(n_per_class):
            r = rng.child(idx, j)
            base = r.uniform(lo=0.45, hi=0.55)
            amp = r.uniform(lo=0.3, hi=0.42)
            period = r.uniform(lo=6.0, hi=9.0)
            phase = r.uniform(lo=0.0, hi=period)
            phase2 = r.uniform(lo=0.0, hi=period)
            if name == "stripes":
                img = _grating(size, period, phase, base, amp)
            elif name == "checker":
                img = _checker(size, period, phase, phase2, base, amp)
            elif name == "noise":
                img = r.uniform((size, size), lo=0.05, hi=0.95)
            else:  # flat
                img = np.full((size, size), r.uniform(lo=0.2, hi=0.8))
            img = np.broadcast_to(img, (3, size, size))
            noise = r.uniform((3, size, size), lo=-0.04, hi=0.04)
            images.append(np.clip(img + noise, 0.0, 1.0))
            labels.append(idx)
    return _assemble(images, labels, TEXTURE_CLASSES)


def write_image_tree(dataset: Dataset, root):
    """Render a Dataset to a root/<class>/*.png tree for CLI-level tests."""
    root.mkdir(parents=True, exist_ok=True)
    counters = {}
    for img, label in zip(dataset.images, dataset.labels):
        name = dataset.class_names[label]
        class_dir = root / name
        class_dir.mkdir(exist_ok=True)
        i = counters.get(name, 0)
        counters[name] = i + 1
        arr = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(arr).save(class_dir / f"{name}_{i:03d}.png")
    return root
