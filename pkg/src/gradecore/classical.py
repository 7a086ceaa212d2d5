"""The two non-neural baselines: multinomial logistic regression and KNN over
an engineered feature vector.

Feature vector layout (246 values for a 3-channel image in [0, 1]):

    [0:192]    8x8 mean-intensity grid per channel, ordered (channel, row, col)
    [192:240]  16-bin intensity histogram per channel, each block sums to 1
    [240:246]  edge densities: mean |horizontal diff|, mean |vertical diff|
               per channel, ordered (c0_h, c0_v, c1_h, c1_v, c2_h, c2_v)
"""

import warnings

import numpy as np

from .errors import ConfigError, ShapeError
from .functions import softmax, softmax_xent_backward
from .tensor import DEFAULT_DTYPE, Rng

GRID = 8
HIST_BINS = 16
FEATURE_DIM = 3 * GRID * GRID + 3 * HIST_BINS + 6


def extract_features(image):
    """Engineered 246-dim descriptor of a (3, H, W) image normalized to [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"expected (3, H, W) image, got {image.shape}")
    _, h, w = image.shape
    if h < GRID or w < GRID:
        raise ShapeError(f"image {h}x{w} too small for an {GRID}x{GRID} grid")

    grid = np.empty((3, GRID, GRID))
    ys = [(gy * h) // GRID for gy in range(GRID + 1)]
    xs = [(gx * w) // GRID for gx in range(GRID + 1)]
    for gy in range(GRID):
        for gx in range(GRID):
            cell = image[:, ys[gy]:ys[gy + 1], xs[gx]:xs[gx + 1]]
            grid[:, gy, gx] = cell.mean(axis=(1, 2))

    hists = np.empty((3, HIST_BINS))
    for c in range(3):
        bins = np.minimum((image[c] * HIST_BINS).astype(np.int64), HIST_BINS - 1)
        hists[c] = np.bincount(bins.ravel(), minlength=HIST_BINS) / bins.size

    edges = np.empty(6)
    for c in range(3):
        edges[2 * c] = np.abs(np.diff(image[c], axis=1)).mean()
        edges[2 * c + 1] = np.abs(np.diff(image[c], axis=0)).mean()

    return np.concatenate([grid.ravel(), hists.ravel(), edges])


def featurize_images(images, mode="features"):
    """Map a batch of (B, 3, H, W) images to model inputs: engineered features
    or flattened raw pixels."""
    images = np.asarray(images)
    if mode == "features":
        return np.stack([extract_features(img) for img in images])
    if mode == "pixels":
        return images.reshape(images.shape[0], -1).astype(np.float64)
    raise ConfigError(f"unknown feature mode {mode!r}")


class LogRegModel:
    """Multinomial logistic regression; equivalent to a 0-hidden-layer MLP."""

    kind = "logreg"

    def __init__(self, n_features, classes=4, feature_mode="features",
                 class_names=None, dtype=DEFAULT_DTYPE, input_size=224):
        self.n_features = int(n_features)
        self.classes = int(classes)
        self.feature_mode = feature_mode
        self.class_names = list(class_names) if class_names else [f"class{i}" for i in range(classes)]
        self.input_size = int(input_size)
        self.w = np.zeros((classes, n_features), dtype=dtype)
        self.b = np.zeros(classes, dtype=dtype)

    def proba_from_features(self, features):
        return softmax(np.asarray(features) @ self.w.T + self.b)

    def predict_proba(self, images):
        return self.proba_from_features(featurize_images(images, self.feature_mode))

    def param_tensors(self):
        return [self.w, self.b]


def logreg_train(features, onehot, lr=0.1, epochs=300, batch=64,
                 rng: Rng | None = None, model: LogRegModel | None = None):
    """Mini-batch gradient descent on softmax cross-entropy from zero weights."""
    features = np.asarray(features, dtype=np.float64)
    onehot = np.asarray(onehot, dtype=np.float64)
    n, d = features.shape
    classes = onehot.shape[1]
    if not 1 <= batch <= n:
        raise ConfigError(f"batch {batch} must be in [1, {n}]")
    if np.count_nonzero(onehot.sum(axis=0)) < 2:
        warnings.warn("training data contains a single class; model will be degenerate")
    rng = rng if rng is not None else Rng(0)
    if model is None:
        model = LogRegModel(d, classes)
    for _ in range(int(epochs)):
        perm = rng.permutation(n)
        for start in range(0, n, batch):
            idx = perm[start:start + batch]
            xb = features[idx]
            yb = onehot[idx]
            probs = softmax(xb @ model.w.T + model.b)
            d_logits = softmax_xent_backward(probs, yb)
            model.w -= lr * (d_logits.T @ xb)
            model.b -= lr * d_logits.sum(axis=0)
    return model


class KnnModel:
    """Brute-force Euclidean KNN with deterministic tie-breaking.

    Neighbors are the k smallest distances with ties resolved by class index,
    so predictions do not depend on the storage order of the training rows.
    Label votes tie-break by smaller summed neighbor distance, then by lower
    class index.
    """

    kind = "knn"

    def __init__(self, features, labels, k=5, classes=4, feature_mode="features",
                 class_names=None, input_size=224):
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if features.ndim != 2 or len(features) != len(labels):
            raise ShapeError("features must be (N, D) row-aligned with labels")
        if not 1 <= k <= len(features):
            raise ConfigError(f"k={k} must be in [1, N={len(features)}]")
        self.features = features
        self.labels = labels
        self.k = int(k)
        self.classes = int(classes)
        self.feature_mode = feature_mode
        self.class_names = list(class_names) if class_names else [f"class{i}" for i in range(classes)]
        self.input_size = int(input_size)
        self._sq_norms = (features * features).sum(axis=1)

    def _vote(self, dists):
        order = np.lexsort((self.labels, dists))[: self.k]
        top_labels = self.labels[order]
        counts = np.bincount(top_labels, minlength=self.classes)
        best = counts.max()
        candidates = np.flatnonzero(counts == best)
        if len(candidates) > 1:
            sums = np.array([dists[order[top_labels == c]].sum() for c in candidates])
            candidates = candidates[np.flatnonzero(sums == sums.min())]
        return int(candidates[0]), counts

    def predict_one(self, query):
        query = np.asarray(query, dtype=np.float64)
        d2 = self._sq_norms + (query * query).sum() - 2.0 * (self.features @ query)
        dists = np.sqrt(np.maximum(d2, 0.0))
        return self._vote(dists)

    def predict(self, queries):
        return np.array([self.predict_one(q)[0] for q in np.asarray(queries)])

    def predict_proba(self, images):
        feats = featurize_images(images, self.feature_mode)
        out = np.empty((len(feats), self.classes))
        for i, q in enumerate(feats):
            _, counts = self.predict_one(q)
            out[i] = counts / self.k
        return out

    def param_tensors(self):
        return [self.features]


def knn_fit(features, labels, k=5, classes=4, **kwargs):
    return KnnModel(features, labels, k=k, classes=classes, **kwargs)


def knn_predict(model: KnnModel, query):
    """Predicted class index and the per-class vote counts for one query."""
    return model.predict_one(query)
