"""Training protocols, shared evaluation, early stopping and gradient checking.

Both protocols are deterministic functions of (dataset, config, seed): all
randomness flows through keyed Rng streams, so a re-run reproduces the same
history and weights bit for bit.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .classical import LogRegModel
from .data import AugmentConfig, Split, augment
from .errors import ConfigError, DataError
from .functions import cross_entropy, softmax, softmax_xent_backward
from .layers import Dropout, MaxPool2D, Relu
from .network import CnnModel, MlpModel, build_cnn, build_mlp
from .optim import Adam, Sgd
from .tensor import DTYPE_32, DTYPE_64, Rng

EVAL_CHUNK = 256


@dataclass
class TrainConfig:
    model: str = "mlp"              # mlp | cnn | logreg | knn
    batch_size: int = 100
    steps: int | None = 2000        # mlp budget (mini-batch steps)
    epochs: int | None = 25         # cnn/logreg budget
    learning_rate: float = 0.001
    patience: int | None = None
    seed: int = 0
    input_size: int = 224
    hidden: int = 500
    k: int = 5
    precision: int = 64
    feature_mode: str = "features"
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.model not in {"mlp", "cnn", "logreg", "knn"}:
            raise ConfigError(f"unknown model kind {self.model!r}")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.steps is not None and self.steps < 1:
            raise ConfigError("step budget must be >= 1")
        if self.epochs is not None and self.epochs < 1:
            raise ConfigError("epoch budget must be >= 1")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1 when set")
        if self.precision not in (32, 64):
            raise ConfigError("precision must be 32 or 64")

    @property
    def dtype(self):
        return DTYPE_64 if self.precision == 64 else DTYPE_32


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class EvalResult:
    accuracy: float
    mean_loss: float
    confusion: np.ndarray  # (C, C), true class on rows


class EarlyStopping:
    """Stop when val loss fails to strictly improve for `patience` epochs in a
    row; keeps a snapshot of the best weights for restoration."""

    def __init__(self, patience: int):
        if patience is None or patience < 1:
            raise ConfigError(f"patience must be >= 1, got {patience}")
        self.patience = int(patience)
        self.best_val_loss = np.inf
        self.best_epoch = None
        self.epochs_since_improvement = 0
        self.best_params = None

    def update(self, epoch, val_loss, params) -> bool:
        if val_loss < self.best_val_loss:
            self.best_val_loss = float(val_loss)
            self.best_epoch = epoch
            self.epochs_since_improvement = 0
            self.best_params = [p.copy() for p in params]
        else:
            self.epochs_since_improvement += 1
        return self.epochs_since_improvement >= self.patience

    def restore(self, params):
        if self.best_params is not None:
            for p, best in zip(params, self.best_params):
                p[...] = best


def evaluate(model, part, batch_size=EVAL_CHUNK) -> EvalResult:
    """Accuracy, mean cross-entropy and confusion matrix on a dataset part."""
    n = len(part)
    if n == 0:
        raise DataError("cannot evaluate on an empty dataset part")
    classes = part.num_classes
    confusion = np.zeros((classes, classes), dtype=np.int64)
    loss_sum = 0.0
    correct = 0
    for start in range(0, n, batch_size):
        imgs = part.images[start:start + batch_size]
        onehot = part.onehot[start:start + batch_size]
        labels = part.labels[start:start + batch_size]
        probs = model.predict_proba(imgs)
        loss = cross_entropy(probs, onehot)
        loss_sum += loss.per_sample.sum()
        preds = probs.argmax(axis=1)
        correct += int((preds == labels).sum())
        for t, p in zip(labels, preds):
            confusion[t, p] += 1
    return EvalResult(accuracy=correct / n, mean_loss=float(loss_sum / n), confusion=confusion)


def _flatten_images(images, dtype):
    x = np.asarray(images, dtype=dtype)
    return x.reshape(x.shape[0], -1)


def _epoch_metrics(model, epoch, train, val) -> EpochRecord:
    tr = evaluate(model, train)
    va = evaluate(model, val)
    return EpochRecord(epoch=epoch, train_loss=tr.mean_loss, train_acc=tr.accuracy,
                       val_loss=va.mean_loss, val_acc=va.accuracy)


def train_mlp(split: Split, cfg: TrainConfig,
              on_epoch: Callable[[EpochRecord], None] | None = None):
    """Paper baseline protocol: plain SGD for a fixed number of mini-batch
    steps, metrics recorded once per full pass over the training set.
    No augmentation."""
    train, val = split.train, split.test
    n = len(train)
    if cfg.batch_size > n:
        raise ConfigError(f"batch size {cfg.batch_size} exceeds training set size {n}")
    if cfg.steps is None:
        raise ConfigError("mlp training needs a step budget")
    dtype = cfg.dtype
    rng = Rng(cfg.seed)
    input_dim = int(np.prod(train.images.shape[1:]))
    net, descriptor = build_mlp(input_dim, cfg.hidden, train.num_classes,
                                rng.child(1), dtype)
    model = MlpModel(net, descriptor, train.class_names, cfg.input_size)
    opt = Sgd(cfg.learning_rate)
    shuffle_rng = rng.child(2)

    x_all = _flatten_images(train.images, dtype)
    y_all = train.onehot.astype(dtype, copy=False)

    history = []
    steps_done = 0
    epoch = 0
    while steps_done < cfg.steps:
        perm = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            logits = net.forward(x_all[idx], training=True)
            probs = softmax(logits)
            net.backward(softmax_xent_backward(probs, y_all[idx]))
            opt.step(net.params(), net.grads())
            steps_done += 1
            if steps_done >= cfg.steps:
                break
        epoch += 1
        record = _epoch_metrics(model, epoch, train, val)
        history.append(record)
        if on_epoch:
            on_epoch(record)
    return model, history


def train_cnn(split: Split, cfg: TrainConfig,
              on_epoch: Callable[[EpochRecord], None] | None = None):
    """CNN protocol: Adam, per-epoch on-the-fly augmentation of training
    batches, early stopping on validation loss with best-weight restoration."""
    train, val = split.train, split.test
    n = len(train)
    if cfg.batch_size > n:
        raise ConfigError(f"batch size {cfg.batch_size} exceeds training set size {n}")
    if cfg.epochs is None:
        raise ConfigError("cnn training needs an epoch budget")
    dtype = cfg.dtype
    rng = Rng(cfg.seed)
    net, descriptor = build_cnn(cfg.input_size, train.images.shape[1],
                                train.num_classes, rng.child(1), dtype)
    model = CnnModel(net, descriptor, train.class_names, cfg.input_size)
    opt = Adam(cfg.learning_rate)
    shuffle_rng = rng.child(2)
    aug_rng = rng.child(3)

    y_all = train.onehot.astype(dtype, copy=False)
    stopper = EarlyStopping(cfg.patience) if cfg.patience else None

    history = []
    for epoch in range(1, cfg.epochs + 1):
        perm = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            # Per-sample streams keyed by (epoch, dataset index): batch
            # composition cannot change anyone's augmentation draws.
            xb = np.stack([
                augment(train.images[i], cfg.augment, aug_rng.child(epoch, int(i)))
                for i in idx
            ]).astype(dtype, copy=False)
            logits = net.forward(xb, training=True)
            probs = softmax(logits)
            net.backward(softmax_xent_backward(probs, y_all[idx]))
            opt.step(net.params(), net.grads())
        record = _epoch_metrics(model, epoch, train, val)
        history.append(record)
        if on_epoch:
            on_epoch(record)
        if stopper and stopper.update(epoch, record.val_loss, net.params()):
            break
    if stopper:
        stopper.restore(net.params())
    return model, history


def train_logreg(split: Split, cfg: TrainConfig,
                 on_epoch: Callable[[EpochRecord], None] | None = None):
    """Mini-batch logistic regression over engineered features (or raw pixels)."""
    from .classical import featurize_images, logreg_train

    train, val = split.train, split.test
    if cfg.batch_size > len(train):
        raise ConfigError(f"batch size {cfg.batch_size} exceeds training set size {len(train)}")
    feats = featurize_images(train.images, cfg.feature_mode)
    model = LogRegModel(feats.shape[1], train.num_classes, cfg.feature_mode,
                        train.class_names, cfg.dtype, input_size=cfg.input_size)
    rng = Rng(cfg.seed).child(1)
    history = []
    epochs = cfg.epochs or 1
    for epoch in range(1, epochs + 1):
        logreg_train(feats, train.onehot, lr=cfg.learning_rate, epochs=1,
                     batch=cfg.batch_size, rng=rng, model=model)
        record = _epoch_metrics(model, epoch, train, val)
        history.append(record)
        if on_epoch:
            on_epoch(record)
    return model, history


def train_knn(split: Split, cfg: TrainConfig):
    """KNN has no optimization; fitting is feature extraction plus storage."""
    from .classical import KnnModel, featurize_images

    train = split.train
    feats = featurize_images(train.images, cfg.feature_mode)
    return KnnModel(feats, train.labels, k=cfg.k, classes=train.num_classes,
                    feature_mode=cfg.feature_mode, class_names=train.class_names,
                    input_size=cfg.input_size), []


def write_history_csv(history, path):
    """CSV export: epoch,train_loss,train_acc,val_loss,val_acc at 6 decimals."""
    with open(path, "w", newline="") as fh:
        fh.write("epoch,train_loss,train_acc,val_loss,val_acc\n")
        for r in history:
            fh.write(f"{r.epoch},{r.train_loss:.6f},{r.train_acc:.6f},"
                     f"{r.val_loss:.6f},{r.val_acc:.6f}\n")


# --- gradient checking ------------------------------------------------------

GRADCHECK_PRESETS = {
    "mlp": {"kind": "mlp", "input_dim": 12, "hidden": 5, "classes": 4, "batch": 3},
    "cnn": {"kind": "cnn", "size": 8, "channels": 3, "classes": 4, "batch": 2,
            "filters": (2,), "kernel": 3, "dense_units": 6, "dropout_rate": 0.3},
}


@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    entries: list
    tolerance: float

    @property
    def passed(self):
        return all(e.passed for e in self.entries)

    def failures(self):
        return [e.name for e in self.entries if not e.passed]


def _build_gradcheck_net(spec, seed):
    rng = Rng(seed)
    if spec["kind"] == "mlp":
        net, _ = build_mlp(spec["input_dim"], spec["hidden"], spec["classes"],
                           rng.child(1), DTYPE_64)
        x_shape = (spec["batch"], spec["input_dim"])
    elif spec["kind"] == "cnn":
        net, _ = build_cnn(spec["size"], spec["channels"], spec["classes"],
                           rng.child(1), DTYPE_64, filters=spec["filters"],
                           kernel=spec["kernel"], dense_units=spec["dense_units"],
                           dropout_rate=spec["dropout_rate"])
        x_shape = (spec["batch"], spec["channels"], spec["size"], spec["size"])
    else:
        raise ConfigError(f"unknown gradient-check model kind {spec['kind']!r}")
    return net, x_shape, rng


def _safety_margin(net):
    """Distance of the probe point from ReLU kinks and max-pool ties."""
    margin = np.inf
    for layer in net.layers:
        if isinstance(layer, Relu):
            margin = min(margin, float(np.abs(layer._x).min()))
        elif isinstance(layer, MaxPool2D):
            win = np.sort(layer._windows_cache, axis=-1)
            margin = min(margin, float((win[..., -1] - win[..., -2]).min()))
    return margin


def gradient_check(model_spec="mlp", tolerance=1e-5, seed=0, h=1e-5) -> GradCheckReport:
    """Compare every analytic parameter/input gradient against central finite
    differences at a randomly drawn kink-safe point (64-bit arithmetic).

    Relative error is |a - n| / max(|a|, |n|, 1e-5); the floor keeps exact-zero
    gradients (e.g. dropout-masked weights) from dividing FD noise by zero.
    """
    spec = GRADCHECK_PRESETS[model_spec] if isinstance(model_spec, str) else dict(model_spec)

    # Rejection-sample until pre-activations clear the kinks by a margin that
    # the 1e-5 perturbations cannot cross.
    for attempt in range(64):
        net, x_shape, rng = _build_gradcheck_net(spec, seed + 1000 * attempt)
        data_rng = rng.child(7)
        x = data_rng.normal(x_shape, 0.0, 1.0, DTYPE_64)
        labels = np.array([data_rng.randint_below(spec["classes"])
                           for _ in range(x_shape[0])])
        onehot = np.zeros((x_shape[0], spec["classes"]))
        onehot[np.arange(x_shape[0]), labels] = 1.0
        dropout_seed = seed + 31 * attempt

        def loss_fn():
            # Re-seed dropout streams so every evaluation sees the same mask.
            for layer in net.layers:
                if isinstance(layer, Dropout):
                    layer.rng = Rng(dropout_seed)
                if isinstance(layer, MaxPool2D):
                    layer._windows_cache = None
            out = x
            for layer in net.layers:
                if isinstance(layer, MaxPool2D):
                    layer._windows_cache = layer._windows(np.asarray(out))
                out = layer.forward(out, training=True)
            probs = softmax(out)
            return cross_entropy(probs, onehot).mean_loss, probs

        loss, probs = loss_fn()
        if _safety_margin(net) > 1e-3:
            break
    else:
        raise ConfigError("could not find a kink-safe probe point")

    d_logits = softmax_xent_backward(probs, onehot)
    d_input = net.backward(d_logits)
    analytic = {name: g.copy() for name, g in zip(net.param_names(), net.grads())}
    analytic["input"] = d_input

    def numeric_grad(tensor):
        grad = np.zeros_like(tensor)
        flat = tensor.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = loss_fn()
            flat[i] = orig - h
            lm, _ = loss_fn()
            flat[i] = orig
            gflat[i] = (lp - lm) / (2.0 * h)
        return grad

    entries = []
    targets = list(zip(net.param_names(), net.params())) + [("input", x)]
    for name, tensor in targets:
        num = numeric_grad(tensor)
        ana = analytic[name]
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-5)
        err = float((np.abs(ana - num) / denom).max())
        entries.append(GradCheckEntry(name=name, max_rel_error=err, passed=err < tolerance))
    return GradCheckReport(entries=entries, tolerance=tolerance)
