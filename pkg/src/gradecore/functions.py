"""Activations and loss: ReLU, stabilized softmax, cross-entropy, fused gradient."""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError

LOG_CLAMP = 1e-12


@dataclass
class LossValue:
    mean_loss: float
    per_sample: np.ndarray | None = None


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x, d_out):
    """Pass d_out where x > 0; subgradient at the kink is 0."""
    return np.where(x > 0, d_out, 0.0)


def softmax(logits):
    """Row-wise softmax of (B, C) logits, stabilized by max subtraction."""
    logits = np.asarray(logits)
    if logits.ndim != 2 or logits.shape[1] < 1:
        raise ShapeError(f"softmax expects (B, C) logits, got {logits.shape}")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_onehot(onehot, probs):
    onehot = np.asarray(onehot)
    probs = np.asarray(probs)
    if onehot.shape != probs.shape:
        raise ShapeError(f"one-hot shape {onehot.shape} != probs shape {probs.shape}")
    is_binary = np.all((onehot == 0) | (onehot == 1))
    one_per_row = np.all(onehot.sum(axis=1) == 1)
    if not (is_binary and one_per_row):
        raise ValidationError("targets must be one-hot rows (exactly one 1, rest 0)")
    return onehot


def cross_entropy(probs, onehot) -> LossValue:
    """Mean -log p(true class), with p clamped to [1e-12, 1]."""
    probs = np.asarray(probs)
    onehot = _check_onehot(onehot, probs)
    p_true = (probs * onehot).sum(axis=1)
    per_sample = -np.log(np.clip(p_true, LOG_CLAMP, 1.0))
    return LossValue(mean_loss=float(per_sample.mean()), per_sample=per_sample)


def softmax_xent_backward(probs, onehot):
    """Gradient of mean cross-entropy w.r.t. the logits: (probs - onehot) / B."""
    probs = np.asarray(probs)
    onehot = _check_onehot(onehot, probs)
    return (probs - onehot) / probs.shape[0]
