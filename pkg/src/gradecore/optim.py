"""Parameter updates: plain SGD for the MLP run, Adam for the CNN run.

Updates are applied in place, in the order the parameter list is given, so a
training loop that always passes net.params() gets a deterministic update
order. Both optimizers are pure arithmetic: same inputs, same result.
"""

import numpy as np

from .errors import ConfigError, ShapeError


def _check_pairs(params, grads):
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params vs {len(grads)} grads")
    for p, g in zip(params, grads):
        if g is None or np.shape(p) != np.shape(g):
            raise ShapeError(
                f"param/grad shape mismatch: {np.shape(p)} vs {None if g is None else np.shape(g)}"
            )


class Sgd:
    def __init__(self, learning_rate=0.001):
        # lr = 0 is allowed as a degenerate no-op so "zero learning rate
        # leaves the weights at initialization" is expressible in tests.
        if learning_rate < 0:
            raise ConfigError(f"learning rate must be non-negative, got {learning_rate}")
        self.learning_rate = float(learning_rate)

    def step(self, params, grads):
        # p <- p - lr * g
        _check_pairs(params, grads)
        for p, g in zip(params, grads):
            p -= self.learning_rate * g
        return params


class Adam:
    """Bias-corrected first/second moment update:

        m <- b1*m + (1-b1)*g        m_hat = m / (1 - b1^t)
        v <- b2*v + (1-b2)*g^2      v_hat = v / (1 - b2^t)
        p <- p - lr * m_hat / (sqrt(v_hat) + eps)
    """

    def __init__(self, learning_rate=0.01, beta1=0.9, beta2=0.999, epsilon=1e-8):
        if learning_rate < 0:
            raise ConfigError(f"learning rate must be non-negative, got {learning_rate}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ConfigError(f"betas must be in [0, 1), got {beta1}, {beta2}")
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        _check_pairs(params, grads)
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        elif len(self.m) != len(params):
            raise ShapeError("parameter count changed between Adam steps")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / c1
            v_hat = self.v[i] / c2
            p -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)
        return params
