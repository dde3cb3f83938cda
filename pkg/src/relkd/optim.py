"""SGD-with-momentum and Adam, operating in place on parameter lists.

State buffers mirror the parameter shapes exactly and are created lazily on
the first step. The learning rate is a plain mutable attribute so milestone
schedules can rescale it between epochs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class OptimizerSpec:
    """Serializable optimizer choice + hyperparameters."""

    kind: str  # "sgd" | "adam"
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer kind {self.kind!r}")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")

    def build(self) -> "Optimizer":
        if self.kind == "sgd":
            return SGD(self.lr, self.momentum, self.weight_decay)
        return Adam(self.lr, self.beta1, self.beta2, self.eps)


class Optimizer:
    """Base class: subclasses implement update(param, grad, slot)."""

    def __init__(self, lr: float):
        self.lr = lr
        self._slots: list | None = None

    def step(self, params: list, grads: list) -> None:
        """Update every parameter in place from its gradient."""
        if len(params) != len(grads):
            raise DimensionError(
                f"{len(params)} params vs {len(grads)} grads")
        if self._slots is None:
            self._slots = [self._init_slot(p) for p in params]
        if len(self._slots) != len(params):
            raise DimensionError("optimizer state does not match parameter list")
        for p, g, slot in zip(params, grads, self._slots):
            if p.shape != g.shape:
                raise DimensionError(
                    f"param shape {p.shape} vs grad shape {g.shape}")
            self._update(p, g, slot)

    def _init_slot(self, param):
        raise NotImplementedError

    def _update(self, param, grad, slot):
        raise NotImplementedError


class SGD(Optimizer):
    """v <- momentum*v + grad + weight_decay*param; param <- param - lr*v."""

    def __init__(self, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        super().__init__(lr)
        self.momentum = momentum
        self.weight_decay = weight_decay

    def _init_slot(self, param):
        return np.zeros_like(param)

    def _update(self, param, grad, velocity):
        g = grad if self.weight_decay == 0 else grad + self.weight_decay * param
        velocity *= self.momentum
        velocity += g
        param -= self.lr * velocity


class Adam(Optimizer):
    """Bias-corrected first/second moment updates."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        super().__init__(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0

    def _init_slot(self, param):
        return (np.zeros_like(param), np.zeros_like(param))

    def step(self, params, grads):
        self.t += 1
        super().step(params, grads)

    def _update(self, param, grad, slot):
        m, v = slot
        m *= self.beta1
        m += (1.0 - self.beta1) * grad
        v *= self.beta2
        v += (1.0 - self.beta2) * grad * grad
        m_hat = m / (1.0 - self.beta1 ** self.t)
        v_hat = v / (1.0 - self.beta2 ** self.t)
        param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
