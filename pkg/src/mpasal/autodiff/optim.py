"""First-order optimizers and gradient clipping.

Optimizers take an ordered ``{name: Tensor}`` mapping so their state can be
checkpointed under stable names.
"""
from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

from .tensor import Tensor


def _check_rate(value: float, what: str) -> None:
    if value < 0 or not np.isfinite(value):
        raise ValueError(f"{what} must be a non-negative finite number, got {value}")


class Optimizer:
    def __init__(self, params: Mapping[str, Tensor], lr: float):
        _check_rate(lr, "lr")
        self.params = dict(params)
        self.lr = float(lr)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    """SGD with classical momentum: ``v <- mu*v + g``, ``p <- p - lr*v``."""

    def __init__(self, params, lr: float, momentum: float = 0.0):
        super().__init__(params, lr)
        if not 0 <= momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
        self.momentum = float(momentum)
        self.velocity = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        _check_rate(self.lr, "lr")
        mu = self.momentum
        for k, p in self.params.items():
            if p.grad is None:
                continue
            v = self.velocity[k]
            v *= p.data.dtype.type(mu)
            v += p.grad
            p.data -= p.data.dtype.type(self.lr) * v

    def state_dict(self):
        return {f"velocity/{k}": v for k, v in self.velocity.items()}

    def load_state_dict(self, state):
        for k in self.velocity:
            self.velocity[k] = np.array(state[f"velocity/{k}"], dtype=self.velocity[k].dtype)


class Adam(Optimizer):
    """Adam with bias-corrected moment estimates."""

    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.t = 0

    def step(self) -> None:
        _check_rate(self.lr, "lr")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * p.grad
            v *= b2
            v += (1 - b2) * p.grad * p.grad
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.data.dtype)

    def state_dict(self):
        state = {f"m/{k}": a for k, a in self.m.items()}
        state.update({f"v/{k}": a for k, a in self.v.items()})
        state["step"] = np.array([self.t], dtype=np.float32)
        return state

    def load_state_dict(self, state):
        for k in self.m:
            self.m[k] = np.array(state[f"m/{k}"], dtype=self.m[k].dtype)
            self.v[k] = np.array(state[f"v/{k}"], dtype=self.v[k].dtype)
        self.t = int(np.asarray(state["step"]).reshape(-1)[0])


def global_grad_norm(params: Iterable[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def clip_gradients(params: Iterable[Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their global l2 norm is at most ``max_norm``.

    Returns the norm measured before clipping.
    """
    _check_rate(max_norm, "max_norm")
    params = list(params)
    norm = global_grad_norm(params)
    # slack keeps a second call from rescaling by a rounding-level factor
    if norm > max_norm * (1 + 1e-6):
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= p.grad.dtype.type(factor)
    return norm
