"""Central finite-difference oracle for analytic gradients.

Evaluation happens in double precision. Perturbations that flip a relu or
clamp decision relative to the unperturbed point straddle a kink, where the
finite difference is not an estimate of the derivative; those coordinates
are skipped and counted.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import ops
from .tensor import Tensor, backward

EPS = 1e-3
RTOL = 1e-4
ATOL = 1e-6


@contextlib.contextmanager
def _record_kinks():
    log: list[bytes] = []
    ops._KINK_LOG.append(log)
    try:
        yield log
    finally:
        ops._KINK_LOG.pop()


def relative_error(analytic: np.ndarray, numeric: np.ndarray,
                   rtol: float = RTOL, atol: float = ATOL) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, atol/rtol)``.

    A value ``<= rtol`` means the pair agrees to relative ``rtol`` or to
    absolute ``atol``, whichever is looser.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol / rtol)
    return np.abs(analytic - numeric) / denom


@dataclass
class GradcheckResult:
    max_error: float = 0.0
    checked: int = 0
    skipped: int = 0
    per_tensor: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_error <= RTOL and self.checked > 0

    def merge(self, other: "GradcheckResult") -> "GradcheckResult":
        self.max_error = max(self.max_error, other.max_error)
        self.checked += other.checked
        self.skipped += other.skipped
        for k, v in other.per_tensor.items():
            self.per_tensor[k] = max(self.per_tensor.get(k, 0.0), v)
        return self


def _eval(fn: Callable[[], Tensor]) -> tuple[float, list[bytes]]:
    with _record_kinks() as kinks:
        out = fn()
    if out.size != 1:
        raise ValueError(f"gradcheck target must be scalar, got shape {out.shape}")
    return float(out.data.reshape(())), kinks


def numerical_gradient(fn: Callable[[], Tensor], tensor: Tensor, eps: float = EPS):
    """Central differences of ``fn`` w.r.t. every element of ``tensor``.

    Returns ``(grad, valid_mask)``; invalid entries straddle a kink.
    """
    _, base = _eval(fn)
    flat = tensor.data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    valid = np.ones(flat.shape, dtype=bool)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp, kp = _eval(fn)
        flat[i] = orig - eps
        fm, km = _eval(fn)
        flat[i] = orig
        grad[i] = (fp - fm) / (2 * eps)
        valid[i] = kp == base and km == base
    return grad.reshape(tensor.shape), valid.reshape(tensor.shape)


def check_gradients(fn: Callable[[], Tensor], tensors: Mapping[str, Tensor],
                    eps: float = EPS, rtol: float = RTOL, atol: float = ATOL) -> GradcheckResult:
    """Compare ``backward`` against central differences for each named tensor.

    ``fn`` rebuilds the scalar output from the current tensor values; tensors
    should be float64 for the comparison to be meaningful.
    """
    for t in tensors.values():
        t.zero_grad()
    out = fn()
    backward(out)
    result = GradcheckResult()
    for name, t in tensors.items():
        analytic = t.grad.astype(np.float64).copy()
        numeric, valid = numerical_gradient(fn, t, eps)
        err = relative_error(analytic, numeric, rtol, atol)[valid]
        worst = float(err.max()) if err.size else 0.0
        result.per_tensor[name] = worst
        result.max_error = max(result.max_error, worst)
        result.checked += int(valid.sum())
        result.skipped += int((~valid).sum())
    return result
