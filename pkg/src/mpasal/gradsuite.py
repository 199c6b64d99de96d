"""Finite-difference sweep over every differentiable op and a tiny network.

Each op family builds a random scalar objective ``sum(op(inputs) * R)``
with a fixed random projection ``R`` and hands its leaf tensors to
:func:`check_gradients`. Everything runs in double precision.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, check_gradients, ops, precision
from .autodiff.gradcheck import RTOL, GradcheckResult

POINTS = 10


def _leaf(rng, *shape, low=-1.0, high=1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, shape), requires_grad=True)


def _project(out: Tensor, r: np.ndarray) -> Tensor:
    return ops.sum(ops.mul(out, Tensor(r)))


def _unary(op, low=-2.0, high=2.0, shape=(3, 4)):
    def build(rng):
        x = _leaf(rng, *shape, low=low, high=high)
        r = rng.normal(size=op(x).shape)
        return lambda: _project(op(x), r), {"x": x}
    return build


def _binary(op, shape=(3, 4)):
    def build(rng):
        a, b = _leaf(rng, *shape), _leaf(rng, *shape)
        r = rng.normal(size=shape)
        return lambda: _project(op(a, b), r), {"a": a, "b": b}
    return build


def _conv(rng):
    stride, pad = (2, 1) if rng.random() < 0.5 else (1, 0)
    x, w, b = _leaf(rng, 1, 2, 5, 5), _leaf(rng, 3, 2, 3, 3), _leaf(rng, 3)
    r = rng.normal(size=ops.conv2d(x, w, b, stride, pad).shape)
    return lambda: _project(ops.conv2d(x, w, b, stride, pad), r), {"x": x, "weight": w, "bias": b}


def _pool(rng):
    x = _leaf(rng, 2, 3, 5, 7)
    bins = (int(rng.integers(1, 6)), int(rng.integers(1, 8)))
    r = rng.normal(size=(2, 3) + bins)
    return lambda: _project(ops.adaptive_avg_pool2d(x, bins), r), {"x": x}


def _upsample(rng):
    x = _leaf(rng, 1, 2, 2, 3)
    target = (int(rng.integers(2, 7)), int(rng.integers(3, 8)))
    r = rng.normal(size=(1, 2) + target)
    return lambda: _project(ops.upsample_nearest(x, target), r), {"x": x}


def _linear(rng):
    x, w, b = _leaf(rng, 4, 5), _leaf(rng, 3, 5), _leaf(rng, 3)
    r = rng.normal(size=(4, 3))
    return lambda: _project(ops.linear(x, w, b), r), {"x": x, "weight": w, "bias": b}


def _scale(rng):
    x, s = _leaf(rng, 3, 4), _leaf(rng, 1)
    r = rng.normal(size=(3, 4))
    return lambda: _project(ops.scale(x, s), r), {"x": x, "s": s}


def _concat(rng):
    a, b = _leaf(rng, 2, 1, 3, 3), _leaf(rng, 2, 3, 3, 3)
    r = rng.normal(size=(2, 4, 3, 3))
    return lambda: _project(ops.concat([a, b], axis=1), r), {"a": a, "b": b}


def _getitem(rng):
    x = _leaf(rng, 4, 5)
    idx = rng.integers(0, 4, 6)  # repeats exercise gradient accumulation
    r = rng.normal(size=(6, 5))
    return lambda: _project(ops.getitem(x, idx), r), {"x": x}


def _network(rng):
    from .backbone import Backbone, BackboneConfig

    cfg = BackboneConfig(stage_channels=(2, 2, 2, 2), embed_dim=4)
    net = Backbone(cfg, rng)
    net.cast(np.float64)
    # move off the zero initialisation so every path carries gradient
    for p in net.parameters().values():
        p.data += rng.normal(0.0, 0.3, p.shape)
    x = Tensor(rng.uniform(-1.0, 1.0, (1, 3, 16, 16)))
    r = rng.normal(size=(1, 4))
    # parameters only; input gradients are covered by the conv2d family
    tensors = net.parameters()
    return lambda: _project(net(x, 1), r), tensors


FAMILIES = {
    "conv2d": _conv,
    "adaptive_avg_pool2d": _pool,
    "upsample_nearest": _upsample,
    "global_avg_pool": _unary(ops.global_avg_pool, shape=(2, 3, 4, 4)),
    "linear": _linear,
    "relu": _unary(ops.relu),
    "sigmoid": _unary(ops.sigmoid, -4.0, 4.0),
    "log": _unary(ops.log, 0.2, 3.0),
    "clamp": _unary(lambda x: ops.clamp(x, -0.5, 0.5)),
    "softmax": _unary(lambda x: ops.softmax(x, axis=1)),
    "log_sum_exp": _unary(lambda x: ops.log_sum_exp(x, axis=1)),
    "add": _binary(ops.add),
    "sub": _binary(ops.sub),
    "mul": _binary(ops.mul),
    "neg": _unary(ops.neg),
    "scale": _scale,
    "sum": _unary(lambda x: ops.sum(x, axis=0)),
    "mean": _unary(lambda x: ops.mean(x, axis=1)),
    "reshape": _unary(lambda x: ops.reshape(x, (2, 6))),
    "getitem": _getitem,
    "concat": _concat,
    "network": _network,
}


@dataclass
class SuiteReport:
    results: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results.values())

    @property
    def failures(self) -> list[str]:
        return [name for name, r in self.results.items() if not r.passed]

    def lines(self) -> list[str]:
        out = []
        for name, r in self.results.items():
            status = "ok  " if r.passed else "FAIL"
            out.append(f"{status} {name:<20s} max_rel_err={r.max_error:.3e} "
                       f"checked={r.checked} skipped={r.skipped}")
        return out


def gradcheck_suite(seed: int = 0, points: int = POINTS, families=None, verbose: bool = True) -> SuiteReport:
    """Check every op family at ``points`` random draws; print one line per family."""
    names = list(FAMILIES) if families is None else list(families)
    report = SuiteReport()
    with precision(np.float64):
        for fi, name in enumerate(names):
            total = GradcheckResult()
            for point in range(points):
                rng = np.random.default_rng([seed, fi, point])
                fn, tensors = FAMILIES[name](rng)
                total.merge(check_gradients(fn, tensors))
            report.results[name] = total
            if verbose:
                print(report.lines()[-1], flush=True)
    if verbose:
        print(f"{'PASS' if report.passed else 'FAIL'}: {len(names)} families, threshold {RTOL:g}")
    return report
