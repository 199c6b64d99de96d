"""Four-stage convolutional backbone with multi-scale pyramid attention.

Each stage halves the resolution. An attention layer at the end of every
stage pools the stage's feature map over a pyramid of grid sizes, brings
each pooled branch back to full resolution, weights the branches with
learned scale weights, merges them with a 1x1 convolution and squashes the
result into per-element gates in (0, 1). The gated ("refined") map is the
stage output and feeds the next stage.

A clip's representation is built per stage: global-average-pool the refined
map, project it to a shared width ``D``, average over the clip's snippets,
and finally mix the four stage vectors with learned stage weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Module, Parameter, Tensor, ops
from .layers import Conv2d, Linear

NUM_STAGES = 4


@dataclass
class BackboneConfig:
    stage_channels: tuple[int, ...] = (8, 16, 32, 64)
    embed_dim: int = 64
    mpa_bins: tuple[tuple[int, int], ...] = ((1, 1), (2, 2), (4, 4))
    residual_attention: bool = False
    use_mpa: bool = True
    in_channels: int = 3

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.mpa_bins = tuple((int(b[0]), int(b[1])) for b in self.mpa_bins)
        if len(self.stage_channels) != NUM_STAGES:
            raise ValueError(f"need {NUM_STAGES} stage widths, got {self.stage_channels}")
        if not self.mpa_bins:
            raise ValueError("mpa_bins must name at least one pyramid scale")


class Stage(Module):
    """3x3 stride-2 conv + relu, then 3x3 stride-1 conv + relu."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        self.down = Conv2d(in_channels, out_channels, 3, rng, stride=2, padding=1)
        self.conv = Conv2d(out_channels, out_channels, 3, rng, stride=1, padding=1)

    def __call__(self, x: Tensor) -> Tensor:
        return stage_forward(x, self)


def stage_forward(x: Tensor, stage: Stage) -> Tensor:
    h, w = x.shape[2:]
    if h % 2 or w % 2:
        raise ValueError(f"stage input must have even spatial extents, got {(h, w)}")
    return ops.relu(stage.conv(ops.relu(stage.down(x))))


class PyramidAttention(Module):
    """Pyramid attention over one stage's feature maps.

    ``beta`` holds one logit per pyramid scale; ``merge`` is the 1x1
    convolution taking the concatenated branches back to ``channels``.
    Bins larger than the feature map are clipped to its extent.
    """

    def __init__(self, channels: int, bins, rng: np.random.Generator, residual: bool = False):
        self.bins = tuple(tuple(b) for b in bins)
        self.beta = Parameter(np.zeros(len(self.bins)))
        self.merge = Conv2d(len(self.bins) * channels, channels, 1, rng, zero=True)
        self.residual = residual

    def scale_weights(self) -> Tensor:
        return ops.softmax(self.beta, axis=0)

    def __call__(self, f: Tensor) -> tuple[Tensor, Tensor]:
        return mpa_forward(f, self)


def effective_bins(bins, h: int, w: int):
    return [(min(bh, h), min(bw, w)) for bh, bw in bins]


def mpa_forward(f: Tensor, mpa: PyramidAttention, clip_bins: bool = True) -> tuple[Tensor, Tensor]:
    """Return ``(attention, refined)``, both shaped like ``f``."""
    h, w = f.shape[2:]
    bins = effective_bins(mpa.bins, h, w) if clip_bins else list(mpa.bins)
    weights = mpa.scale_weights()
    branches = []
    for t, b in enumerate(bins):
        pooled = ops.adaptive_avg_pool2d(f, b)
        branches.append(ops.scale(ops.upsample_nearest(pooled, (h, w)), weights[t]))
    attn = ops.sigmoid(mpa.merge(ops.concat(branches, axis=1)))
    gate = ops.add(attn, 1.0) if mpa.residual else attn
    return attn, ops.mul(gate, f)


def consensus(vectors: Tensor, num_segments: int) -> Tensor:
    """Average ``[N*n, D]`` snippet vectors into ``[N, D]`` clip vectors."""
    if num_segments < 1:
        raise ValueError("consensus needs at least one snippet per clip")
    rows, dim = vectors.shape
    if rows == 0 or rows % num_segments:
        raise ValueError(f"{rows} snippet rows do not split into groups of {num_segments}")
    return ops.mean(ops.reshape(vectors, (rows // num_segments, num_segments, dim)), axis=1)


def fuse_stages(embeddings, alpha: Tensor) -> Tensor:
    """Convex combination ``sum_i softmax(alpha)_i * e_i`` of equally shaped embeddings."""
    embeddings = list(embeddings)
    if len(embeddings) != alpha.shape[0]:
        raise ValueError(f"{len(embeddings)} embeddings but {alpha.shape[0]} stage weights")
    for e in embeddings[1:]:
        if e.shape != embeddings[0].shape:
            raise ValueError(f"stage embedding shapes differ: {embeddings[0].shape} vs {e.shape}")
    weights = ops.softmax(alpha, axis=0)
    out = ops.scale(embeddings[0], weights[0])
    for i in range(1, len(embeddings)):
        out = ops.add(out, ops.scale(embeddings[i], weights[i]))
    return out


@dataclass
class ForwardTrace:
    """Intermediate tensors of one forward pass, kept for inspection."""
    raw: list = field(default_factory=list)
    attention: list = field(default_factory=list)
    refined: list = field(default_factory=list)
    stage_embeddings: list = field(default_factory=list)


class Backbone(Module):
    """Snippets ``[N*n, C, H, W]`` to clip representations ``[N, D]``."""

    def __init__(self, config: BackboneConfig, rng: np.random.Generator):
        self.config = config
        chans = (config.in_channels,) + config.stage_channels
        self.stages = [Stage(chans[i], chans[i + 1], rng) for i in range(NUM_STAGES)]
        self.attention = ([PyramidAttention(c, config.mpa_bins, rng, config.residual_attention)
                           for c in config.stage_channels] if config.use_mpa else [])
        self.embed = [Linear(c, config.embed_dim, rng, gain=1.0) for c in config.stage_channels]
        self.alpha = Parameter(np.zeros(NUM_STAGES))

    def __call__(self, x: Tensor, num_segments: int, trace: ForwardTrace | None = None) -> Tensor:
        return network_forward(self, x, num_segments, trace)


def network_forward(net: Backbone, x, num_segments: int, trace: ForwardTrace | None = None) -> Tensor:
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.shape[0] % num_segments:
        raise ValueError(f"batch of {x.shape[0]} snippets not divisible by {num_segments} segments")
    h, w = x.shape[2:]
    if h % 2 ** NUM_STAGES or w % 2 ** NUM_STAGES:
        raise ValueError(f"input extents {(h, w)} must be divisible by {2 ** NUM_STAGES}")
    per_stage = []
    feat = x
    for i, stage in enumerate(net.stages):
        raw = stage(feat)
        if net.attention:
            attn, feat = net.attention[i](raw)
        else:
            attn, feat = None, raw
        emb = consensus(net.embed[i](ops.global_avg_pool(feat)), num_segments)
        per_stage.append(emb)
        if trace is not None:
            trace.raw.append(raw)
            trace.attention.append(attn)
            trace.refined.append(feat)
            trace.stage_embeddings.append(emb)
    return fuse_stages(per_stage, net.alpha)


def calibrate(net: Backbone, x, num_segments: int, target: float = 1.0) -> list[float]:
    """Data-dependent init: rescale each stage conv and embedding so its output std is ``target``.

    Layers are visited in forward order on the batch ``x``; biases are left
    alone (they are zero at construction, so the rescaling is exact).
    Returns the applied factors.
    """
    x = x.data if isinstance(x, Tensor) else np.asarray(x)
    feat = Tensor(x)
    factors = []

    def fit(layer, inp):
        std = float(layer(inp).data.std())
        factor = target / std if std > 0 else 1.0
        layer.weight.data *= layer.weight.data.dtype.type(factor)
        factors.append(factor)
        return layer(inp).detach()

    for i, stage in enumerate(net.stages):
        h = ops.relu(fit(stage.down, feat))
        raw = ops.relu(fit(stage.conv, h))
        feat = net.attention[i](raw)[1].detach() if net.attention else raw
        fit(net.embed[i], ops.global_avg_pool(feat))
    return factors
