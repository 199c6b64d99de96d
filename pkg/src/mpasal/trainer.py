"""Two-stream training, evaluation, score fusion and report emission."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import SGD, Adam, Tensor, msat, ops
from .autoencoder import LabelAutoencoder
from .backbone import Backbone, BackboneConfig, calibrate
from .data import (DatasetManifest, SegmentSampler, VideoClip, build_snippet_batch, load_clips)
from .sal import Classifier, Discriminator, LossReport, sal_step

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "epoch", "L_cls", "L_adv_d", "L_adv_g", "L_total")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _parse_bins(text: str) -> tuple[tuple[int, int], ...]:
    out = []
    for tok in text.split(","):
        tok = tok.strip().lower()
        if not tok:
            continue
        h, _, w = tok.partition("x")
        out.append((int(h), int(w or h)))
    return tuple(out)


@dataclass
class TrainConfig:
    stream: str = "spatial"
    batch_size: int = 16
    lr: float = 0.01
    momentum: float = 0.9
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 30
    epochs: int = 30
    grad_clip: float = 20.0
    num_segments: int = 3
    lambda_adv: float = 1.0
    seed: int = 0
    encoder: str = ""
    stage_channels: tuple = (8, 16, 32, 64)
    embed_dim: int = 64
    mpa_bins: tuple = ((1, 1), (2, 2), (4, 4))
    residual_attention: bool = False
    use_mpa: bool = True
    use_sal: bool = True
    adam_lr_d: float = 1e-4
    eps_clamp: float = 1e-7
    calibrate: bool = True
    calibration_clips: int = 64

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.mpa_bins = tuple((int(b[0]), int(b[1])) for b in self.mpa_bins)
        self.validate()

    def validate(self) -> None:
        if self.stream not in ("spatial", "temporal"):
            raise ValueError(f"stream must be spatial or temporal, got {self.stream!r}")
        for key in ("batch_size", "epochs", "num_segments", "lr_decay_every", "embed_dim",
                    "calibration_clips"):
            if getattr(self, key) < 1:
                raise ValueError(f"{key} must be >= 1, got {getattr(self, key)}")
        for key in ("lr", "adam_lr_d", "grad_clip", "lr_decay_factor", "lambda_adv", "eps_clamp"):
            if getattr(self, key) < 0:
                raise ValueError(f"{key} must be non-negative, got {getattr(self, key)}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")

    @classmethod
    def paper(cls, stream: str, **overrides) -> "TrainConfig":
        """Published full-scale schedule: batch 64, lr 1e-3 decayed x0.1 every 40 epochs."""
        base = dict(stream=stream, batch_size=64, lr=0.001, lr_decay_every=40,
                    epochs=80 if stream == "spatial" else 120,
                    grad_clip=20.0 if stream == "spatial" else 40.0)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def desk(cls, stream: str, **overrides) -> "TrainConfig":
        """Small-scale defaults for synthetic data on one CPU core."""
        base = dict(stream=stream, epochs=30 if stream == "spatial" else 40,
                    grad_clip=20.0 if stream == "spatial" else 40.0)
        base.update(overrides)
        return cls(**base)

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(self.stage_channels, self.embed_dim, self.mpa_bins,
                              self.residual_attention, self.use_mpa)

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay_factor ** (epoch // self.lr_decay_every)

    # -- flat key=value text --------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "stage_channels":
                v = ",".join(map(str, v))
            elif f.name == "mpa_bins":
                v = ",".join(f"{h}x{w}" for h, w in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        defaults = cls()
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if not sep:
                raise ValueError(f"config line {lineno}: expected key=value, got {raw!r}")
            if key not in types:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            if key == "stage_channels":
                values[key] = _parse_ints(val)
            elif key == "mpa_bins":
                values[key] = _parse_bins(val)
            else:
                kind = type(getattr(defaults, key))
                values[key] = _parse_bool(val) if kind is bool else kind(val)
        return cls(**values)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text())


# ---------------------------------------------------------------------------
# models and checkpoints
# ---------------------------------------------------------------------------

@dataclass
class StreamModel:
    backbone: Backbone
    classifier: Classifier
    disc: Discriminator | None
    num_classes: int

    @classmethod
    def build(cls, config: TrainConfig, num_classes: int) -> "StreamModel":
        backbone = Backbone(config.backbone_config(), np.random.default_rng([config.seed, 1]))
        classifier = Classifier(config.embed_dim, num_classes, np.random.default_rng([config.seed, 2]))
        disc = (Discriminator(config.embed_dim, np.random.default_rng([config.seed, 3]))
                if config.use_sal else None)
        return cls(backbone, classifier, disc, num_classes)

    def generator_params(self) -> dict:
        params = {f"g.{k}": p for k, p in self.backbone.named_parameters()}
        params.update({f"c.{k}": p for k, p in self.classifier.named_parameters()})
        return params

    def disc_params(self) -> dict:
        return {f"d.{k}": p for k, p in self.disc.named_parameters()} if self.disc else {}

    def all_params(self) -> dict:
        return {**self.generator_params(), **self.disc_params()}

    def logits(self, batch) -> Tensor:
        return self.classifier(self.backbone(Tensor(batch.data), batch.num_segments))


@dataclass
class Checkpoint:
    config: TrainConfig
    num_classes: int
    epoch: int
    params: dict
    optimizer: dict = field(default_factory=dict)
    loss_log: list = field(default_factory=list)

    def model(self) -> StreamModel:
        model = StreamModel.build(self.config, self.num_classes)
        for name, p in model.all_params().items():
            p.data = np.array(self.params[name], dtype=np.float32)
        return model

    def save(self, path) -> None:
        path = Path(path)
        tensors = {f"model/{k}": v for k, v in self.params.items()}
        tensors.update({f"opt/{k}": v for k, v in self.optimizer.items()})
        msat.save_checkpoint(path, tensors)
        meta = {"config": self.config.to_text(), "num_classes": self.num_classes,
                "epoch": self.epoch, "stream": self.config.stream}
        Path(f"{path}.json").write_text(json.dumps(meta, indent=1))
        write_loss_log(Path(f"{path}.losses.csv"), self.loss_log)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        meta = json.loads(Path(f"{path}.json").read_text())
        tensors = msat.load_checkpoint(path)
        params = {k[6:]: v for k, v in tensors.items() if k.startswith("model/")}
        opt = {k[4:]: v for k, v in tensors.items() if k.startswith("opt/")}
        losses = Path(f"{path}.losses.csv")
        return cls(TrainConfig.from_text(meta["config"]), int(meta["num_classes"]),
                   int(meta["epoch"]), params, opt, read_loss_log(losses) if losses.exists() else [])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _clips_of(data) -> tuple[list[VideoClip], int]:
    if isinstance(data, DatasetManifest):
        return load_clips(data), data.num_classes
    clips, k = data
    return list(clips), int(k)


def train_stream(data, config: TrainConfig, encoder: LabelAutoencoder | None = None,
                 out: str | Path | None = None, resume: Checkpoint | None = None,
                 epochs: int | None = None) -> Checkpoint:
    """Train one stream with alternating adversarial updates.

    ``data`` is a manifest or a ``(clips, num_classes)`` pair. ``epochs``
    caps the number of epochs run in this call (for staged training); the
    schedule still follows ``config``. When ``out`` is given a checkpoint
    is written after every epoch.
    """
    clips, k = _clips_of(data)
    if config.use_sal:
        if encoder is None and config.encoder:
            encoder = LabelAutoencoder.load(config.encoder)
        if encoder is None:
            raise ValueError("adversarial training needs a frozen semantic encoder")
        if encoder.num_classes != k:
            raise ValueError(f"encoder covers {encoder.num_classes} classes, dataset has {k}")
        if encoder.code_dim != config.embed_dim:
            raise ValueError(f"encoder code dim {encoder.code_dim} != embed_dim {config.embed_dim}")

    model = StreamModel.build(config, k)
    if config.calibrate and resume is None:
        pick = np.random.default_rng([config.seed, 4]).permutation(len(clips))[:config.calibration_clips]
        batch = build_snippet_batch([clips[i] for i in sorted(pick)],
                                    SegmentSampler(config.num_segments, "test"), config.stream)
        calibrate(model.backbone, batch.data, config.num_segments)
    opt_g = SGD(model.generator_params(), config.lr, config.momentum)
    opt_d = Adam(model.disc_params(), config.adam_lr_d) if model.disc else None
    start, loss_log = 0, []
    if resume is not None:
        if resume.num_classes != k:
            raise ValueError(f"checkpoint has {resume.num_classes} classes, dataset has {k}")
        for name, p in model.all_params().items():
            p.data = np.array(resume.params[name], dtype=np.float32)
        opt_g.load_state_dict({n[2:]: v for n, v in resume.optimizer.items() if n.startswith("g/")})
        if opt_d is not None:
            opt_d.load_state_dict({n[2:]: v for n, v in resume.optimizer.items() if n.startswith("d/")})
        start, loss_log = resume.epoch, list(resume.loss_log)

    stop = config.epochs if epochs is None else min(config.epochs, start + epochs)
    sampler = SegmentSampler(config.num_segments, "train")
    step = len(loss_log)
    for epoch in range(start, stop):
        opt_g.lr = config.lr_at(epoch)
        rng = np.random.default_rng([config.seed, 1000 + epoch])
        order = rng.permutation(len(clips))
        for lo in range(0, len(order), config.batch_size):
            chunk = [clips[i] for i in order[lo:lo + config.batch_size]]
            batch = build_snippet_batch(chunk, sampler, config.stream, rng)
            report = sal_step(batch, model.backbone, model.classifier, model.disc, encoder,
                              opt_g, opt_d, config.lambda_adv, config.grad_clip, config.eps_clamp)
            loss_log.append((step, epoch) + report.as_row())
            step += 1
        epoch_rows = [r for r in loss_log if r[1] == epoch]
        log.info("%s epoch %d lr=%.2e L_cls=%.4f L_adv_g=%.4f", config.stream, epoch, opt_g.lr,
                 np.mean([r[2] for r in epoch_rows]), np.mean([r[4] for r in epoch_rows]))
        ckpt = _snapshot(model, opt_g, opt_d, config, k, epoch + 1, loss_log)
        if out is not None:
            ckpt.save(out)
    if start >= stop:
        ckpt = _snapshot(model, opt_g, opt_d, config, k, start, loss_log)
    return ckpt


def _snapshot(model, opt_g, opt_d, config, k, epoch, loss_log) -> Checkpoint:
    params = {n: p.data.copy() for n, p in model.all_params().items()}
    opt = {f"g/{n}": v.copy() for n, v in opt_g.state_dict().items()}
    if opt_d is not None:
        opt.update({f"d/{n}": np.array(v, copy=True) for n, v in opt_d.state_dict().items()})
    return Checkpoint(config, k, epoch, params, opt, list(loss_log))


def write_loss_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOSS_COLUMNS)
        for r in rows:
            w.writerow([int(r[0]), int(r[1])] + [repr(float(v)) for v in r[2:]])


def read_loss_log(path) -> list[tuple]:
    with open(path) as fh:
        rows = list(csv.reader(fh))[1:]
    return [(int(r[0]), int(r[1])) + tuple(float(v) for v in r[2:]) for r in rows]


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class Metrics:
    confusion: np.ndarray  # rows = truth, columns = prediction
    loss_curves: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, truth, pred, num_classes: int, **kw) -> "Metrics":
        truth = np.asarray(truth, dtype=np.int64)
        pred = np.asarray(pred, dtype=np.int64)
        cm = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(cm, (truth, pred), 1)
        return cls(cm, **kw)

    @property
    def num_classes(self) -> int:
        return self.confusion.shape[0]

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.total) if self.total else 0.0

    @property
    def per_class_accuracy(self) -> np.ndarray:
        rows = self.confusion.sum(axis=1)
        return np.divide(np.diag(self.confusion), rows, out=np.zeros(len(rows)), where=rows > 0)

    def summary(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "num_clips": self.total,
            "num_classes": self.num_classes,
            "per_class_accuracy": self.per_class_accuracy.tolist(),
        }


def stream_probabilities(ckpt: Checkpoint, data, chunk: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Softmax class scores ``[N, K]`` under deterministic centre-snippet sampling."""
    clips, k = _clips_of(data)
    if k != ckpt.num_classes:
        raise ValueError(f"checkpoint predicts {ckpt.num_classes} classes, dataset has {k}")
    model = ckpt.model()
    sampler = SegmentSampler(ckpt.config.num_segments, "test")
    probs = []
    for lo in range(0, len(clips), chunk):
        batch = build_snippet_batch(clips[lo:lo + chunk], sampler, ckpt.config.stream)
        probs.append(ops.softmax(model.logits(batch), axis=1).data)
    labels = np.array([c.label for c in clips], dtype=np.int64)
    return np.concatenate(probs), labels


def evaluate(ckpt: Checkpoint, data) -> Metrics:
    probs, labels = stream_probabilities(ckpt, data)
    curves = {}
    if ckpt.loss_log:
        arr = np.array([r[2:] for r in ckpt.loss_log])
        curves = {name: arr[:, i].tolist() for i, name in enumerate(LOSS_COLUMNS[2:])}
    return Metrics.from_predictions(labels, probs.argmax(axis=1), ckpt.num_classes,
                                    loss_curves=curves)


def fuse_probabilities(p_spatial: np.ndarray, p_temporal: np.ndarray,
                       weights: Sequence[float] = (1.0, 1.0)) -> np.ndarray:
    ws, wt = (float(w) for w in weights)
    if ws < 0 or wt < 0 or ws + wt == 0:
        raise ValueError(f"fusion weights must be non-negative and not both zero, got {(ws, wt)}")
    if p_spatial.shape != p_temporal.shape:
        raise ValueError(f"stream score shapes differ: {p_spatial.shape} vs {p_temporal.shape}")
    return ws * p_spatial + wt * p_temporal


def fuse_streams(spatial: Checkpoint, temporal: Checkpoint, data,
                 weights: Sequence[float] = (1.0, 1.0)) -> Metrics:
    """Weighted sum of the two streams' softmax scores, then argmax."""
    if spatial.num_classes != temporal.num_classes:
        raise ValueError(f"class counts differ: spatial {spatial.num_classes}, "
                         f"temporal {temporal.num_classes}")
    if isinstance(data, DatasetManifest):
        data = (load_clips(data), data.num_classes)
    ps, labels = stream_probabilities(spatial, data)
    pt, _ = stream_probabilities(temporal, data)
    fused = fuse_probabilities(ps, pt, weights)
    return Metrics.from_predictions(labels, fused.argmax(axis=1), spatial.num_classes)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def row_normalize(cm: np.ndarray) -> np.ndarray:
    rows = cm.sum(axis=1, keepdims=True).astype(np.float64)
    return np.divide(cm, rows, out=np.zeros(cm.shape), where=rows > 0)


def write_confusion_csv(path, cm: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(range(cm.shape[1]))
        w.writerows(cm.tolist())


def read_confusion_csv(path) -> np.ndarray:
    with open(path) as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[int(v) for v in r] for r in rows], dtype=np.int64)


def write_ppm(path, cm: np.ndarray) -> None:
    """Binary PPM, one pixel per cell, grey level = row-normalized count."""
    grey = np.round(row_normalize(cm) * 255).astype(np.uint8)
    rgb = np.repeat(grey[:, :, None], 3, axis=2)
    h, w = grey.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def emit_reports(metrics: Metrics, out_dir, loss_log=None) -> dict:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    paths = {"confusion_csv": out / "confusion.csv", "metrics_json": out / "metrics.json",
             "confusion_ppm": out / "confusion.ppm"}
    write_confusion_csv(paths["confusion_csv"], metrics.confusion)
    paths["metrics_json"].write_text(json.dumps(metrics.summary(), indent=1))
    write_ppm(paths["confusion_ppm"], metrics.confusion)
    if loss_log:
        paths["loss_log"] = out / "loss_log.csv"
        write_loss_log(paths["loss_log"], loss_log)
    return paths
