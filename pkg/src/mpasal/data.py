"""Synthetic moving-shape videos, segment sampling and differential images.

Frames are quantized to multiples of 1/256, so differences of adjacent
frames and their inverse (``diff + frame_i``) are exact in single precision.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import msat

TASKS = ("spatial", "temporal-only", "joint")
STREAMS = ("spatial", "temporal")

PALETTE = np.array([
    [0.90, 0.10, 0.10],  # red
    [0.10, 0.80, 0.15],  # green
    [0.15, 0.25, 0.95],  # blue
    [0.95, 0.90, 0.10],  # yellow
    [0.85, 0.10, 0.85],  # magenta
    [0.10, 0.85, 0.85],  # cyan
    [1.00, 0.55, 0.00],  # orange
    [0.98, 0.98, 0.98],  # white
], dtype=np.float64)

# (dy, dx) unit steps; two-class tasks use the first two
DIRECTIONS = np.array([[0, 1], [0, -1], [1, 0], [-1, 0]])

QUANT = 256


@dataclass
class VideoClip:
    frames: np.ndarray  # [T, 3, H, W] in [0, 1]
    label: int
    clip_id: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 4 or self.frames.shape[1] != 3:
            raise ValueError(f"clip {self.clip_id!r}: frames must be [T,3,H,W], got {self.frames.shape}")
        if self.frames.shape[0] < 2:
            raise ValueError(f"clip {self.clip_id!r}: need T >= 2 frames, got {self.frames.shape[0]}")
        if self.frames.min() < 0 or self.frames.max() > 1:
            raise ValueError(f"clip {self.clip_id!r}: pixel values outside [0, 1]")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class SegmentSampler:
    num_segments: int
    mode: str = "test"

    def __post_init__(self):
        if self.num_segments < 1:
            raise ValueError(f"num_segments must be >= 1, got {self.num_segments}")
        if self.mode not in ("train", "test"):
            raise ValueError(f"mode must be 'train' or 'test', got {self.mode!r}")


@dataclass
class SnippetBatch:
    data: np.ndarray  # [N*n, 3, H, W], clip-major
    labels: np.ndarray  # [N]
    stream: str
    num_segments: int

    @property
    def num_clips(self) -> int:
        return len(self.labels)


@dataclass
class ManifestEntry:
    clip_id: str
    path: str
    label: int
    T: int
    H: int
    W: int


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry]
    num_classes: int
    split: str = "train"
    source: Path | None = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.entries)

    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.entries], dtype=np.int64)

    def to_json(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "split": self.split,
            "entries": [vars(e).copy() for e in self.entries],
        }


# ---------------------------------------------------------------------------
# sampling and differential images
# ---------------------------------------------------------------------------

def segment_bounds(length: int, num_segments: int) -> list[tuple[int, int]]:
    """Split ``range(length)`` into contiguous near-equal inclusive ranges."""
    edges = (np.arange(num_segments + 1) * length) // num_segments
    return [(int(edges[k]), int(edges[k + 1]) - 1) for k in range(num_segments)]


def sample_segments(clip: VideoClip | int, sampler: SegmentSampler, stream: str = "spatial",
                    rng: np.random.Generator | None = None) -> list[int]:
    """One frame index per segment.

    For the temporal stream the indices are starts of adjacent-frame pairs,
    so they range over ``[0, T-2]``. Test mode returns segment centres
    (upper centre on even-length segments); train mode draws uniformly.
    """
    if stream not in STREAMS:
        raise ValueError(f"unknown stream {stream!r}")
    t = clip if isinstance(clip, int) else clip.num_frames
    length = t if stream == "spatial" else t - 1
    n = sampler.num_segments
    if length < n:
        raise ValueError(f"{stream} sampling of {n} segments needs {n + (stream != 'spatial')} "
                         f"frames, clip has {t}")
    bounds = segment_bounds(length, n)
    if sampler.mode == "test":
        return [lo + (hi - lo + 1) // 2 for lo, hi in bounds]
    if rng is None:
        raise ValueError("train-mode sampling needs an rng")
    return [int(rng.integers(lo, hi + 1)) for lo, hi in bounds]


def compute_diff(clip: VideoClip, index: int) -> np.ndarray:
    """``frames[index + 1] - frames[index]``."""
    if not 0 <= index <= clip.num_frames - 2:
        raise IndexError(f"diff index {index} outside [0, {clip.num_frames - 2}]")
    return clip.frames[index + 1] - clip.frames[index]


def normalize(raw: np.ndarray, stream: str) -> np.ndarray:
    """Map spatial frames from [0,1] to [-1,1]; temporal diffs pass through."""
    raw = np.asarray(raw, dtype=np.float32)
    if stream == "spatial":
        if raw.min() < 0 or raw.max() > 1:
            raise ValueError("spatial input must lie in [0, 1]")
        return raw * np.float32(2) - np.float32(1)
    if stream == "temporal":
        if raw.min() < -1 or raw.max() > 1:
            raise ValueError("temporal input must lie in [-1, 1]")
        return raw
    raise ValueError(f"unknown stream {stream!r}")


def build_snippet_batch(clips: Sequence[VideoClip], sampler: SegmentSampler, stream: str,
                        rng: np.random.Generator | None = None) -> SnippetBatch:
    rows = []
    for clip in clips:
        for i in sample_segments(clip, sampler, stream, rng):
            rows.append(clip.frames[i] if stream == "spatial" else compute_diff(clip, i))
    data = normalize(np.stack(rows), stream)
    labels = np.array([c.label for c in clips], dtype=np.int64)
    return SnippetBatch(data, labels, stream, sampler.num_segments)


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------

def class_grammar(task: str, num_classes: int) -> tuple[int, int]:
    """Return ``(num_colors, num_directions)`` that the labels factor into.

    A value of 0 means the factor is random rather than class-defining.
    """
    if task == "spatial":
        if not 2 <= num_classes <= len(PALETTE):
            raise ValueError(f"spatial task distinguishes shape colours: K must be in "
                             f"[2, {len(PALETTE)}], got {num_classes}")
        return num_classes, 0
    if task == "temporal-only":
        if num_classes not in (2, 4):
            raise ValueError(f"temporal-only task distinguishes motion directions: "
                             f"K must be 2 or 4, got {num_classes}")
        return 0, num_classes
    if task == "joint":
        for dirs in (4, 2):
            colors = num_classes // dirs
            if num_classes % dirs == 0 and 2 <= colors <= len(PALETTE):
                return colors, dirs
        raise ValueError(f"joint task needs K = colours x directions with directions in {{2,4}} "
                         f"and 2..{len(PALETTE)} colours, got K={num_classes}")
    raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")


def _background(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    coarse = rng.uniform(0.3, 0.7, size=(1, (h + 3) // 4, (w + 3) // 4))
    base = np.repeat(np.repeat(coarse, 4, axis=1), 4, axis=2)[:, :h, :w]
    tint = rng.uniform(-0.04, 0.04, size=(3, 1, 1))
    grain = rng.uniform(-0.08, 0.08, size=(3, h, w))
    return np.clip(base + tint + grain, 0, 1)


def _shape_mask(kind: int, cy: float, cx: float, radius: float, h: int, w: int) -> np.ndarray:
    # toroidal offsets so a shape leaving one edge re-enters at the other
    dy = (np.arange(h)[:, None] - cy + h / 2) % h - h / 2
    dx = (np.arange(w)[None, :] - cx + w / 2) % w - w / 2
    if kind == 0:
        return (dy ** 2 + dx ** 2) <= radius ** 2
    return (np.abs(dy) <= radius) & (np.abs(dx) <= radius)


def render_clip(rng: np.random.Generator, frames: int, size: tuple[int, int],
                color: np.ndarray, step: tuple[float, float]) -> np.ndarray:
    """Render one rigid shape translating by ``step`` pixels per frame."""
    h, w = size
    bg = _background(rng, h, w)
    kind = int(rng.integers(0, 2))
    radius = max(2.0, min(h, w) / 5)
    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
    out = np.empty((frames, 3, h, w))
    for t in range(frames):
        mask = _shape_mask(kind, cy + t * step[0], cx + t * step[1], radius, h, w)
        out[t] = np.where(mask, color[:, None, None], bg)
    q = np.clip(np.round(out * QUANT), 0, QUANT - 1) / QUANT
    return q.astype(np.float32)


def synthesize_clip(rng: np.random.Generator, task: str, label: int, num_classes: int,
                    frames: int, size: tuple[int, int]) -> np.ndarray:
    colors, dirs = class_grammar(task, num_classes)
    speed = float(rng.integers(2, 4))
    if task == "spatial":
        color = PALETTE[label]
        angle = rng.uniform(0, 2 * np.pi)
        step = (speed * np.sin(angle), speed * np.cos(angle))
    elif task == "temporal-only":
        # one shared colour keeps appearance class-independent and makes the
        # sign of the leading edge in a diff image colour-independent
        color = PALETTE[7]
        step = tuple(speed * DIRECTIONS[label])
    else:
        color = PALETTE[label // dirs]
        step = tuple(speed * DIRECTIONS[label % dirs])
    return render_clip(rng, frames, size, color, step)


_SPLIT_CODES = {"train": 0, "test": 1, "val": 2}


def generate_synthetic_dataset(out_dir, num_classes: int, clips_per_class: int, frames: int = 8,
                               size: tuple[int, int] = (32, 32), seed: int = 0,
                               task: str = "joint", split: str = "train") -> DatasetManifest:
    """Render a balanced dataset to ``out_dir/<split>/`` and write ``out_dir/<split>.json``.

    Each split draws from its own random stream, so train and test clips
    generated with the same seed are distinct.
    """
    class_grammar(task, num_classes)
    if clips_per_class < 1:
        raise ValueError(f"clips_per_class must be >= 1, got {clips_per_class}")
    if frames < 2:
        raise ValueError(f"frames must be >= 2, got {frames}")
    root = Path(out_dir)
    (root / split).mkdir(parents=True, exist_ok=True)
    code = _SPLIT_CODES.get(split, sum(split.encode()))
    entries = []
    for label in range(num_classes):
        for j in range(clips_per_class):
            rng = np.random.default_rng([seed, code, label, j])
            video = synthesize_clip(rng, task, label, num_classes, frames, tuple(size))
            clip_id = f"{split}-c{label:02d}-{j:04d}"
            rel = f"{split}/{clip_id}.msat"
            save_clip(root / rel, VideoClip(video, label, clip_id))
            entries.append(ManifestEntry(clip_id, rel, label, frames, size[0], size[1]))
    manifest = DatasetManifest(root, entries, num_classes, split)
    save_manifest(manifest, root / f"{split}.json")
    return manifest


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------

def save_clip(path, clip: VideoClip) -> None:
    msat.save_tensor(path, clip.frames)


def load_clip(path, label: int = -1, clip_id: str = "",
              expect: tuple[int, int, int] | None = None) -> VideoClip:
    frames = msat.load_tensor(path)
    if frames.ndim != 4 or frames.shape[1] != 3:
        raise msat.MSATError(f"{path}: expected [T,3,H,W] frames, header says {frames.shape}")
    if expect is not None:
        t, h, w = expect
        if (frames.shape[0], frames.shape[2], frames.shape[3]) != (t, h, w):
            raise msat.MSATError(f"{path}: header shape {frames.shape} disagrees with declared "
                                 f"T={t}, H={h}, W={w}")
    return VideoClip(frames, label, clip_id or Path(path).stem)


def save_manifest(manifest: DatasetManifest, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest.to_json(), fh, indent=1)
    os.replace(tmp, path)


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Read and validate a manifest; file headers are checked against declared shapes."""
    path = Path(path)
    if path.is_dir():
        path = path / "train.json"
    with open(path) as fh:
        doc = json.load(fh)
    try:
        k = int(doc["num_classes"])
        entries = [ManifestEntry(str(e["clip_id"]), str(e["path"]), int(e["label"]),
                                 int(e["T"]), int(e["H"]), int(e["W"])) for e in doc["entries"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}: malformed manifest ({exc})") from exc
    manifest = DatasetManifest(path.parent, entries, k, str(doc.get("split", "train")), path)
    labels = set(manifest.labels().tolist())
    if any(not 0 <= lab < k for lab in labels):
        raise ValueError(f"{path}: labels outside [0, {k})")
    if manifest.split == "train" and labels != set(range(k)):
        raise ValueError(f"{path}: training labels cover {sorted(labels)}, expected all of [0, {k})")
    if check_files:
        for e in entries:
            fp = manifest.root / e.path
            if not fp.is_file():
                raise FileNotFoundError(f"{path}: entry {e.clip_id} points to missing file {fp}")
            shape = msat.peek_shape(fp)
            if len(shape) != 4 or (shape[0], shape[1], shape[2], shape[3]) != (e.T, 3, e.H, e.W):
                raise msat.MSATError(f"{fp}: header shape {tuple(shape)} disagrees with manifest "
                                     f"T={e.T}, H={e.H}, W={e.W}")
    return manifest


def load_clips(manifest: DatasetManifest) -> list[VideoClip]:
    return [load_clip(manifest.root / e.path, e.label, e.clip_id, (e.T, e.H, e.W))
            for e in manifest.entries]
