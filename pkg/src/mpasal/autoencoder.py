"""Label autoencoder whose frozen encoder supplies semantic codes.

Three fully connected layers: ``K -> 64 -> D`` encode a one-hot label and
``D -> K`` decodes it back. After training the encoder is frozen and every
label maps to a fixed code vector.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff import Adam, Module, Tensor, backward, msat, ops
from .layers import Linear

HIDDEN = 64


class TrainingFailure(RuntimeError):
    pass


class FrozenError(RuntimeError):
    pass


class LabelAutoencoder(Module):
    def __init__(self, num_classes: int, code_dim: int, rng: np.random.Generator | None = None,
                 zero: bool = False):
        if num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {num_classes}")
        rng = rng or np.random.default_rng(0)
        self.num_classes = num_classes
        self.code_dim = code_dim
        self.fc1 = Linear(num_classes, HIDDEN, rng, zero=zero)
        self.fc2 = Linear(HIDDEN, code_dim, rng, gain=1.0, zero=zero)
        self.fc3 = Linear(code_dim, num_classes, rng, gain=1.0, zero=zero)
        self.frozen = False

    def one_hot(self, labels) -> Tensor:
        labels = np.atleast_1d(np.asarray(labels))
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes}), got {labels.tolist()}")
        return Tensor(np.eye(self.num_classes)[labels.astype(np.int64)])

    def encoder(self, x: Tensor) -> Tensor:
        return self.fc2(ops.relu(self.fc1(x)))

    def decoder(self, code: Tensor) -> Tensor:
        return self.fc3(code)

    def encode(self, labels) -> np.ndarray:
        """Semantic codes ``[len(labels), D]``; a plain array, never part of a graph."""
        return self.encoder(self.one_hot(labels)).data.copy()

    def reconstruction_logits(self, labels) -> Tensor:
        return self.decoder(self.encoder(self.one_hot(labels)))

    def reconstruction_accuracy(self) -> float:
        labels = np.arange(self.num_classes)
        pred = self.reconstruction_logits(labels).data.argmax(axis=1)
        return float(np.mean(pred == labels))

    def freeze(self) -> "LabelAutoencoder":
        for p in self.parameters().values():
            p.requires_grad = False
            p.grad = None
        self.frozen = True
        return self

    # -- persistence -----------------------------------------------------
    def save(self, path) -> None:
        path = Path(path)
        msat.save_checkpoint(path, self.state_dict())
        meta = {"num_classes": self.num_classes, "code_dim": self.code_dim, "frozen": self.frozen}
        Path(f"{path}.json").write_text(json.dumps(meta))

    @classmethod
    def load(cls, path) -> "LabelAutoencoder":
        path = Path(path)
        meta = json.loads(Path(f"{path}.json").read_text())
        model = cls(int(meta["num_classes"]), int(meta["code_dim"]))
        model.load_state_dict(msat.load_checkpoint(path))
        if meta.get("frozen"):
            model.freeze()
            if model.reconstruction_accuracy() < 1.0:
                raise TrainingFailure(f"{path}: frozen encoder no longer reconstructs every label")
        return model


def encode(labels, model: LabelAutoencoder) -> np.ndarray:
    return model.encode(labels)


def reconstruction_loss(model: LabelAutoencoder) -> Tensor:
    labels = np.arange(model.num_classes)
    logits = model.reconstruction_logits(labels)
    picked = ops.sum(ops.mul(logits, model.one_hot(labels)), axis=1)
    return ops.mean(ops.sub(ops.log_sum_exp(logits, axis=1), picked))


def train_autoencoder(num_classes: int, code_dim: int, epochs: int = 2000, lr: float = 0.01,
                      seed: int = 0, history: list | None = None) -> LabelAutoencoder:
    """Full-batch cross-entropy reconstruction of all one-hot labels, then freeze.

    Raises :class:`TrainingFailure` if some label is still misreconstructed
    after ``epochs`` Adam steps.
    """
    model = LabelAutoencoder(num_classes, code_dim, np.random.default_rng(seed))
    opt = Adam(model.parameters(), lr)
    for _ in range(epochs):
        opt.zero_grad()
        loss = reconstruction_loss(model)
        backward(loss)
        opt.step()
        if history is not None:
            history.append(loss.item())
    acc = model.reconstruction_accuracy()
    if acc < 1.0:
        raise TrainingFailure(f"reconstruction accuracy {acc:.3f} < 1 after {epochs} steps; "
                              f"raise epochs or change seed")
    return model.freeze()
