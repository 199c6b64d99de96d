"""Semantic adversarial learning.

A discriminator learns to tell frozen label codes ("real") from clip
representations ("fake"); the backbone and classifier are then updated to
classify correctly while making their representations look real.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import SGD, Adam, Module, Tensor, backward, clip_gradients, ops
from .autoencoder import FrozenError, LabelAutoencoder
from .backbone import Backbone
from .data import SnippetBatch
from .layers import Linear

EPS_CLAMP = 1e-7
DISC_HIDDEN = 32


class Discriminator(Module):
    """``D -> 32 -> 1`` MLP with a sigmoid output."""

    def __init__(self, dim: int, rng: np.random.Generator, hidden: int = DISC_HIDDEN):
        self.dim = dim
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, 1, rng, gain=1.0)

    def __call__(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"discriminator expects [N, {self.dim}], got {x.shape}")
        return ops.sigmoid(self.fc2(ops.relu(self.fc1(x))))


class Classifier(Module):
    def __init__(self, dim: int, num_classes: int, rng: np.random.Generator):
        self.num_classes = num_classes
        self.fc = Linear(dim, num_classes, rng, gain=1.0)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc(x)


@dataclass
class LossReport:
    l_cls: float
    l_adv_d: float
    l_adv_g: float
    l_total: float
    lambda_adv: float

    @property
    def l_total_d(self) -> float:
        return self.lambda_adv * self.l_adv_d

    def as_row(self) -> tuple[float, float, float, float]:
        return self.l_cls, self.l_adv_d, self.l_adv_g, self.l_total


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _labels(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes}), got {labels.tolist()}")
    return labels


def classification_loss(logits: Tensor, labels) -> Tensor:
    """Mean categorical cross-entropy, ``log_sum_exp(C) - C[y]`` per row."""
    n, k = logits.shape
    labels = _labels(labels, k)
    if labels.size != n:
        raise ValueError(f"{n} logit rows but {labels.size} labels")
    onehot = Tensor(np.eye(k)[labels], dtype=logits.dtype)
    picked = ops.sum(ops.mul(logits, onehot), axis=1)
    return ops.mean(ops.sub(ops.log_sum_exp(logits, axis=1), picked))


def _check_dims(a, b) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"real and fake batches differ in dimension: {a.shape} vs {b.shape}")


def _probs(disc, x, eps: float) -> Tensor:
    return ops.clamp(disc(x), eps, 1 - eps)


def discriminator_loss(real, fake, disc, eps: float = EPS_CLAMP) -> Tensor:
    """``-(mean log D(real) + mean log(1 - D(fake)))``; ``fake`` is detached."""
    real = real if isinstance(real, Tensor) else Tensor(real)
    fake = fake.detach() if isinstance(fake, Tensor) else Tensor(fake)
    _check_dims(real, fake)
    p_real = _probs(disc, real, eps)
    p_fake = _probs(disc, fake, eps)
    return ops.neg(ops.add(ops.mean(ops.log(p_real)), ops.mean(ops.log(1 - p_fake))))


def generator_loss(fake: Tensor, disc, eps: float = EPS_CLAMP) -> Tensor:
    """Non-saturating generator objective ``-mean log D(fake)``."""
    if not isinstance(fake, Tensor):
        fake = Tensor(fake)
    if fake.shape[-1] != getattr(disc, "dim", fake.shape[-1]):
        raise ValueError(f"fake batch dimension {fake.shape[-1]} != discriminator input {disc.dim}")
    return ops.neg(ops.mean(ops.log(_probs(disc, fake, eps))))


def discriminator_accuracy(disc, real, fake) -> float:
    """Balanced accuracy of thresholding ``D`` at 0.5 on real vs fake."""
    p_real = disc(real).data.reshape(-1)
    p_fake = disc(fake).data.reshape(-1)
    return 0.5 * (float(np.mean(p_real > 0.5)) + float(np.mean(p_fake <= 0.5)))


# ---------------------------------------------------------------------------
# alternating optimization
# ---------------------------------------------------------------------------

def sal_step(batch: SnippetBatch, generator: Backbone, classifier: Classifier,
             disc: Discriminator | None, encoder: LabelAutoencoder | None,
             opt_g: SGD, opt_d: Adam | None, lambda_adv: float = 1.0,
             grad_clip: float | None = None, eps: float = EPS_CLAMP) -> LossReport:
    """One discriminator update followed by one generator/classifier update.

    With ``disc=None`` the adversarial branch is disabled and this is plain
    cross-entropy training.

    The discriminator phase cannot change the generator, so the clip
    representations computed once serve both phases; the second phase
    re-applies the freshly updated discriminator.
    """
    adversarial = disc is not None
    if adversarial:
        if encoder is None or not encoder.frozen:
            raise FrozenError("semantic encoder must be trained and frozen before adversarial steps")
    x = Tensor(batch.data)
    fake = generator(x, batch.num_segments)
    l_adv_d = 0.0
    if adversarial:
        real = encoder.encode(batch.labels)
        opt_d.zero_grad()
        # Adam is invariant to positive loss scaling, so stepping on the
        # unweighted objective equals stepping on lambda * objective for lambda > 0
        d_loss = discriminator_loss(real, fake, disc, eps)
        backward(d_loss)
        opt_d.step()
        l_adv_d = d_loss.item()

    opt_g.zero_grad()
    logits = classifier(fake)
    cls = classification_loss(logits, batch.labels)
    if adversarial:
        g_loss = generator_loss(fake, disc, eps)
        total = ops.add(cls, ops.mul(g_loss, float(lambda_adv)))
        l_adv_g = g_loss.item()
    else:
        total, l_adv_g = cls, 0.0
    backward(total)
    if grad_clip is not None:
        clip_gradients(opt_g.params.values(), grad_clip)
    opt_g.step()
    return LossReport(cls.item(), l_adv_d, l_adv_g, total.item(), float(lambda_adv))


# ---------------------------------------------------------------------------
# toy min-max
# ---------------------------------------------------------------------------

class AffineGenerator(Module):
    def __init__(self, noise_dim: int, out_dim: int, rng: np.random.Generator):
        self.map = Linear(noise_dim, out_dim, rng, gain=1.0)

    def __call__(self, z) -> Tensor:
        return self.map(z if isinstance(z, Tensor) else Tensor(z))


def toy_equilibrium(seed: int = 0, steps: int = 2000, num_classes: int = 4, code_dim: int = 8,
                    batch: int = 32, lr_g: float = 3e-2, lr_d: float = 1e-3,
                    beta1: float = 0.5, eval_size: int = 512) -> dict:
    """Alternate discriminator and affine-generator updates against frozen label codes.

    The generator maps a fixed set of noise vectors (one per class) through a
    trainable affine map, so an exact match of the code distribution exists.
    Both learning rates decay linearly to zero; with point-mass targets a
    constant step keeps the pair orbiting the equilibrium instead of settling.
    Returns the discriminator's balanced accuracy on fresh real/fake samples.
    """
    from .autoencoder import train_autoencoder

    rng = np.random.default_rng(seed)
    encoder = train_autoencoder(num_classes, code_dim, epochs=2000, lr=0.01, seed=seed)
    checksum = encoder.checksum()
    codes = encoder.encode(np.arange(num_classes))
    noise = rng.normal(size=(num_classes, code_dim)).astype(np.float32)
    gen = AffineGenerator(code_dim, code_dim, rng)
    disc = Discriminator(code_dim, rng)
    opt_g = Adam(gen.parameters(), lr_g, (beta1, 0.999))
    opt_d = Adam(disc.parameters(), lr_d, (beta1, 0.999))
    d_losses, g_losses = [], []
    for t in range(steps):
        decay = 1 - t / steps
        opt_g.lr, opt_d.lr = lr_g * decay, lr_d * decay
        real = codes[rng.integers(0, num_classes, batch)]
        z = noise[rng.integers(0, len(noise), batch)]
        opt_d.zero_grad()
        d_loss = discriminator_loss(real, gen(z), disc)
        backward(d_loss)
        opt_d.step()
        opt_g.zero_grad()
        g_loss = generator_loss(gen(z), disc)
        backward(g_loss)
        opt_g.step()
        d_losses.append(d_loss.item())
        g_losses.append(g_loss.item())
    real = codes[rng.integers(0, num_classes, eval_size)]
    fake = gen(noise[rng.integers(0, len(noise), eval_size)]).data
    return {
        "accuracy": discriminator_accuracy(disc, real, fake),
        "d_losses": d_losses,
        "g_losses": g_losses,
        "encoder_unchanged": encoder.checksum() == checksum,
    }
