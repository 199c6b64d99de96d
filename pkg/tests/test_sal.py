import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mpasal.autodiff import SGD, Adam, Tensor, backward, global_grad_norm, ops, precision
from mpasal.autoencoder import FrozenError, LabelAutoencoder, train_autoencoder
from mpasal.backbone import Backbone, BackboneConfig
from mpasal.data import SnippetBatch
from mpasal.sal import (Classifier, Discriminator, classification_loss, discriminator_accuracy,
                        discriminator_loss, generator_loss, sal_step, toy_equilibrium)

K, D = 4, 6


class ConstantDisc:
    """Stand-in discriminator returning a fixed probability."""

    dim = D

    def __init__(self, p):
        self.p = p

    def __call__(self, x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        return ops.add(ops.mul(ops.sum(x, axis=1), 0.0), self.p).reshape((x.shape[0], 1))


def eq4(logits, labels):
    """Verbatim categorical cross-entropy: -sum_i y_i (C_i - log sum_j exp C_j), batch mean."""
    total = 0.0
    for row, y in zip(logits, labels):
        onehot = np.eye(len(row))[y]
        total += -np.sum(onehot * (row - np.log(np.sum(np.exp(row)))))
    return total / len(labels)


@pytest.fixture(scope="module")
def encoder():
    return train_autoencoder(K, D, epochs=1500, seed=1)


def _parts(seed, with_disc=True):
    rng = np.random.default_rng(seed)
    gen = Backbone(BackboneConfig(stage_channels=(2, 2, 2, 2), embed_dim=D), np.random.default_rng([seed, 1]))
    clf = Classifier(D, K, np.random.default_rng([seed, 2]))
    disc = Discriminator(D, np.random.default_rng([seed, 3])) if with_disc else None
    batch = SnippetBatch(rng.uniform(-1, 1, (8, 3, 16, 16)).astype(np.float32),
                         rng.integers(0, K, 4), "spatial", 2)
    gparams = {**{"g." + k: p for k, p in gen.parameters().items()},
               **{"c." + k: p for k, p in clf.parameters().items()}}
    opt_g = SGD(gparams, 0.05, 0.9)
    opt_d = Adam(disc.parameters(), 1e-3) if disc else None
    return gen, clf, disc, batch, opt_g, opt_d


# -- classification loss ------------------------------------------------------

def test_cls_uniform_k3():
    assert classification_loss(Tensor(np.zeros((2, 3))), [0, 2]).item() == pytest.approx(np.log(3), abs=1e-6)


def test_cls_uniform_k2():
    assert classification_loss(Tensor(np.zeros((1, 2))), [0]).item() == pytest.approx(0.6931, abs=1e-4)


def test_cls_matches_verbatim_formula():
    rng = np.random.default_rng(0)
    with precision(np.float64):
        for _ in range(100):
            n, k = rng.integers(1, 6), rng.integers(2, 9)
            logits = rng.normal(0, 3, (n, k))
            labels = rng.integers(0, k, n)
            assert abs(classification_loss(Tensor(logits), labels).item() - eq4(logits, labels)) <= 1e-6


def test_cls_label_range():
    with pytest.raises(ValueError):
        classification_loss(Tensor(np.zeros((2, 3))), [0, 3])


@given(st.floats(-20, 20))
def test_argmax_invariant_to_bias_shift(c):
    clf = Classifier(D, K, np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).normal(size=(10, D)))
    before = clf(x).data.argmax(axis=1)
    clf.fc.bias.data += np.float32(c)
    assert np.array_equal(before, clf(x).data.argmax(axis=1))


# -- adversarial losses --------------------------------------------------------

def test_chance_discriminator_loss():
    x = np.zeros((5, D))
    assert discriminator_loss(x, x + 1, ConstantDisc(0.5)).item() == pytest.approx(1.3863, abs=1e-4)


def test_chance_generator_loss():
    assert generator_loss(Tensor(np.zeros((3, D))), ConstantDisc(0.5)).item() == pytest.approx(0.6931, abs=1e-4)


def test_discriminator_loss_swap_symmetry_at_chance(rng):
    a, b = rng.normal(size=(4, D)), rng.normal(size=(6, D))
    disc = ConstantDisc(0.5)
    assert discriminator_loss(a, b, disc).item() == discriminator_loss(b, a, disc).item()


def test_perfect_discriminator_clamped():
    class Perfect:
        dim = D

        def __call__(self, x):
            x = x if isinstance(x, Tensor) else Tensor(x)
            return Tensor(np.where(x.data[:, :1] > 0, 1.0, 0.0))
    real, fake = np.ones((3, D)), -np.ones((3, D))
    loss = discriminator_loss(real, fake, Perfect()).item()
    assert np.isfinite(loss) and loss == pytest.approx(2 * np.log(1 / (1 - 1e-7)), abs=1e-6)
    assert generator_loss(Tensor(real), Perfect()).item() == pytest.approx(0, abs=1e-6)


def test_dimension_mismatch_rejected(rng):
    disc = Discriminator(D, rng)
    with pytest.raises(ValueError):
        discriminator_loss(np.zeros((2, D)), np.zeros((2, D + 1)), disc)
    with pytest.raises(ValueError):
        generator_loss(Tensor(np.zeros((2, D + 1))), disc)


@given(st.floats(-1e4, 1e4))
def test_discriminator_output_open_interval(scale):
    disc = Discriminator(D, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(4, D)) * scale
    p = disc(x).data
    assert np.all(np.isfinite(p))
    assert np.isfinite(discriminator_loss(x, -x, disc).item())


def test_discriminator_accuracy_balanced():
    real, fake = np.ones((4, D)), -np.ones((2, D))

    class Sign:
        def __call__(self, x):
            return Tensor((np.asarray(x)[:, :1] > 0).astype(float) * 0.8 + 0.1)
    assert discriminator_accuracy(Sign(), real, fake) == 1.0


# -- alternating step -----------------------------------------------------------

def test_unfrozen_encoder_rejected():
    gen, clf, disc, batch, opt_g, opt_d = _parts(0)
    with pytest.raises(FrozenError):
        sal_step(batch, gen, clf, disc, LabelAutoencoder(K, D), opt_g, opt_d)


def test_total_loss_identity(encoder):
    gen, clf, disc, batch, opt_g, opt_d = _parts(0)
    for lam in (0.0, 0.3, 1.0):
        r = sal_step(batch, gen, clf, disc, encoder, opt_g, opt_d, lambda_adv=lam)
        assert r.l_total == pytest.approx(r.l_cls + lam * r.l_adv_g, rel=1e-6)
        assert r.l_total_d == lam * r.l_adv_d
        assert r.l_cls >= 0 and r.l_adv_d >= 0 and r.l_adv_g >= 0


def test_phase_isolation(encoder):
    gen, clf, disc, batch, opt_g, opt_d = _parts(1)
    snap = lambda m: {k: p.data.copy() for k, p in m.parameters().items()}
    g0, c0, d0, e0 = snap(gen), snap(clf), snap(disc), encoder.checksum()
    # stop after phase 1 by making the generator optimizer inert
    opt_g.lr = 0.0
    sal_step(batch, gen, clf, disc, encoder, opt_g, opt_d)
    assert all(np.array_equal(g0[k], v) for k, v in snap(gen).items())
    assert all(np.array_equal(c0[k], v) for k, v in snap(clf).items())
    assert any(not np.array_equal(d0[k], v) for k, v in snap(disc).items())
    # phase 2 alone: freeze D's step size
    opt_g.lr, opt_d.lr = 0.05, 0.0
    d1 = snap(disc)
    sal_step(batch, gen, clf, disc, encoder, opt_g, opt_d)
    assert all(np.array_equal(d1[k], v) for k, v in snap(disc).items())
    assert any(not np.array_equal(g0[k], v) for k, v in snap(gen).items())
    assert encoder.checksum() == e0


def test_lambda_zero_matches_disabled(encoder):
    runs = []
    for with_disc in (True, False):
        gen, clf, disc, batch, opt_g, opt_d = _parts(2, with_disc)
        rows = [sal_step(batch, gen, clf, disc, encoder, opt_g, opt_d, lambda_adv=0.0).l_cls for _ in range(5)]
        runs.append((rows, {k: p.data.tobytes() for k, p in gen.parameters().items()}))
    assert runs[0][0] == runs[1][0]
    assert runs[0][1] == runs[1][1]


def test_lambda_zero_still_updates_discriminator(encoder):
    gen, clf, disc, batch, opt_g, opt_d = _parts(3)
    before = disc.checksum()
    sal_step(batch, gen, clf, disc, encoder, opt_g, opt_d, lambda_adv=0.0)
    assert disc.checksum() != before


def test_discriminator_step_descends(encoder):
    ok = 0
    for trial in range(20):
        gen, clf, disc, batch, opt_g, _ = _parts(100 + trial)
        opt_d = Adam(disc.parameters(), 1e-4)
        real = encoder.encode(batch.labels)
        fake = gen(Tensor(batch.data), batch.num_segments).data
        before = discriminator_loss(real, fake, disc).item()
        opt_d.zero_grad()
        backward(discriminator_loss(real, fake, disc))
        opt_d.step()
        ok += discriminator_loss(real, fake, disc).item() <= before
    assert ok >= 18


def test_gradient_clipping_applied(encoder):
    gen, clf, disc, batch, opt_g, opt_d = _parts(4)
    sal_step(batch, gen, clf, disc, encoder, opt_g, opt_d, grad_clip=1e-3)
    assert global_grad_norm(opt_g.params.values()) <= 1e-3 * (1 + 1e-5)


def test_toy_equilibrium_short():
    out = toy_equilibrium(seed=0, steps=300)
    assert out["encoder_unchanged"]
    assert len(out["d_losses"]) == 300 and 0 <= out["accuracy"] <= 1
