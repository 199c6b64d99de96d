import json

import numpy as np
import pytest

from mpasal.autodiff import backward
from mpasal.autoencoder import (LabelAutoencoder, TrainingFailure, encode, reconstruction_loss,
                                train_autoencoder)


@pytest.fixture(scope="module")
def trained():
    return train_autoencoder(8, 64, epochs=2000, lr=0.01, seed=0)


def test_zero_encoder_gives_zero_codes():
    model = LabelAutoencoder(5, 7, zero=True)
    np.testing.assert_array_equal(encode(np.arange(5), model), 0)


def test_layer_shapes():
    model = LabelAutoencoder(6, 10)
    shapes = {k: p.shape for k, p in model.parameters().items()}
    assert shapes["fc1.weight"] == (64, 6)
    assert shapes["fc2.weight"] == (10, 64)
    assert shapes["fc3.weight"] == (6, 10)


def test_trained_reconstructs_all_labels(trained):
    assert trained.frozen
    assert trained.reconstruction_accuracy() == 1.0


def test_codes_pairwise_distinct(trained):
    codes = trained.encode(np.arange(8)).astype(np.float64)
    dist = np.linalg.norm(codes[:, None] - codes[None], axis=2)
    assert dist[~np.eye(8, dtype=bool)].min() > 0


def test_frozen_codes_deterministic(trained):
    a = trained.encode([3, 5])
    b = trained.encode([3, 5])
    assert a.tobytes() == b.tobytes()
    assert a.shape == (2, 64) and np.all(np.isfinite(a))


def test_label_out_of_range(trained):
    with pytest.raises(ValueError):
        trained.encode([8])
    with pytest.raises(ValueError):
        trained.encode([-1])


def test_k2_loss_descends_monotonically():
    model = LabelAutoencoder(2, 8, np.random.default_rng(0))
    losses = []
    for _ in range(10):
        model.zero_grad()
        loss = reconstruction_loss(model)
        backward(loss)
        for p in model.parameters().values():
            p.data -= 0.01 * p.grad
        losses.append(loss.item())
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_training_failure_reported():
    with pytest.raises(TrainingFailure, match="epochs"):
        train_autoencoder(8, 64, epochs=1, lr=1e-6)


def test_needs_two_classes():
    with pytest.raises(ValueError):
        LabelAutoencoder(1, 4)


def test_save_load_round_trip(trained, tmp_path):
    path = tmp_path / "enc.msat"
    trained.save(path)
    meta = json.loads((tmp_path / "enc.msat.json").read_text())
    assert meta == {"num_classes": 8, "code_dim": 64, "frozen": True}
    back = LabelAutoencoder.load(path)
    assert back.frozen and back.checksum() == trained.checksum()


def test_load_rechecks_reconstruction(tmp_path):
    model = LabelAutoencoder(4, 8, zero=True).freeze()
    model.save(tmp_path / "bad.msat")
    with pytest.raises(TrainingFailure):
        LabelAutoencoder.load(tmp_path / "bad.msat")


def test_freeze_drops_gradients(trained):
    assert all(not p.requires_grad and p.grad is None for p in trained.parameters().values())
