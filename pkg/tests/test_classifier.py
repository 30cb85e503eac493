import numpy as np
import pytest

from multishield.classifier import train_adversarial, train_standard
from multishield.data import make_blobs, split_per_class
from multishield.mlp import flatten_params
from multishield.rng import Rng


def small_train():
    full = make_blobs(21, K=3, d=2, n_per_class=12, spread=0.02)
    train, _ = split_per_class(full, 8)
    return train


def test_train_standard_deterministic():
    tr = small_train()
    a = train_standard(tr, [8], 6, 8, 0.2, Rng(2, "clf"))
    b = train_standard(tr, [8], 6, 8, 0.2, Rng(2, "clf"))
    assert np.array_equal(flatten_params(a.params), flatten_params(b.params))


def test_train_standard_seed_matters():
    tr = small_train()
    a = train_standard(tr, [8], 6, 8, 0.2, Rng(2, "clf"))
    b = train_standard(tr, [8], 6, 8, 0.2, Rng(3, "clf"))
    assert not np.array_equal(flatten_params(a.params), flatten_params(b.params))


def test_training_fits_the_blobs():
    tr = small_train()
    clf = train_standard(tr, [16], 30, 8, 0.3, Rng(2, "clf"))
    assert (clf.predict(tr.X) == tr.y).mean() == 1.0


def test_adversarial_zero_eps_reproduces_standard():
    tr = small_train()
    std = train_standard(tr, [8], 6, 8, 0.2, Rng(5, "clf"))
    at = train_adversarial(tr, [8], 6, 8, 0.2, Rng(5, "clf"), eps=0.0)
    assert np.array_equal(flatten_params(std.params), flatten_params(at.params))


def test_adversarial_eps_changes_training():
    tr = small_train()
    std = train_standard(tr, [8], 6, 8, 0.2, Rng(5, "clf"))
    at = train_adversarial(tr, [8], 6, 8, 0.2, Rng(5, "clf"), eps=0.05)
    assert not np.array_equal(flatten_params(std.params),
                              flatten_params(at.params))


def test_adversarial_validation():
    tr = small_train()
    with pytest.raises(ValueError):
        train_adversarial(tr, [8], 2, 8, 0.2, Rng(0, "clf"), eps=-0.1)
    with pytest.raises(ValueError):
        train_adversarial(tr, [8], 2, 8, 0.2, Rng(0, "clf"), eps=0.05,
                          attack_steps=0)


def test_adversarial_training_is_deterministic():
    tr = small_train()
    a = train_adversarial(tr, [8], 4, 8, 0.2, Rng(7, "clf"), eps=0.05)
    b = train_adversarial(tr, [8], 4, 8, 0.2, Rng(7, "clf"), eps=0.05)
    assert np.array_equal(flatten_params(a.params), flatten_params(b.params))


def test_toy_models_behave(toy_data, toy_models):
    _, train, test, _ = toy_data
    std, at, _ = toy_models
    assert (std.predict(train.X) == train.y).mean() == 1.0
    assert (at.predict(train.X) == train.y).mean() == 1.0
    assert (std.predict(test.X) == test.y).mean() >= 0.99
    assert (at.predict(test.X) == test.y).mean() >= 0.99
