import numpy as np
import pytest

from multishield.rng import Rng, sample_rng


def test_same_seed_same_name_reproduces():
    a = Rng(7, "x").uniform(0, 1, 16)
    b = Rng(7, "x").uniform(0, 1, 16)
    assert np.array_equal(a, b)


def test_different_names_differ():
    a = Rng(7, "shuffle").uniform(0, 1, 16)
    b = Rng(7, "attack").uniform(0, 1, 16)
    assert not np.array_equal(a, b)


def test_different_seeds_differ():
    a = Rng(7, "x").uniform(0, 1, 16)
    b = Rng(8, "x").uniform(0, 1, 16)
    assert not np.array_equal(a, b)


def test_stream_composes_names():
    root = Rng(3, "encoder")
    child = root.stream("init")
    assert child.name == "encoder/init"
    assert child.seed == 3
    # equivalent to constructing the composed name directly
    assert np.array_equal(child.normal(size=8),
                          Rng(3, "encoder/init").normal(size=8))


def test_stream_does_not_advance_parent():
    a = Rng(3, "root")
    a.stream("child").uniform(0, 1, 100)
    b = Rng(3, "root")
    assert np.array_equal(a.uniform(0, 1, 8), b.uniform(0, 1, 8))


def test_for_worker_derivation():
    base = Rng(10, "pool")
    w0 = base.for_worker(0)
    w3 = base.for_worker(3)
    assert np.array_equal(w0.uniform(0, 1, 8), Rng(10, "pool").uniform(0, 1, 8))
    assert not np.array_equal(w3.uniform(0, 1, 8),
                              Rng(10, "pool").uniform(0, 1, 8))


def test_sample_rng_is_per_sample():
    a = sample_rng(5, 3).uniform(-1, 1, 4)
    b = sample_rng(5, 4).uniform(-1, 1, 4)
    c = sample_rng(5, 3).uniform(-1, 1, 4)
    assert np.array_equal(a, c)
    assert not np.array_equal(a, b)


def test_sample_rng_name_scopes():
    a = sample_rng(5, 3, name="attack").uniform(-1, 1, 4)
    b = sample_rng(5, 3, name="adaptive").uniform(-1, 1, 4)
    assert not np.array_equal(a, b)


def test_permutation_is_valid():
    p = Rng(1, "shuffle").permutation(40)
    assert sorted(p.tolist()) == list(range(40))


def test_seed_range_checked():
    with pytest.raises(ValueError):
        Rng(-1)
    with pytest.raises(ValueError):
        Rng(2**64)
