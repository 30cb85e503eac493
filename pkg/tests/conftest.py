"""Shared fixtures and numeric helpers.

The toy dataset and its three trained models are session-scoped: training
the whole stack takes well under a second, but many tests want the same
artifacts and retraining per test would still add up.
"""

import numpy as np
import pytest

from multishield.cli import build_data, load_config, train_models


@pytest.fixture(scope="session")
def toy_cfg():
    return load_config(None)


@pytest.fixture(scope="session")
def toy_data(toy_cfg):
    # (full, train, test, prompts)
    return build_data(toy_cfg)


@pytest.fixture(scope="session")
def toy_models(toy_cfg, toy_data):
    _, train, _, prompts = toy_data
    # (standard classifier, adversarially trained classifier, dual encoder)
    return train_models(toy_cfg, train, prompts)


def fd_grad(f, x, h=1e-6):
    """Central finite differences of scalar f at x, same shape as x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        fp = f(x)
        flat[i] = keep - h
        fm = f(x)
        flat[i] = keep
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(got, want):
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    scale = max(float(np.abs(want).max(initial=0.0)), 1e-8)
    return float(np.abs(got - want).max(initial=0.0)) / scale
