import numpy as np
import pytest

from conftest import fd_grad, rel_err
from multishield.attacks import (AttackConfig, _composite_grad,
                                 _target_margins, adaptive_attack, dl_loss,
                                 fgsm, pgd, project)
from multishield.mlp import MLPClassifier
from multishield.multimodal import FrozenEncoder
from multishield.rng import Rng
from multishield.shield import MultiShield


def linear_classifier(W, b):
    """Single-layer model: logits = X @ W + b."""
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return MLPClassifier([W.shape[0], W.shape[1]], [(W, b)], seed=0)


# ---- config ----

def test_config_defaults_and_alpha():
    cfg = AttackConfig()
    assert cfg.eps == 0.05 and cfg.steps == 40 and cfg.restarts == 3
    assert cfg.p == float("inf")
    assert cfg.resolved_alpha == pytest.approx(2.5 * 0.05 / 40, abs=1e-15)
    assert AttackConfig(alpha=0.01).resolved_alpha == 0.01
    assert AttackConfig(p="inf").p == float("inf")
    assert AttackConfig(p=2).p == 2.0


@pytest.mark.parametrize("kwargs", [
    {"eps": -0.1}, {"alpha": -1.0}, {"steps": 0}, {"restarts": 0},
    {"p": 3}, {"k_t": 0}, {"lam": -0.5}, {"momentum": 1.0},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        AttackConfig(**kwargs)


# ---- loss and projection ----

def test_dl_loss_values():
    assert dl_loss(np.array([2.0, 5.0, 1.0]), 2) == 3.0
    assert dl_loss(np.array([0.0, 3.0, 1.0]), 1) == -3.0
    batch = dl_loss(np.array([[2.0, 5.0, 1.0], [0.0, 3.0, 1.0]]),
                    np.array([2, 1]))
    assert batch.tolist() == [3.0, -3.0]
    with pytest.raises(ValueError, match="label out of range"):
        dl_loss(np.array([1.0, 2.0]), 3)


def test_project_linf():
    out = project(np.array([0.5, -0.2]), 0.3, "inf")
    assert out.tolist() == [0.3, -0.2]


def test_project_l2():
    out = project(np.array([3.0, 4.0]), 1.0, 2)
    assert np.allclose(out, [0.6, 0.8], atol=1e-15)
    small = np.array([0.1, -0.2])
    assert np.array_equal(project(small, 1.0, 2), small)


def test_project_batch_rows_independent():
    D = np.array([[3.0, 4.0], [0.0, 0.5]])
    out = project(D, 1.0, 2)
    assert np.allclose(out[0], [0.6, 0.8], atol=1e-15)
    assert np.array_equal(out[1], D[1])
    with pytest.raises(ValueError, match="eps must be non-negative"):
        project(D, -1.0, 2)
    with pytest.raises(ValueError, match="p must be 2 or inf"):
        project(D, 1.0, 7)


# ---- fgsm ----

def test_fgsm_matches_hand_gradient():
    # logits = (x1, x2); y=1 gives dl = x1 - x2, input grad (1, -1)
    clf = linear_classifier(np.eye(2), np.zeros(2))
    x = np.array([0.5, 0.4])
    out = fgsm(clf, x, 1, 0.1)
    assert np.allclose(out, [0.4, 0.5], atol=1e-15)
    # batch keeps per-row labels
    X = np.array([[0.5, 0.4], [0.2, 0.9]])
    out = fgsm(clf, X, np.array([1, 2]), 0.1)
    assert np.allclose(out, [[0.4, 0.5], [0.3, 0.8]], atol=1e-15)


def test_fgsm_clips_to_box():
    clf = linear_classifier(np.eye(2), np.zeros(2))
    out = fgsm(clf, np.array([0.05, 0.98]), 1, 0.1)
    assert np.allclose(out, [0.0, 1.0], atol=1e-15)


def test_fgsm_eps_zero_is_identity():
    clf = linear_classifier(np.eye(2), np.zeros(2))
    x = np.array([0.3, 0.7])
    assert np.array_equal(fgsm(clf, x, 1, 0.0), x)
    with pytest.raises(ValueError, match="eps must be non-negative"):
        fgsm(clf, x, 1, -0.1)


# ---- pgd ----

def feasible(X, X_adv, eps, p):
    delta = X_adv - X
    if p == float("inf"):
        norms = np.abs(delta).max(axis=1)
    else:
        norms = np.sqrt((delta * delta).sum(axis=1))
    return ((norms <= eps + 1e-9).all()
            and (X_adv >= 0.0).all() and (X_adv <= 1.0).all())


@pytest.mark.parametrize("p", ["inf", 2])
def test_pgd_feasible_and_consistent(toy_data, toy_models, p):
    _, _, test, _ = toy_data
    std = toy_models[0]
    X, y = test.X[:60], test.y[:60]
    cfg = AttackConfig(eps=0.05, steps=10, restarts=2, p=p)
    res = pgd(std, X, y, cfg, seed=5)
    assert feasible(X, res.x_adv, cfg.eps, cfg.p)
    assert np.array_equal(res.loss, dl_loss(std.logits(res.x_adv), y))
    assert np.array_equal(res.success, res.loss < 0)
    assert res.duration >= 0.0


def test_pgd_batch_equals_per_sample(toy_data, toy_models):
    _, _, test, _ = toy_data
    std = toy_models[0]
    X, y = test.X[:12], test.y[:12]
    cfg = AttackConfig(eps=0.05, steps=8, restarts=2)
    batched = pgd(std, X, y, cfg, seed=5)
    for i in range(12):
        one = pgd(std, X[i], int(y[i]), cfg, seed=5, sample_indices=[i])
        assert np.array_equal(one.x_adv, batched.x_adv[i])
        # recorded losses go through matmuls of different batch shapes, so
        # they can differ in the last ulp even when the iterates match
        assert one.loss == pytest.approx(batched.loss[i], abs=1e-12)
        assert one.success == batched.success[i]


def test_pgd_single_step_equals_fgsm(toy_data, toy_models):
    _, _, test, _ = toy_data
    std = toy_models[0]
    X, y = test.X[:20], test.y[:20]
    eps = 0.05
    cfg = AttackConfig(eps=eps, alpha=eps, steps=1, restarts=1)
    res = pgd(std, X, y, cfg, seed=5)
    assert np.array_equal(res.x_adv, fgsm(std, X, y, eps))


def test_pgd_warm_start_never_hurts(toy_data, toy_models):
    _, _, test, _ = toy_data
    std = toy_models[0]
    X, y = test.X[:40], test.y[:40]
    first = pgd(std, X, y, AttackConfig(eps=0.05, steps=10, restarts=2),
                seed=5)
    # widen the ball and hand over the previous iterate; the previous loss
    # is an upper bound because the warm start itself is a candidate
    res = pgd(std, X, y, AttackConfig(eps=0.08, steps=1, restarts=1), seed=5,
              warm_start=first.x_adv)
    assert (res.loss <= first.loss + 1e-12).all()
    assert res.success[first.success].all()


def test_pgd_eps_zero_returns_clean(toy_data, toy_models):
    _, _, test, _ = toy_data
    std = toy_models[0]
    X, y = test.X[:10], test.y[:10]
    res = pgd(std, X, y, AttackConfig(eps=0.0, steps=3, restarts=2), seed=5)
    assert np.array_equal(res.x_adv, X)
    clean_correct = std.predict(X) == y
    assert np.array_equal(res.success, ~clean_correct)


def test_pgd_deterministic(toy_data, toy_models):
    _, _, test, _ = toy_data
    std = toy_models[0]
    X, y = test.X[:15], test.y[:15]
    cfg = AttackConfig(eps=0.05, steps=6, restarts=3)
    a = pgd(std, X, y, cfg, seed=5)
    b = pgd(std, X, y, cfg, seed=5)
    assert np.array_equal(a.x_adv, b.x_adv)
    assert np.array_equal(np.atleast_1d(a.loss), np.atleast_1d(b.loss))


# ---- adaptive ----

def test_composite_grad_matches_fd(toy_models):
    std, _, enc = toy_models
    rng = Rng(123, "fd-points")
    checked = 0
    while checked < 5:
        x = rng.uniform(0.05, 0.95, 2)
        target = int(rng.integers(1, 4))
        mf, mh = _target_margins(std, enc, x, target)
        lam = 1.0
        # stay away from the max() kink where FD is one-sided
        if abs(mf - lam * mh) < 1e-4:
            continue
        got = _composite_grad(std, enc, x, target, lam)

        def obj(v):
            a, b = _target_margins(std, enc, v, target)
            return max(a, lam * b)

        want = fd_grad(obj, x)
        assert rel_err(got, want) < 1e-6
        checked += 1


def test_target_margins_match_direct_computation(toy_models):
    std, _, enc = toy_models
    x = np.array([0.4, 0.6])
    mf, mh = _target_margins(std, enc, x, 2)
    f = std.logits(x.reshape(1, -1))[0]
    h = enc.alignment_scores(x.reshape(1, -1))[0]
    assert mf == max(f[0], f[2]) - f[1]
    assert mh == max(h[0], h[2]) - h[1]


def test_adaptive_requires_differentiable_encoder(toy_models):
    std = toy_models[0]
    frozen = FrozenEncoder(np.ones((4, 3)), np.eye(3))
    shield = MultiShield(std, frozen)
    with pytest.raises(RuntimeError, match="differentiable"):
        adaptive_attack(shield, np.array([0.5, 0.5]), 1,
                        AttackConfig(steps=2, restarts=1), seed=5)


def test_adaptive_validates_label(toy_models):
    std, _, enc = toy_models
    shield = MultiShield(std, enc)
    with pytest.raises(ValueError, match="out of range"):
        adaptive_attack(shield, np.array([0.5, 0.5]), 9,
                        AttackConfig(steps=2, restarts=1), seed=5)


def test_adaptive_success_means_accepted_as_target(toy_data, toy_models):
    _, _, test, _ = toy_data
    std, _, enc = toy_models
    shield = MultiShield(std, enc)
    cfg = AttackConfig(eps=0.05, steps=40, restarts=3, k_t=2, momentum=0.75)
    successes = 0
    # the test split is ordered by class, so stride across it to hit all three
    for i in range(0, 900, 25):
        x, y = test.X[i], int(test.y[i])
        res = adaptive_attack(shield, x, y, cfg, seed=5, sample_index=i)
        assert feasible(x.reshape(1, -1), res.x_adv.reshape(1, -1),
                        cfg.eps, cfg.p)
        if res.success:
            successes += 1
            assert res.target is not None and res.target != y
            dec = shield.decide(res.x_adv)
            assert dec.final_label == res.target
            assert dec.accepted
        else:
            assert res.target is None
    assert successes > 0


def test_adaptive_deterministic_and_traced(toy_data, toy_models):
    _, _, test, _ = toy_data
    std, _, enc = toy_models
    shield = MultiShield(std, enc)
    cfg = AttackConfig(eps=0.05, steps=5, restarts=2, k_t=2)
    x, y = test.X[3], int(test.y[3])

    rows = []
    a = adaptive_attack(shield, x, y, cfg, seed=5, sample_index=3,
                        trace=rows.append)
    b = adaptive_attack(shield, x, y, cfg, seed=5, sample_index=3)
    assert np.array_equal(a.x_adv, b.x_adv)
    assert a.success == b.success and a.target == b.target

    assert rows
    keys = {"target", "restart", "step", "objective", "margin_f", "margin_h",
            "lam"}
    assert all(set(r) == keys for r in rows)
    assert all(r["target"] != y for r in rows)
    assert len(rows) <= cfg.k_t * cfg.restarts * cfg.steps
