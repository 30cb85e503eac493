"""Gradient evasion attacks: FGSM, projected gradient descent, and a
defense-aware targeted attack on the full rejection pipeline.

All attacks descend the decision-loss f_y - max_{j!=y} f_j (negative once
the classifier is fooled) or, for the adaptive attack, a per-target
composite that also drags the alignment scores toward the target class.
Inputs live in the box [0, 1]^d and perturbations in an lp ball; every step
projects back onto both.

Determinism: each sample draws its restart initializations from its own
named random stream, keyed by (seed, sample index). Batched and one-at-a-time
runs therefore produce identical outputs, and so do runs split across
workers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape
from .rng import sample_rng
from .shield import MultiShield


def _norm_p(p) -> float:
    if p in (2, 2.0, "2"):
        return 2.0
    if p in (np.inf, float("inf"), "inf", "linf"):
        return float("inf")
    raise ValueError(f"p must be 2 or inf, got {p!r}")


@dataclass
class AttackConfig:
    """Shared knobs for every attack in this module.

    alpha defaults to 2.5 * eps / steps when left as None. k_t, lam, and
    momentum only matter to the adaptive attack.
    """

    eps: float = 0.05
    alpha: float | None = None
    steps: int = 40
    restarts: int = 3
    p: float = float("inf")
    k_t: int = 2
    lam: float = 1.0
    momentum: float = 0.0

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError(f"eps must be non-negative, got {self.eps}")
        if self.alpha is not None and self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if self.steps < 1:
            raise ValueError(f"steps must be at least 1, got {self.steps}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be at least 1, got {self.restarts}")
        self.p = _norm_p(self.p)
        if self.k_t < 1:
            raise ValueError(f"k_t must be at least 1, got {self.k_t}")
        if self.lam < 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        if not (0 <= self.momentum < 1):
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")

    @property
    def resolved_alpha(self) -> float:
        if self.alpha is not None:
            return float(self.alpha)
        return 2.5 * self.eps / self.steps


@dataclass
class AttackResult:
    x_adv: np.ndarray
    loss: np.ndarray | float
    success: np.ndarray | bool
    duration: float
    target: int | None = None


# ---- elementary pieces ----

def dl_loss(logits, y):
    """f_y - max_{j != y} f_j. Scalar for a single logit vector, a row
    vector for a batch. Negative means the classifier prefers some other
    class; y is 1-based."""
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    L = np.atleast_2d(logits)
    yv = np.atleast_1d(np.asarray(y, dtype=np.int64))
    K = L.shape[1]
    if ((yv < 1) | (yv > K)).any():
        raise ValueError(f"label out of range 1..{K}")
    rows = np.arange(L.shape[0])
    masked = L.copy()
    masked[rows, yv - 1] = -np.inf
    out = L[rows, yv - 1] - masked.max(axis=1)
    return float(out[0]) if single else out


def project(delta, eps: float, p) -> np.ndarray:
    """Project perturbations onto the lp ball of radius eps, row-wise for a
    batch."""
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    p = _norm_p(p)
    delta = np.asarray(delta, dtype=np.float64)
    single = delta.ndim == 1
    D = np.atleast_2d(delta).copy()
    if p == float("inf"):
        D = np.clip(D, -eps, eps)
    else:
        norms = np.sqrt((D * D).sum(axis=1))
        over = norms > eps
        if over.any():
            D[over] = D[over] * (eps / norms[over])[:, None]
    return D[0] if single else D


def _dl_grad(classifier, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-row input gradient of the decision loss, batched."""
    tape = Tape()
    x_node = tape.input(X)
    logits = classifier.logits_node(tape, x_node)
    fy = tape.gather_rows(logits, np.asarray(y) - 1)
    other = tape.rowmax_excluding(logits, np.asarray(y) - 1)
    per_row = tape.sub(fy, other)
    total = tape.sum(per_row)
    (g,) = tape.gradient(total, [x_node])
    return g


def fgsm(classifier, x, y, eps: float) -> np.ndarray:
    """One signed step against the decision loss, clipped to the box."""
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    yv = np.atleast_1d(np.asarray(y, dtype=np.int64))
    g = _dl_grad(classifier, X, yv)
    out = np.clip(X - eps * np.sign(g), 0.0, 1.0)
    return out[0] if single else out


def _step_direction(grad: np.ndarray, p: float) -> np.ndarray:
    if p == float("inf"):
        return np.sign(grad)
    norms = np.sqrt((grad * grad).sum(axis=1, keepdims=True))
    out = np.zeros_like(grad)
    nz = norms[:, 0] > 0
    out[nz] = grad[nz] / norms[nz]
    return out


def _random_init(rng, eps: float, d: int, p: float) -> np.ndarray:
    u = rng.uniform(-eps, eps, size=d)
    return project(u, eps, p)


def pgd(classifier, x, y, cfg: AttackConfig, seed: int,
        sample_indices=None, warm_start=None) -> AttackResult:
    """Multi-restart projected gradient descent on the decision loss.

    Restart 0 starts at the clean input; later restarts start at a uniform
    random feasible point. After every step the perturbation is projected
    onto the lp ball and the box, and that post-step iterate becomes a
    candidate. A warm start, when given, is projected to feasibility and
    scored as a candidate too, so a warmed run can never end worse than the
    warm start itself. The lowest-loss candidate wins; ties keep the earlier
    one.
    """
    t0 = time.perf_counter()
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    n, d = X.shape
    yv = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if sample_indices is None:
        sample_indices = np.arange(n)
    sample_indices = np.atleast_1d(np.asarray(sample_indices, dtype=np.int64))
    alpha = cfg.resolved_alpha

    best_x = np.empty_like(X)
    best_loss = np.full(n, np.inf)

    def consider(cand: np.ndarray):
        loss = dl_loss(classifier.logits(cand), yv)
        loss = np.atleast_1d(loss)
        better = loss < best_loss
        best_x[better] = cand[better]
        best_loss[better] = loss[better]

    if warm_start is not None:
        w = np.atleast_2d(np.asarray(warm_start, dtype=np.float64))
        w = np.clip(X + project(w - X, cfg.eps, cfg.p), 0.0, 1.0)
        consider(w)

    rngs = [sample_rng(seed, int(si)) for si in sample_indices]
    for r in range(cfg.restarts):
        if r == 0:
            cur = X.copy()
        else:
            delta = np.stack([_random_init(rng, cfg.eps, d, cfg.p)
                              for rng in rngs])
            cur = np.clip(X + delta, 0.0, 1.0)
        for _ in range(cfg.steps):
            g = _dl_grad(classifier, cur, yv)
            cur = cur - alpha * _step_direction(g, cfg.p)
            cur = np.clip(X + project(cur - X, cfg.eps, cfg.p), 0.0, 1.0)
            consider(cur)

    success = best_loss < 0
    dur = time.perf_counter() - t0
    if single:
        return AttackResult(best_x[0], float(best_loss[0]),
                            bool(success[0]), dur)
    return AttackResult(best_x, best_loss, success, dur)


# ---- defense-aware attack ----

def _target_margins(classifier, encoder, x_row: np.ndarray, target: int):
    """Plain numpy evaluation of (margin_f, margin_h) at one input."""
    f = classifier.logits(x_row.reshape(1, -1))[0]
    h = encoder.alignment_scores(x_row.reshape(1, -1))[0]
    t0 = target - 1
    mf = np.delete(f, t0).max() - f[t0]
    mh = np.delete(h, t0).max() - h[t0]
    return float(mf), float(mh)


def _composite_grad(classifier, encoder, x_row: np.ndarray, target: int,
                    lam: float) -> np.ndarray:
    tape = Tape()
    x_node = tape.input(x_row.reshape(1, -1))
    t_arr = np.array([target - 1])
    f = classifier.logits_node(tape, x_node)
    mf = tape.sub(tape.rowmax_excluding(f, t_arr),
                  tape.gather_rows(f, t_arr))
    h = encoder.alignment_node(tape, x_node)
    mh = tape.sub(tape.rowmax_excluding(h, t_arr),
                  tape.gather_rows(h, t_arr))
    obj = tape.sum(tape.maximum(mf, tape.scale(mh, lam)))
    (g,) = tape.gradient(obj, [x_node])
    return g[0]


def adaptive_attack(shield: MultiShield, x, y: int, cfg: AttackConfig,
                    seed: int, sample_index: int = 0,
                    trace=None) -> AttackResult:
    """Targeted attack on the whole pipeline, one sample at a time.

    Targets are the k_t classes the clean classifier ranks highest, the true
    label excluded. For each target t the attack runs projected gradient
    descent on max(margin_f(t), lam * margin_h(t)), where margin_f < 0 means
    the classifier picks t and margin_h <= 0 means the alignment scores
    agree. When the objective plateaus for five steps while the alignment
    constraint is still violated, lam doubles, shifting effort onto the
    encoder. Success is declared only by running the actual decision rule on
    the candidate; the first target that comes back accepted as t wins.
    """
    encoder = shield.encoder
    if not getattr(encoder, "differentiable", False):
        raise RuntimeError("adaptive attack requires a differentiable encoder")
    classifier = shield.classifier
    t0 = time.perf_counter()
    x = np.asarray(x, dtype=np.float64).ravel()
    d = x.shape[0]
    K = shield.K
    if not (1 <= y <= K):
        raise ValueError(f"label {y} out of range 1..{K}")
    alpha = cfg.resolved_alpha

    clean = classifier.logits(x.reshape(1, -1))[0]
    ranked = [int(c) + 1 for c in np.argsort(-clean, kind="stable")]
    targets = [c for c in ranked if c != y][:cfg.k_t]

    rng = sample_rng(seed, sample_index, name="adaptive")
    overall_best_x = x.copy()
    overall_best_obj = np.inf

    for target in targets:
        best_x = None
        best_obj = np.inf
        for r in range(cfg.restarts):
            lam = cfg.lam
            if r == 0:
                cur = x.copy()
            else:
                cur = np.clip(x + _random_init(rng, cfg.eps, d, cfg.p), 0.0, 1.0)
            vel = np.zeros(d)
            no_improve = 0
            for step in range(cfg.steps):
                g = _composite_grad(classifier, encoder, cur, target, lam)
                vel = cfg.momentum * vel + g
                cur = cur - alpha * _step_direction(
                    vel.reshape(1, -1), cfg.p)[0]
                cur = np.clip(x + project(cur - x, cfg.eps, cfg.p), 0.0, 1.0)
                mf, mh = _target_margins(classifier, encoder, cur, target)
                obj = max(mf, lam * mh)
                if obj < best_obj:
                    best_obj = obj
                    best_x = cur.copy()
                    no_improve = 0
                else:
                    no_improve += 1
                if no_improve >= 5 and mh > 0:
                    lam *= 2.0
                    no_improve = 0
                if trace is not None:
                    trace({"target": target, "restart": r, "step": step,
                           "objective": obj, "margin_f": mf, "margin_h": mh,
                           "lam": lam})
        if best_obj < overall_best_obj:
            overall_best_obj = best_obj
            overall_best_x = best_x.copy()
        dec = shield.decide(best_x)
        if dec.final_label == target:
            return AttackResult(best_x, best_obj, True,
                                time.perf_counter() - t0, target=target)

    return AttackResult(overall_best_x, overall_best_obj, False,
                        time.perf_counter() - t0, target=None)
