"""Abstention-aware metrics, evaluation scenarios, sweeps, and reports.

Metric conventions:
  - Clean accuracy counts rejections as errors: the defense pays for every
    abstention on clean data.
  - Robust accuracy counts a sample as safe if it is accepted and correct or
    rejected; only accepted wrong answers are failures. For a model with no
    rejection path this reduces to plain accuracy.

The naive adversarial inputs for a model are crafted once against the bare
classifier and shared by the Baseline and Multi-Shield scenarios, so those
two rows describe the same inputs seen with and without the shield.

CSV files are written with repr'd floats and explicit newlines: rerunning
the same evaluation must reproduce them byte for byte. Wall-clock attack
timings are reported only in the text report, never in CSVs.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import hashlib
import json
import os
import platform
from dataclasses import dataclass

import numpy as np

from .attacks import AttackConfig, adaptive_attack, pgd
from .data import Dataset
from .shield import MultiShield, write_decision_log


@dataclass
class ScenarioMetrics:
    """Outcome counts for one pool of decisions."""

    n: int
    accepted_correct: int
    accepted_wrong: int
    rejected: int

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("metrics need at least one sample")
        if self.accepted_correct + self.accepted_wrong + self.rejected != self.n:
            raise ValueError("outcome counts do not add up to n")

    @property
    def accuracy(self) -> float:
        return self.accepted_correct / self.n

    @property
    def robust_accuracy(self) -> float:
        return (self.accepted_correct + self.rejected) / self.n

    @property
    def rejection_ratio(self) -> float:
        return self.rejected / self.n


def counts_from(final_labels, y, K: int) -> ScenarioMetrics:
    final = np.asarray(final_labels, dtype=np.int64).ravel()
    yv = np.asarray(y, dtype=np.int64).ravel()
    if final.size == 0:
        raise ValueError("metrics need at least one sample")
    if final.shape != yv.shape:
        raise ValueError("label arrays differ in length")
    if ((final < 1) | (final > K + 1)).any():
        raise ValueError(f"final labels must lie in 1..{K + 1}")
    if ((yv < 1) | (yv > K)).any():
        raise ValueError(f"true labels must lie in 1..{K}")
    rejected = int((final == K + 1).sum())
    correct = int(((final == yv) & (final <= K)).sum())
    wrong = final.size - rejected - correct
    return ScenarioMetrics(final.size, correct, wrong, rejected)


def clean_accuracy(final_labels, y, K: int) -> float:
    """Fraction answered correctly; a rejection is not a correct answer."""
    return counts_from(final_labels, y, K).accuracy


def robust_accuracy(final_labels, y, K: int) -> float:
    """Fraction accepted-and-correct or rejected."""
    return counts_from(final_labels, y, K).robust_accuracy


def rejection_ratio(final_labels, K: int) -> float:
    final = np.asarray(final_labels, dtype=np.int64).ravel()
    if final.size == 0:
        raise ValueError("metrics need at least one sample")
    if ((final < 1) | (final > K + 1)).any():
        raise ValueError(f"final labels must lie in 1..{K + 1}")
    return float((final == K + 1).sum() / final.size)


@dataclass
class EvalOutcome:
    model: str
    scenario: str
    clean: ScenarioMetrics
    adversarial: ScenarioMetrics | None


# ---- scenario orchestration ----

def _adaptive_one(args):
    shield, x, y, cfg, seed, index = args
    res = adaptive_attack(shield, x, int(y), cfg, seed, sample_index=index)
    dec = shield.decide(res.x_adv)
    return index, dec, res.duration


def run_adaptive(shield: MultiShield, X, y, cfg: AttackConfig, seed: int,
                 workers: int = 1, sample_offset: int = 0):
    """Per-sample adaptive attacks; returns (decisions, total_seconds).

    Every sample derives its randomness from (seed, its own index), so any
    worker count produces identical decisions.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    yv = np.asarray(y, dtype=np.int64).ravel()
    jobs = [(shield, X[i], int(yv[i]), cfg, seed, sample_offset + i)
            for i in range(X.shape[0])]
    decisions = [None] * X.shape[0]
    total = 0.0
    if workers <= 1:
        results = map(_adaptive_one, jobs)
    else:
        pool = concurrent.futures.ProcessPoolExecutor(max_workers=workers)
        try:
            results = list(pool.map(_adaptive_one, jobs, chunksize=8))
        finally:
            pool.shutdown()
    for index, dec, dur in results:
        decisions[index - sample_offset] = dec
        total += dur
    return decisions, total


def run_evaluation(models: dict, encoder, test: Dataset,
                   attack_cfg: AttackConfig, adaptive_cfg: AttackConfig | None,
                   seed: int, workers: int = 1, log_dir: str | None = None):
    """Evaluate every model under Baseline, Multi-Shield, and (with
    adaptive_cfg given) Multi-Shield-Adaptive scenarios.

    adaptive_cfg None drops the adaptive scenario, giving a two-scenario
    report. A frozen encoder cannot score perturbed inputs, so with one the
    adaptive scenario must be disabled (enabled -> refusal) and the shield
    rows degrade to clean-only metrics with a note.

    Returns (outcomes, timings, notes). timings is a list of
    (label, total_seconds, mean_seconds) rows for the text report. With
    log_dir set, per-sample decision logs for the shield scenarios are
    written there.
    """
    outcomes: list[EvalOutcome] = []
    timings: list[tuple[str, float, float]] = []
    notes: list[str] = []
    K = test.K
    n = test.n
    index = np.arange(n)
    frozen = not getattr(encoder, "differentiable", False)
    if frozen:
        if adaptive_cfg is not None:
            raise RuntimeError(
                "the adaptive scenario needs a differentiable encoder; "
                "disable it (attack.adaptive = null) or train the encoder "
                "instead of loading frozen embeddings")
        notes.append(
            "encoder is frozen (precomputed embeddings): shield metrics are "
            "clean-only")

    def log(name, tag, decisions):
        if log_dir is not None:
            write_decision_log(
                os.path.join(log_dir, f"decisions_{name}_{tag}.csv"),
                index, test.y, decisions)

    for name, clf in models.items():
        shield = MultiShield(clf, encoder)

        clean_base = counts_from(clf.predict(test.X), test.y, K)
        if frozen:
            clean_decisions = shield.decide_by_index(test.X, index)
        else:
            clean_decisions = shield.decide_batch(test.X)
        log(name, "clean", clean_decisions)
        clean_shield = counts_from(
            [d.final_label for d in clean_decisions], test.y, K)

        naive = pgd(clf, test.X, test.y, attack_cfg, seed)
        timings.append((f"{name} / naive attack", naive.duration,
                        naive.duration / n))
        adv_base = counts_from(clf.predict(naive.x_adv), test.y, K)
        outcomes.append(EvalOutcome(name, "Baseline", clean_base, adv_base))

        if frozen:
            outcomes.append(EvalOutcome(name, "Multi-Shield", clean_shield,
                                        None))
            continue

        naive_decisions = shield.decide_batch(naive.x_adv)
        log(name, "naive", naive_decisions)
        adv_shield = counts_from(
            [d.final_label for d in naive_decisions], test.y, K)
        outcomes.append(EvalOutcome(name, "Multi-Shield", clean_shield,
                                    adv_shield))

        if adaptive_cfg is None:
            continue
        adaptive_decisions, total = run_adaptive(
            shield, test.X, test.y, adaptive_cfg, seed, workers=workers)
        log(name, "adaptive", adaptive_decisions)
        timings.append((f"{name} / adaptive attack", total, total / n))
        adv_adaptive = counts_from(
            [d.final_label for d in adaptive_decisions], test.y, K)
        outcomes.append(EvalOutcome(name, "Multi-Shield-Adaptive",
                                    clean_shield, adv_adaptive))

    return outcomes, timings, notes


# ---- epsilon sweep ----

@dataclass
class SweepRow:
    eps: float
    baseline: ScenarioMetrics
    shield: ScenarioMetrics


def epsilon_sweep(clf, encoder, test: Dataset, eps_values,
                  cfg: AttackConfig, seed: int) -> list[SweepRow]:
    """Baseline and shield metrics at each radius in a strictly increasing
    grid. The zero radius, when present, is evaluated on the clean inputs
    directly."""
    eps_values = [float(e) for e in eps_values]
    if not eps_values:
        raise ValueError("eps grid is empty")
    for a, b in zip(eps_values, eps_values[1:]):
        if not b > a:
            raise ValueError(
                f"eps grid must be strictly increasing, got {a} before {b}")
    if eps_values[0] < 0:
        raise ValueError("eps must be non-negative")
    if not getattr(encoder, "differentiable", False):
        raise RuntimeError("epsilon sweep requires a differentiable encoder")
    shield = MultiShield(clf, encoder)
    rows = []
    for eps in eps_values:
        if eps == 0.0:
            x_adv = test.X
        else:
            x_adv = pgd(clf, test.X, test.y,
                        dataclasses.replace(cfg, eps=eps), seed).x_adv
        rows.append(SweepRow(
            eps,
            counts_from(clf.predict(x_adv), test.y, test.K),
            counts_from(shield.final_labels(x_adv), test.y, test.K)))
    return rows


# ---- output files ----

def _fmt(v: float) -> str:
    return repr(float(v))


def write_report_csv(path: str, outcomes: list[EvalOutcome]) -> None:
    cols = ["model", "scenario",
            "clean_accuracy", "clean_rejection_ratio",
            "robust_accuracy", "adv_rejection_ratio",
            "adv_accepted_correct", "adv_accepted_wrong", "adv_rejected"]
    lines = [",".join(cols)]
    for o in outcomes:
        row = [o.model, o.scenario,
               _fmt(o.clean.accuracy), _fmt(o.clean.rejection_ratio)]
        if o.adversarial is None:
            row += ["", "", "", "", ""]
        else:
            a = o.adversarial
            row += [_fmt(a.robust_accuracy), _fmt(a.rejection_ratio),
                    str(a.accepted_correct), str(a.accepted_wrong),
                    str(a.rejected)]
        lines.append(",".join(row))
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")


def _pct(v: float) -> str:
    return f"{100.0 * v:.1f}"


def write_report_txt(path: str, outcomes: list[EvalOutcome],
                     timings, notes) -> None:
    """Human-readable table; percentages carry one decimal. This is the only
    place attack wall-clock timings appear."""
    headers = ["Model", "Scenario", "Clean acc", "Clean rej",
               "Robust acc", "Adv rej"]
    table = []
    for o in outcomes:
        row = [o.model, o.scenario, _pct(o.clean.accuracy),
               _pct(o.clean.rejection_ratio)]
        if o.adversarial is None:
            row += ["-", "-"]
        else:
            row += [_pct(o.adversarial.robust_accuracy),
                    _pct(o.adversarial.rejection_ratio)]
        table.append(row)
    widths = [max(len(headers[c]), *(len(r[c]) for r in table))
              for c in range(len(headers))]
    def line(cells):
        left = cells[:2]
        right = cells[2:]
        parts = [left[i].ljust(widths[i]) for i in range(2)]
        parts += [right[i].rjust(widths[i + 2]) for i in range(len(right))]
        return "  ".join(parts).rstrip()
    out = [line(headers), line(["-" * w for w in widths])]
    out += [line(r) for r in table]
    out.append("")
    out.append("Percentages. Robust acc counts rejected samples as safe; "
               "clean acc does not.")
    if timings:
        out.append("")
        out.append("Attack timing (wall clock)")
        for label, total, mean in timings:
            out.append(f"  {label}: total {total:.3f} s, "
                       f"mean {1000.0 * mean:.1f} ms/sample")
    if notes:
        out.append("")
        out.append("Warnings")
        for note in notes:
            out.append(f"  - {note}")
    with open(path, "w", newline="") as f:
        f.write("\n".join(out) + "\n")


def write_sweep_csv(path: str, rows: list[SweepRow]) -> None:
    cols = ["eps", "baseline_robust_accuracy", "shield_robust_accuracy",
            "shield_rejection_ratio", "shield_accepted_correct",
            "shield_accepted_wrong", "shield_rejected"]
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join([
            _fmt(r.eps), _fmt(r.baseline.robust_accuracy),
            _fmt(r.shield.robust_accuracy), _fmt(r.shield.rejection_ratio),
            str(r.shield.accepted_correct), str(r.shield.accepted_wrong),
            str(r.shield.rejected)]))
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")


def plot_sweep(path: str, rows: list[SweepRow]) -> None:
    """Robustness and rejection against the perturbation radius, as SVG."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    eps = [r.eps for r in rows]
    # fixed hashsalt keeps the generated element ids, and so the bytes,
    # identical across runs
    with plt.rc_context({"svg.hashsalt": "multishield"}):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        ax.plot(eps, [r.baseline.robust_accuracy for r in rows],
                marker="o", label="baseline accuracy")
        ax.plot(eps, [r.shield.robust_accuracy for r in rows],
                marker="s", label="shield robust accuracy")
        ax.plot(eps, [r.shield.rejection_ratio for r in rows],
                marker="^", linestyle="--", label="shield rejection ratio")
        ax.set_xlabel("perturbation radius")
        ax.set_ylabel("fraction of test set")
        ax.set_ylim(-0.02, 1.02)
        ax.legend(loc="best")
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def write_manifest(path: str, config_text: str, seed: int,
                   package_version: str) -> None:
    """Reproducibility record: what ran, under which seed, on which stack.
    Deliberately contains no timestamps."""
    payload = {
        "config_sha256": hashlib.sha256(config_text.encode("utf-8")).hexdigest(),
        "seed": int(seed),
        "package_version": package_version,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
    }
    with open(path, "w", newline="") as f:
        f.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")
