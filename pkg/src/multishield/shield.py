"""Agreement-based rejection.

The classifier proposes a label j; the dual encoder scores every class by
alignment. The rejection score is the gap between the best alignment score
and the alignment score of j. The input is accepted exactly when that gap is
zero, i.e. when j is among the alignment maximizers; otherwise the decision
is the rejection label K+1. No tolerance is involved: agreement means
equality with the maximum, not approximate equality.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Decision:
    classifier_label: int      # j, 1-based
    scores: np.ndarray         # alignment scores, shape (K,)
    rejection_score: float     # max(scores) - scores[j-1]
    final_label: int           # j if accepted, else K+1
    accepted: bool


def rejection_score(scores: np.ndarray, j: int) -> float:
    """|max(scores) - scores[j-1]| for 1-based j."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    K = scores.shape[0]
    if not (1 <= j <= K):
        raise ValueError(f"label {j} out of range 1..{K}")
    return float(abs(scores.max() - scores[j - 1]))


def decision_from(scores: np.ndarray, j: int, K: int) -> Decision:
    """Pure decision rule: accept iff scores[j-1] attains the maximum.

    A tie at the top that includes j still accepts with label j, even if an
    argmax tie-break would name a different class.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.shape[0] != K:
        raise ValueError(f"expected {K} scores, got {scores.shape[0]}")
    if not (1 <= j <= K):
        raise ValueError(f"label {j} out of range 1..{K}")
    r = float(abs(scores.max() - scores[j - 1]))
    accepted = scores[j - 1] == scores.max()
    final = int(j) if accepted else K + 1
    return Decision(int(j), scores.copy(), r, final, bool(accepted))


class MultiShield:
    """Couples a classifier with a dual encoder through the agreement rule."""

    def __init__(self, classifier, encoder):
        if classifier.K != encoder.K:
            raise ValueError(
                f"classifier has {classifier.K} classes, encoder has "
                f"{encoder.K}")
        self.classifier = classifier
        self.encoder = encoder

    @property
    def K(self) -> int:
        return self.classifier.K

    @property
    def rejection_label(self) -> int:
        return self.K + 1

    def decide(self, x: np.ndarray) -> Decision:
        x = np.asarray(x, dtype=np.float64).reshape(1, -1)
        j = int(self.classifier.predict(x)[0])
        scores = np.asarray(self.encoder.alignment_scores(x))[0]
        return decision_from(scores, j, self.K)

    def decide_batch(self, X: np.ndarray) -> list[Decision]:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        j = self.classifier.predict(X)
        scores = np.atleast_2d(self.encoder.alignment_scores(X))
        return [decision_from(scores[i], int(j[i]), self.K)
                for i in range(X.shape[0])]

    def final_labels(self, X: np.ndarray) -> np.ndarray:
        """Vectorized decisions: 1-based labels with K+1 for rejection."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        j = self.classifier.predict(X)
        scores = np.atleast_2d(self.encoder.alignment_scores(X))
        rows = np.arange(X.shape[0])
        accepted = scores[rows, j - 1] == scores.max(axis=1)
        return np.where(accepted, j, self.K + 1).astype(np.int32)

    def decide_by_index(self, X: np.ndarray, indices) -> list[Decision]:
        """Decisions when the encoder serves precomputed embeddings keyed by
        sample index (frozen mode)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        j = self.classifier.predict(X)
        scores = self.encoder.alignment_scores_by_index(indices)
        return [decision_from(scores[i], int(j[i]), self.K)
                for i in range(X.shape[0])]


def write_decision_log(path: str, indices, true_labels, decisions) -> None:
    """CSV of one decision per row. Floats are written with repr so a rerun
    with identical inputs produces identical bytes."""
    decisions = list(decisions)
    if not decisions:
        raise ValueError("no decisions to log")
    K = decisions[0].scores.shape[0]
    cols = ["index", "true_label", "classifier_label"]
    cols += [f"score_{k}" for k in range(1, K + 1)]
    cols += ["rejection_score", "final_label"]
    lines = [",".join(cols)]
    for idx, y, dec in zip(indices, true_labels, decisions):
        row = [str(int(idx)), str(int(y)), str(dec.classifier_label)]
        row += [repr(float(s)) for s in dec.scores]
        row += [repr(float(dec.rejection_score)), str(dec.final_label)]
        lines.append(",".join(row))
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")
