"""Known-or-unknown verdicts by thresholding the top softmax probability.

An input is accepted as its most probable trained activity only when that
probability reaches the threshold; otherwise it is rejected as traffic from
an activity the model was never trained on.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dnn import DEFAULT_THRESHOLD, ModelArtifact, predict_proba
from .records import ActivityLabel
from .validation import check_labels, check_probabilities, check_threshold

__all__ = [
    "DEFAULT_THRESHOLD",
    "Histogram",
    "Prediction",
    "SweepReport",
    "classify",
    "classify_batch",
    "confidence_histogram",
    "sweep_from_proba",
    "sweep_threshold",
]


@dataclass(frozen=True)
class Prediction:
    probabilities: np.ndarray
    p_max: float
    argmax_index: int
    label: ActivityLabel | None  # None means rejected as unknown
    threshold: float

    @property
    def is_known(self) -> bool:
        return self.label is not None

    @property
    def verdict(self) -> str:
        return str(self.label) if self.label is not None else "unknown"


def classify(probabilities, threshold: float, label_map: Sequence[ActivityLabel]) -> Prediction:
    """Accept the argmax label iff ``p_max >= threshold``.

    Ties for the maximum go to the lowest index.
    """
    p = np.asarray(probabilities, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("classify needs a non-empty 1-D probability vector")
    check_probabilities(p)
    threshold = check_threshold(threshold)
    if len(label_map) != p.size:
        raise ValueError(f"label_map has {len(label_map)} entries for {p.size} probabilities")
    k = int(np.argmax(p))
    p_max = float(p[k])
    label = label_map[k] if p_max >= threshold else None
    return Prediction(p, p_max, k, label, threshold)


def classify_batch(P, threshold: float, label_map: Sequence[ActivityLabel]) -> list[Prediction]:
    P = check_probabilities(P)
    return [classify(row, threshold, label_map) for row in P]


def _p_max(items) -> np.ndarray:
    """p_max values from Predictions, a probability matrix, or a flat array of p_max."""
    if len(items) and isinstance(items[0], Prediction):
        return np.array([p.p_max for p in items], dtype=float)
    arr = np.asarray(items, dtype=float)
    if arr.ndim == 2:
        return arr.max(axis=1)
    return arr.reshape(-1)


@dataclass
class Histogram:
    edges: np.ndarray
    known_counts: np.ndarray
    unknown_counts: np.ndarray

    def write_csv(self, stream) -> None:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["bin_lo", "bin_hi", "known_count", "unknown_count"])
        for lo, hi, k, u in zip(self.edges[:-1], self.edges[1:], self.known_counts, self.unknown_counts):
            writer.writerow([repr(float(lo)), repr(float(hi)), int(k), int(u)])


def confidence_histogram(known, unknown, bins: int = 20) -> Histogram:
    """Count p_max of known and unknown instances in uniform bins over [0, 1].

    Bins are ``[edge_i, edge_{i+1})`` except the last, which also holds 1.0.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    edges = np.linspace(0.0, 1.0, bins + 1)

    def counts(values):
        values = _p_max(values)
        if values.size and (np.any(values < 0) or np.any(values > 1)):
            raise ValueError("confidence values must lie in [0, 1]")
        idx = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, bins - 1)
        return np.bincount(idx, minlength=bins)

    return Histogram(edges, counts(known), counts(unknown))


@dataclass
class SweepReport:
    taus: np.ndarray
    known_correct: np.ndarray
    known_rejected: np.ndarray
    unknown_rejected: np.ndarray
    n_known: int
    n_unknown: int
    recommended_tau: float

    @property
    def known_accuracy(self) -> np.ndarray:
        return self.known_correct / self.n_known

    @property
    def unknown_rejection(self) -> np.ndarray:
        return self.unknown_rejected / self.n_unknown

    def write_csv(self, stream) -> None:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["tau", "known_acc", "unknown_rej", "known_correct", "known_rejected",
                         "unknown_rejected", "n_known", "n_unknown"])
        for i, tau in enumerate(self.taus):
            writer.writerow([
                repr(float(tau)), repr(float(self.known_accuracy[i])), repr(float(self.unknown_rejection[i])),
                int(self.known_correct[i]), int(self.known_rejected[i]), int(self.unknown_rejected[i]),
                self.n_known, self.n_unknown,
            ])


def sweep_from_proba(P_known, y_known, P_unknown, grid=None) -> SweepReport:
    """Threshold sweep from precomputed probabilities.

    ``y_known`` holds the true output-node index of each known instance.
    The recommended threshold maximises the mean of known accuracy and
    unknown rejection, preferring the larger threshold on ties.
    """
    grid = np.linspace(0.0, 1.0, 101) if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("threshold grid is empty")
    if np.any(grid < 0) or np.any(grid > 1):
        raise ValueError("thresholds must lie in [0, 1]")
    P_known = check_probabilities(P_known)
    P_unknown = check_probabilities(P_unknown)
    y_known = np.asarray(y_known, dtype=int)
    if len(P_known) == 0 or len(P_unknown) == 0:
        raise ValueError("sweep needs non-empty known and unknown sets")
    if len(y_known) != len(P_known):
        raise ValueError("y_known length does not match known probabilities")

    grid = np.sort(grid)
    known_pmax = P_known.max(axis=1)
    known_hit = P_known.argmax(axis=1) == y_known
    unknown_pmax = P_unknown.max(axis=1)
    accepted = known_pmax[None, :] >= grid[:, None]
    known_correct = (accepted & known_hit[None, :]).sum(axis=1)
    known_rejected = (~accepted).sum(axis=1)
    unknown_rejected = (unknown_pmax[None, :] < grid[:, None]).sum(axis=1)

    n_k, n_u = len(P_known), len(P_unknown)
    # integer score avoids float ties: (acc + rej) * n_k * n_u
    score = known_correct.astype(np.int64) * n_u + unknown_rejected.astype(np.int64) * n_k
    best = np.flatnonzero(score == score.max())[-1]
    return SweepReport(grid, known_correct, known_rejected, unknown_rejected, n_k, n_u, float(grid[best]))


def sweep_threshold(artifact: ModelArtifact, X_known, y_known, X_unknown, grid=None) -> SweepReport:
    """Sweep thresholds for a trained artifact on raw (unscaled) feature sets.

    ``y_known`` are the true labels of the known set; all must be in the
    artifact's label map.
    """
    labels = check_labels(y_known, len(X_known))
    index = {lab: i for i, lab in enumerate(artifact.label_map)}
    missing = {str(lab) for lab in labels if lab not in index}
    if missing:
        raise ValueError(f"known set has untrained labels: {sorted(missing)}")
    y_idx = np.array([index[lab] for lab in labels], dtype=int)
    return sweep_from_proba(
        predict_proba(artifact, X_known), y_idx, predict_proba(artifact, X_unknown), grid
    )
