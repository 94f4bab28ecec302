"""Input validation helpers shared by the estimators and pipeline functions."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .records import ActivityLabel


def check_features(X, n_features: int | None = 48) -> np.ndarray:
    """Return ``X`` as a finite float64 2-D array with the expected width."""
    X = check_array(X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} features, got {X.shape[1]}")
    return X


def check_labels(y, n_samples: int | None = None) -> list[ActivityLabel]:
    """Coerce labels (``ActivityLabel`` or ``"app/activity"`` strings)."""
    labels = [ActivityLabel.parse(v) for v in y]
    if n_samples is not None and len(labels) != n_samples:
        raise ValueError(f"got {len(labels)} labels for {n_samples} samples")
    return labels


def check_probabilities(P, atol: float = 1e-9) -> np.ndarray:
    """Validate a matrix (or single row) of probability vectors."""
    P = np.asarray(P, dtype=float)
    if P.ndim == 1:
        P = P.reshape(1, -1)
    if P.ndim != 2 or P.shape[1] == 0:
        raise ValueError("probability vectors must be non-empty")
    if not np.all(np.isfinite(P)) or np.any(P < 0) or np.any(P > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    if np.any(np.abs(P.sum(axis=1) - 1.0) > atol):
        raise ValueError("probability vectors must sum to 1")
    return P


def check_threshold(threshold: float) -> float:
    threshold = float(threshold)
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    return threshold
