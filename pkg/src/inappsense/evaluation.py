"""Open-set metrics and the leave-one-app-out protocol."""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dnn import DEFAULT_THRESHOLD, ModelConfig, TrainReport, predict_proba, train
from .features import FeatureTable
from .openset import Prediction, classify_batch, sweep_from_proba
from .records import ActivityLabel
from .validation import check_labels, check_threshold

__all__ = [
    "EvalReport",
    "LOAOReport",
    "LOAORun",
    "MisclassMatrix",
    "accuracy_known",
    "accuracy_unknown",
    "evaluate_open_set",
    "leave_one_app_out",
    "misclassification_matrix",
]

log = logging.getLogger(__name__)


def accuracy_known(predictions: Sequence[Prediction], true_labels) -> float:
    """Fraction of known instances accepted with the correct label.

    A rejected known instance counts as an error.
    """
    labels = check_labels(true_labels)
    if len(labels) != len(predictions):
        raise ValueError(f"{len(predictions)} predictions for {len(labels)} labels")
    if not predictions:
        raise ValueError("no known instances to score")
    return sum(p.label == lab for p, lab in zip(predictions, labels)) / len(predictions)


def accuracy_unknown(predictions: Sequence[Prediction]) -> float:
    """Fraction of truly-unknown instances rejected (noise detection rate)."""
    if not predictions:
        raise ValueError("no unknown instances to score")
    return sum(not p.is_known for p in predictions) / len(predictions)


@dataclass
class EvalReport:
    known_accuracy: float
    unknown_rejection: float
    correct: int
    wrong_label: int
    falsely_rejected: int
    falsely_accepted: int
    n_known: int
    n_unknown: int
    threshold: float
    precision: dict = field(default_factory=dict)
    recall: dict = field(default_factory=dict)

    def summary(self) -> str:
        lines = [
            f"threshold            {self.threshold:.4f}",
            f"known instances      {self.n_known}",
            f"unknown instances    {self.n_unknown}",
            f"known accuracy       {self.known_accuracy:.4f}",
            f"unknown rejection    {self.unknown_rejection:.4f}",
            f"correct              {self.correct}",
            f"wrong label          {self.wrong_label}",
            f"falsely rejected     {self.falsely_rejected}",
            f"falsely accepted     {self.falsely_accepted}",
        ]
        return "\n".join(lines) + "\n"

    def write_csv(self, stream) -> None:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["app", "activity", "precision", "recall"])
        for lab in sorted(self.recall):
            prec = self.precision.get(lab)
            writer.writerow([lab.app, lab.activity, "" if prec is None else repr(prec), repr(self.recall[lab])])


def evaluate_open_set(
    known: Sequence[Prediction],
    known_labels,
    unknown: Sequence[Prediction],
    threshold: float,
) -> EvalReport:
    labels = check_labels(known_labels, len(known))
    correct = sum(p.label == lab for p, lab in zip(known, labels))
    rejected = sum(not p.is_known for p in known)
    accepted_unknown = sum(p.is_known for p in unknown)

    precision, recall = {}, {}
    for lab in sorted(set(labels)):
        hits = sum(p.label == lab and t == lab for p, t in zip(known, labels))
        claimed = sum(p.label == lab for p in known) + sum(p.label == lab for p in unknown)
        recall[lab] = hits / sum(t == lab for t in labels)
        precision[lab] = hits / claimed if claimed else None
    return EvalReport(
        known_accuracy=correct / len(known) if known else 0.0,
        unknown_rejection=1.0 - accepted_unknown / len(unknown) if unknown else 0.0,
        correct=correct,
        wrong_label=len(known) - correct - rejected,
        falsely_rejected=rejected,
        falsely_accepted=accepted_unknown,
        n_known=len(known),
        n_unknown=len(unknown),
        threshold=threshold,
        precision=precision,
        recall=recall,
    )


@dataclass
class MisclassMatrix:
    """Where accepted unknown traffic went, as % of each held-out app's accepted instances."""

    rows: list[str]
    columns: list[str]
    percent: np.ndarray
    counts: np.ndarray

    @property
    def empty_rows(self) -> list[str]:
        return [r for r, n in zip(self.rows, self.counts.sum(axis=1)) if n == 0]

    def row(self, app: str) -> dict[str, float]:
        i = self.rows.index(app)
        return dict(zip(self.columns, self.percent[i]))

    def write_csv(self, stream) -> None:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["held_out_app", "accepted"] + self.columns)
        for i, app in enumerate(self.rows):
            n = int(self.counts[i].sum())
            cells = ["" if n == 0 else f"{v:.2f}" for v in self.percent[i]]
            writer.writerow([app, n] + cells)


def misclassification_matrix(
    predictions_by_app: Mapping[str, Sequence[Prediction]],
    label_map: Sequence[ActivityLabel] | None = None,
    columns: Sequence[str] | None = None,
) -> MisclassMatrix:
    """Distribution over trained apps of each held-out app's accepted instances.

    Predicted labels carry their app, so ``label_map`` only fixes the
    column set when ``columns`` is not given.  Rows with no accepted
    instance are all-zero and listed in :attr:`MisclassMatrix.empty_rows`.
    """
    if columns is None:
        if label_map is None:
            raise ValueError("need label_map or columns")
        columns = sorted({lab.app for lab in label_map})
    columns = list(columns)
    col = {app: j for j, app in enumerate(columns)}
    rows = list(predictions_by_app)
    counts = np.zeros((len(rows), len(columns)), dtype=int)
    for i, app in enumerate(rows):
        for p in predictions_by_app[app]:
            if p.is_known:
                counts[i, col[p.label.app]] += 1
    totals = counts.sum(axis=1, keepdims=True)
    percent = np.divide(100.0 * counts, totals, out=np.zeros(counts.shape), where=totals > 0)
    return MisclassMatrix(rows, columns, percent, counts)


@dataclass
class LOAORun:
    held_out: str
    trained_apps: list[str]
    label_map: list[ActivityLabel]
    threshold: float
    n_unknown: int
    n_rejected: int
    train_report: TrainReport = field(repr=False)

    @property
    def detection_rate(self) -> float:
        return self.n_rejected / self.n_unknown

    @property
    def val_accuracy(self) -> float:
        return self.train_report.final_val_accuracy


@dataclass
class LOAOReport:
    runs: list[LOAORun]
    matrix: MisclassMatrix
    skipped: list[str] = field(default_factory=list)

    @property
    def mean_rate(self) -> float:
        return float(np.mean([r.detection_rate for r in self.runs])) if self.runs else 0.0

    def write_csv(self, stream) -> None:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["test", "trained_apps", "held_out_app", "detection_rate",
                         "n_unknown", "n_rejected", "threshold", "val_accuracy"])
        for i, run in enumerate(self.runs, start=1):
            writer.writerow([f"T{i}", " ".join(run.trained_apps), run.held_out, repr(run.detection_rate),
                             run.n_unknown, run.n_rejected, repr(run.threshold), repr(run.val_accuracy)])

    def summary(self) -> str:
        width = max([len(r.held_out) for r in self.runs] + [8])
        lines = [f"{'test':<5} {'held out':<{width}} {'detection':>9} {'tau':>7}  trained apps"]
        for i, run in enumerate(self.runs, start=1):
            lines.append(
                f"T{i:<4} {run.held_out:<{width}} {run.detection_rate:>9.1%} {run.threshold:>7.3f}  "
                + ", ".join(run.trained_apps)
            )
        lines.append(f"mean detection rate: {self.mean_rate:.1%}")
        for app in self.skipped:
            lines.append(f"skipped: {app}")
        return "\n".join(lines) + "\n"


def _drop_small_classes(table: FeatureTable) -> FeatureTable:
    labels = check_labels(table.labels)
    counts: dict[ActivityLabel, int] = {}
    for lab in labels:
        counts[lab] = counts.get(lab, 0) + 1
    small = sorted(lab for lab, n in counts.items() if n < 2)
    if not small:
        return table
    warnings.warn(f"dropping classes with fewer than 2 samples: {', '.join(map(str, small))}")
    return table.subset(np.array([counts[lab] >= 2 for lab in labels]))


def leave_one_app_out(
    table: FeatureTable,
    config: ModelConfig | None = None,
    tau_policy: str = "fixed",
    threshold: float = DEFAULT_THRESHOLD,
    grid=None,
    calibration_fraction: float = 0.5,
) -> LOAOReport:
    """Train without each app in turn and score rejection of its traffic.

    ``tau_policy="fixed"`` uses ``threshold`` for every run.  ``"sweep"``
    calibrates a threshold per run from the validation split and a seeded
    ``calibration_fraction`` of the held-out app's segments, then scores
    the remaining segments; this peeks at the held-out app and is only a
    diagnostic, never a deployable calibration.
    """
    if tau_policy not in ("fixed", "sweep"):
        raise ValueError(f"tau_policy must be 'fixed' or 'sweep', got {tau_policy!r}")
    threshold = check_threshold(threshold)
    config = config or ModelConfig()
    table = _drop_small_classes(table)
    apps_of = np.array(table.apps, dtype=object)
    apps = sorted(set(apps_of))
    if len(apps) < 2:
        raise ValueError("leave-one-app-out needs at least 2 apps")

    runs, skipped, rows = [], [], {}
    for held_out in apps:
        train_mask = apps_of != held_out
        train_table = table.subset(train_mask)
        if len(set(train_table.labels)) < 2:
            warnings.warn(f"skipping {held_out}: fewer than 2 trainable classes remain")
            skipped.append(held_out)
            continue
        unknown = table.subset(~train_mask)
        log.info("leave-one-app-out: holding out %s (%d segments)", held_out, len(unknown))
        artifact, report = train(train_table.X, train_table.labels, config)
        assert not any(lab.app == held_out for lab in artifact.label_map)

        P_unknown = predict_proba(artifact, unknown.X)
        tau = threshold
        if tau_policy == "sweep":
            rng = np.random.default_rng(np.random.SeedSequence([config.seed, apps.index(held_out)]))
            order = rng.permutation(len(unknown))
            n_cal = min(len(unknown) - 1, max(1, int(round(calibration_fraction * len(unknown)))))
            if n_cal < 1:
                warnings.warn(f"{held_out}: too few segments to calibrate; using fixed threshold")
            else:
                cal, P_unknown = np.sort(order[:n_cal]), P_unknown[np.sort(order[n_cal:])]
                val = report.val_index
                index = {lab: i for i, lab in enumerate(artifact.label_map)}
                y_val = np.array([index[train_table.labels[i]] for i in val])
                sweep = sweep_from_proba(
                    predict_proba(artifact, train_table.X[val]), y_val,
                    predict_proba(artifact, unknown.X[cal]), grid,
                )
                tau = sweep.recommended_tau
        preds = classify_batch(P_unknown, tau, artifact.label_map)
        rows[held_out] = preds
        runs.append(LOAORun(
            held_out=held_out,
            trained_apps=artifact.apps,
            label_map=list(artifact.label_map),
            threshold=tau,
            n_unknown=len(preds),
            n_rejected=sum(not p.is_known for p in preds),
            train_report=report,
        ))
    matrix = misclassification_matrix(rows, columns=apps)
    return LOAOReport(runs, matrix, skipped)
