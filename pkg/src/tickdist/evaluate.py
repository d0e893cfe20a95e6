"""Confusion-matrix evaluation with explicit undefined-value semantics.

Precision for a class that a model never predicted has no value; it is
carried as None (rendered "-" in tables, null in JSON) and any aggregate
that would include an undefined entry is itself undefined rather than
silently dropped.  Two cross-stock aggregations are provided: the
unweighted mean of per-stock metrics and the metrics of the pooled
(summed) confusion matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from tickdist.data import coarsen_labels

PROB_SUM_TOL = 1e-6


@dataclass(frozen=True)
class ConfusionMatrix:
    """Count table with true classes along rows, predictions along columns."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"counts must be square, got shape {counts.shape}")
        if (counts < 0).any():
            raise ValueError("counts must be nonnegative")
        object.__setattr__(self, "counts", counts)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.n_classes != other.n_classes:
            raise ValueError("cannot pool matrices with different class counts")
        return ConfusionMatrix(self.counts + other.counts)


@dataclass(frozen=True)
class MetricsReport:
    """Per-class recall/precision (None where undefined) plus accuracy."""

    recall: tuple
    precision: tuple
    accuracy: float

    @property
    def n_classes(self) -> int:
        return len(self.recall)


def classify(probs: np.ndarray) -> np.ndarray | int:
    """Argmax class per distribution; ties go to the lowest class index.

    Accepts a single vector [K] or a batch [n, K]; every row must be a
    probability vector (nonnegative, summing to 1).
    """
    arr = np.asarray(probs, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise ValueError(f"expected [n, K] probabilities with K >= 2, got shape {probs.shape}")
    if not np.isfinite(arr).all() or (arr < 0.0).any():
        raise ValueError("probabilities must be finite and nonnegative")
    sums = arr.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > PROB_SUM_TOL):
        raise ValueError("rows must sum to 1")
    labels = np.argmax(arr, axis=1).astype(np.int64)
    return int(labels[0]) if single else labels


def coarsen_predictions(labels5: np.ndarray) -> np.ndarray:
    """Map five-class argmax labels onto the three direction classes.

    Coarsening happens after the argmax, so count identities against the
    five-class matrix (merged rows/columns) hold exactly.
    """
    return coarsen_labels(labels5)


def confusion(true_labels, predicted_labels, n_classes: int) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise ValueError(f"label arrays must be equal-length vectors, got {t.shape} and {p.shape}")
    if len(t) and (t.min() < 0 or t.max() >= n_classes or p.min() < 0 or p.max() >= n_classes):
        raise ValueError(f"labels out of range for {n_classes} classes")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Recall, precision, accuracy from one matrix; empty matrix is an error.

    A class with an empty row has no recall; an empty column (the model
    never predicted the class) has no precision.  Both are carried as None.
    """
    total = cm.total
    if total == 0:
        raise ValueError("metrics are undefined on an empty confusion matrix")
    diag = np.diag(cm.counts)
    row = cm.counts.sum(axis=1)
    col = cm.counts.sum(axis=0)
    recall = tuple(float(diag[c]) / row[c] if row[c] > 0 else None for c in range(cm.n_classes))
    precision = tuple(float(diag[c]) / col[c] if col[c] > 0 else None for c in range(cm.n_classes))
    return MetricsReport(recall=recall, precision=precision, accuracy=float(diag.sum()) / total)


def _mean_or_none(values: Sequence[Optional[float]]) -> Optional[float]:
    if any(v is None for v in values):
        return None
    return float(np.mean([float(v) for v in values]))


def macro_average(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Unweighted mean across stocks; any metric undefined anywhere stays
    undefined in the aggregate."""
    if not reports:
        raise ValueError("need at least one report to aggregate")
    k = reports[0].n_classes
    if any(r.n_classes != k for r in reports):
        raise ValueError("reports disagree on class count")
    recall = tuple(_mean_or_none([r.recall[c] for r in reports]) for c in range(k))
    precision = tuple(_mean_or_none([r.precision[c] for r in reports]) for c in range(k))
    accuracy = float(np.mean([r.accuracy for r in reports]))
    return MetricsReport(recall=recall, precision=precision, accuracy=accuracy)


def pooled_metrics(matrices: Sequence[ConfusionMatrix]) -> MetricsReport:
    """Metrics of the summed matrix: the alternative aggregation scheme."""
    if not matrices:
        raise ValueError("need at least one matrix to pool")
    pooled = matrices[0]
    for cm in matrices[1:]:
        pooled = pooled + cm
    return metrics(pooled)


def best_precision_counts(
    precision_by_model: Mapping[str, Sequence[Sequence[Optional[float]]]],
) -> dict[str, np.ndarray]:
    """Per (model, class): on how many stocks that model's precision is best.

    Input maps each model label to its per-stock rows of per-class
    precision values (None where undefined).  On each (stock, class) cell
    every model tied at the strictly highest defined precision is credited;
    undefined precision never wins; a cell where no model has a defined
    precision credits nobody.
    """
    if not precision_by_model:
        raise ValueError("need at least one model")
    models = list(precision_by_model)
    n_stocks = len(precision_by_model[models[0]])
    if any(len(precision_by_model[m]) != n_stocks for m in models):
        raise ValueError("all models must cover the same stocks")
    if n_stocks == 0:
        raise ValueError("need at least one stock")
    n_classes = len(precision_by_model[models[0]][0])
    counts = {m: np.zeros(n_classes, dtype=np.int64) for m in models}
    for s in range(n_stocks):
        for c in range(n_classes):
            defined = {
                m: float(precision_by_model[m][s][c])
                for m in models
                if precision_by_model[m][s][c] is not None
            }
            if not defined:
                continue
            best = max(defined.values())
            for m, v in defined.items():
                if v == best:
                    counts[m][c] += 1
    return counts
