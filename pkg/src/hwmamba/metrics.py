"""Multi-label evaluation: the six reported metrics, threshold search and the calibration-gap report."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, DimensionError, ParameterError
from .labels import CLASSES, NORMAL_CLASS

THRESHOLD_GRID = np.round(np.linspace(0.0, 1.0, 51), 2)
# metrics that need a decision threshold, with the direction that counts as better
THRESHOLD_METRICS = {
    "subset_accuracy": "max",
    "challenge_score": "max",
    "hamming_loss": "min",
    "f1_macro": "max",
    "f1_weighted": "max",
}
METRIC_NAMES = tuple(THRESHOLD_METRICS) + ("auroc_macro",)


def _pair(preds, targets) -> tuple[np.ndarray, np.ndarray]:
    p = np.atleast_2d(np.asarray(preds))
    t = np.atleast_2d(np.asarray(targets))
    if p.shape != t.shape:
        raise DimensionError(f"predictions {p.shape} and targets {t.shape} differ in shape")
    if p.shape[0] == 0:
        raise DataError("no samples to score")
    if not np.isin(t, (0, 1)).all():
        raise DataError("targets must be binary")
    return p, t.astype(bool)


def binarize(probs, tau: float) -> np.ndarray:
    if not 0.0 <= tau <= 1.0:
        raise ParameterError(f"threshold must lie in [0, 1], got {tau}")
    return np.asarray(probs) > tau


def subset_accuracy(preds, targets) -> float:
    p, t = _pair(preds, targets)
    return float(np.mean(np.all(p.astype(bool) == t, axis=1)))


def hamming_loss(preds, targets) -> float:
    p, t = _pair(preds, targets)
    return float(np.mean(p.astype(bool) != t))


def f1_scores(preds, targets) -> tuple[np.ndarray, float, float]:
    """Per-class F1, unweighted mean and support-weighted mean.

    Aggregates are formed in exact rational arithmetic, so each returned
    value is the correctly rounded true value.
    """
    p, t = _pair(preds, targets)
    p = p.astype(bool)
    tp = np.sum(p & t, axis=0)
    fp = np.sum(p & ~t, axis=0)
    fn = np.sum(~p & t, axis=0)
    support = t.sum(axis=0)
    if support.sum() == 0:
        raise DataError("weighted F1 is undefined: no positive labels in the evaluation set")
    # 2PR/(P+R) == 2TP/(2TP+FP+FN); zero when precision and recall are both zero
    exact = [Fraction(2 * int(a), int(2 * a + b + c)) if 2 * a + b + c else Fraction(0)
             for a, b, c in zip(tp, fp, fn)]
    macro = sum(exact, Fraction(0)) / len(exact)
    weighted = sum((f * int(s) for f, s in zip(exact, support)), Fraction(0)) / int(support.sum())
    return np.array([float(f) for f in exact]), float(macro), float(weighted)


@dataclass
class WeightMatrix:
    """Clinical-similarity weights; rows are true classes, columns predicted classes."""

    classes: list[str]
    values: np.ndarray
    normal_class: str = NORMAL_CLASS

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        k = len(self.classes)
        if self.values.shape != (k, k):
            raise DataError(f"weight matrix shape {self.values.shape} does not match {k} classes")
        if len(set(self.classes)) != k:
            raise DataError("weight matrix has duplicate class labels")
        if not np.allclose(np.diag(self.values), 1.0):
            raise DataError("weight matrix diagonal must be 1")
        if (self.values < 0).any() or (self.values > 1).any():
            raise DataError("weight matrix entries must lie in [0, 1]")
        if self.normal_class not in self.classes:
            raise DataError(f"normal class {self.normal_class!r} missing from weight matrix")

    @classmethod
    def identity(cls, classes: Sequence[str] = CLASSES, normal_class: str = NORMAL_CLASS) -> "WeightMatrix":
        return cls(list(classes), np.eye(len(classes)), normal_class)

    @classmethod
    def from_csv(cls, path: str | Path, normal_class: str = NORMAL_CLASS) -> "WeightMatrix":
        try:
            rows = list(csv.reader(Path(path).read_text().splitlines()))
        except OSError as exc:
            raise DataError(f"cannot read weight matrix {path}: {exc}") from exc
        if len(rows) < 2:
            raise DataError(f"{path}: weight matrix needs a header and at least one row")
        cols = [c.strip() for c in rows[0][1:]]
        body = [r for r in rows[1:] if r]
        row_names = [r[0].strip() for r in body]
        try:
            vals = np.array([[float(v) for v in r[1:]] for r in body])
        except ValueError as exc:
            raise DataError(f"{path}: non-numeric weight ({exc})") from exc
        if sorted(row_names) != sorted(cols):
            raise DataError(f"{path}: row and column labels differ")
        order = [row_names.index(c) for c in cols]
        return cls(cols, vals[order], normal_class)

    def aligned(self, classes: Sequence[str]) -> "WeightMatrix":
        """The same weights with axes permuted into ``classes`` order."""
        missing = set(classes) - set(self.classes)
        if missing:
            raise DataError(f"weight matrix lacks classes {sorted(missing)}")
        idx = [self.classes.index(c) for c in classes]
        return WeightMatrix(list(classes), self.values[np.ix_(idx, idx)], self.normal_class)


def _implicit_normal(p: np.ndarray, t: np.ndarray, normal_index: int) -> tuple[np.ndarray, np.ndarray]:
    p = p.astype(bool).copy()
    t = t.astype(bool).copy()
    p[~p.any(axis=1), normal_index] = True
    t[~t.any(axis=1), normal_index] = True
    return p, t


def confusion_matrix(preds, targets, normal_index: int) -> np.ndarray:
    """Union-normalized multi-label confusion matrix (rows true, columns predicted).

    An empty true or predicted set stands for the normal class.
    """
    p, t = _pair(preds, targets)
    p, t = _implicit_normal(p, t, normal_index)
    norm = np.sum(p | t, axis=1).astype(float)
    return (t / norm[:, None]).T @ p.astype(float)


def _weighted_credit(p: np.ndarray, t: np.ndarray, w: list[list[Fraction]]) -> Fraction:
    """Exact sum of w_ij * a_ij, grouping records by the size of their label union."""
    union = np.sum(p | t, axis=1)
    total = Fraction(0)
    for u in np.unique(union):
        rows = union == u
        counts = t[rows].T.astype(np.int64) @ p[rows].astype(np.int64)
        i_idx, j_idx = np.nonzero(counts)
        part = sum((w[i][j] * int(counts[i, j]) for i, j in zip(i_idx, j_idx)), Fraction(0))
        total += part / int(u)
    return total


def challenge_score(preds, targets, weights: WeightMatrix, classes: Sequence[str] | None = None) -> float:
    """Weighted partial-credit score scaled so perfect = 1 and always-normal = 0.

    Computed exactly in rationals and rounded once.
    """
    p, t = _pair(preds, targets)
    classes = list(classes) if classes is not None else list(weights.classes)
    if len(classes) != p.shape[1]:
        raise DimensionError(f"{p.shape[1]} label columns but {len(classes)} class names")
    if weights.normal_class not in classes:
        raise DataError(f"normal class {weights.normal_class!r} absent from the label set")
    w = [[Fraction(float(v)) for v in row] for row in weights.aligned(classes).values]
    normal = classes.index(weights.normal_class)
    inactive = np.zeros_like(t)
    inactive[:, normal] = True
    observed = _weighted_credit(*_implicit_normal(p, t, normal), w)
    correct = _weighted_credit(*_implicit_normal(t, t, normal), w)
    baseline = _weighted_credit(*_implicit_normal(inactive, t, normal), w)
    if correct == baseline:
        raise DataError("challenge score is undefined: perfect and always-normal predictions score equally")
    return float((observed - baseline) / (correct - baseline))


def auroc_per_class(probs, targets) -> np.ndarray:
    """Mann-Whitney AUROC per class with midranks; NaN where a class lacks either outcome."""
    s, t = _pair(probs, targets)
    out = np.full(s.shape[1], np.nan)
    for j in range(s.shape[1]):
        pos = int(t[:, j].sum())
        neg = len(t) - pos
        if pos == 0 or neg == 0:
            continue
        ranks = rankdata(s[:, j])
        out[j] = (ranks[t[:, j]].sum() - pos * (pos + 1) / 2) / (pos * neg)
    return out


def auroc_macro(probs, targets) -> float:
    per = auroc_per_class(probs, targets)
    if np.isnan(per).all():
        raise DataError("AUROC is undefined: no class has both positive and negative samples")
    return float(np.nanmean(per))


def metric_value(name: str, preds, targets, weights: WeightMatrix | None = None,
                 classes: Sequence[str] | None = None) -> float:
    if name == "subset_accuracy":
        return subset_accuracy(preds, targets)
    if name == "hamming_loss":
        return hamming_loss(preds, targets)
    if name == "f1_macro":
        return f1_scores(preds, targets)[1]
    if name == "f1_weighted":
        return f1_scores(preds, targets)[2]
    if name == "challenge_score":
        if weights is None:
            classes = list(classes) if classes is not None else list(CLASSES[:np.shape(preds)[-1]])
            weights = WeightMatrix.identity(classes)
        return challenge_score(preds, targets, weights, classes)
    raise ParameterError(f"unknown threshold-dependent metric {name!r}")


def threshold_search(probs, targets, metric: str, weights: WeightMatrix | None = None,
                     classes: Sequence[str] | None = None, grid: np.ndarray = THRESHOLD_GRID) -> tuple[float, float]:
    """Best global threshold on the grid; the first (smallest) wins ties."""
    if metric not in THRESHOLD_METRICS:
        raise ParameterError(f"metric {metric!r} has no threshold (choose from {sorted(THRESHOLD_METRICS)})")
    sign = 1.0 if THRESHOLD_METRICS[metric] == "max" else -1.0
    best_tau, best_val = None, None
    for tau in grid:
        val = metric_value(metric, binarize(probs, float(tau)), targets, weights, classes)
        if best_val is None or sign * val > sign * best_val:
            best_tau, best_val = float(tau), val
    return best_tau, best_val


@dataclass
class GapRow:
    metric: str
    tau_train: float
    tau_test: float
    value_train_tau: float
    value_test_tau: float
    gap: float


def threshold_gap_report(train_probs, train_targets, test_probs, test_targets,
                         weights: WeightMatrix | None = None, classes: Sequence[str] | None = None) -> list[GapRow]:
    """Test-set value under train- vs test-calibrated thresholds for each thresholded metric."""
    rows = []
    for name in THRESHOLD_METRICS:
        tau_tr, _ = threshold_search(train_probs, train_targets, name, weights, classes)
        tau_te, v_te = threshold_search(test_probs, test_targets, name, weights, classes)
        v_tr = metric_value(name, binarize(test_probs, tau_tr), test_targets, weights, classes)
        rows.append(GapRow(name, tau_tr, tau_te, v_tr, v_te, abs(v_te - v_tr)))
    return rows


@dataclass
class MetricsReport:
    subset_accuracy: float
    challenge_score: float
    hamming_loss: float
    f1_macro: float
    f1_weighted: float
    auroc_macro: float
    per_class_f1: list[float]
    classes: list[str]
    thresholds_used: dict[str, float]
    threshold_source: str
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls.from_dict(json.loads(text))

    def csv_row(self) -> dict[str, float | str]:
        row: dict[str, float | str] = {name: getattr(self, name) for name in METRIC_NAMES}
        row["threshold_source"] = self.threshold_source
        return row

    def to_csv(self) -> str:
        buf = io.StringIO()
        row = self.csv_row()
        writer = csv.DictWriter(buf, fieldnames=list(row))
        writer.writeheader()
        writer.writerow(row)
        return buf.getvalue()


def compute_report(probs, targets, thresholds: dict[str, float], source: str,
                   weights: WeightMatrix | None = None, classes: Sequence[str] | None = None) -> MetricsReport:
    probs, targets = np.asarray(probs), np.asarray(targets)
    classes = list(classes) if classes is not None else list(CLASSES[:probs.shape[1]])
    missing = set(THRESHOLD_METRICS) - set(thresholds)
    if missing:
        raise ParameterError(f"thresholds missing for {sorted(missing)}")
    values = {name: metric_value(name, binarize(probs, thresholds[name]), targets, weights, classes)
              for name in THRESHOLD_METRICS}
    per_class, _, _ = f1_scores(binarize(probs, thresholds["f1_macro"]), targets)
    return MetricsReport(
        auroc_macro=auroc_macro(probs, targets),
        per_class_f1=[float(v) for v in per_class],
        classes=classes,
        thresholds_used={k: float(thresholds[k]) for k in THRESHOLD_METRICS},
        threshold_source=source,
        **values,
    )


def search_thresholds(probs, targets, weights: WeightMatrix | None = None,
                      classes: Sequence[str] | None = None) -> dict[str, float]:
    return {name: threshold_search(probs, targets, name, weights, classes)[0] for name in THRESHOLD_METRICS}
