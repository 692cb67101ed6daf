"""Open-set decisions, threshold calibration and evaluation metrics.

Labels follow one convention throughout: ``0`` is the non-keyword class and
``1..C`` are keywords. Keyword score matrices have ``C`` columns where column
``c - 1`` holds the score of keyword ``c``.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import CalibrationError, MetricError, ShapeError
from .losses import binary_auc_metric

DET_HEADER = "threshold,false_alarm_rate,miss_rate"


def _as_scores(scores):
    values = getattr(scores, "value", scores)
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D score matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class DecisionRule:
    """Reject a sample unless its best keyword score reaches ``threshold``."""

    threshold: float
    source: str = "manual"

    def __call__(self, scores):
        return decide_batch(scores, self.threshold)


def calibrate_threshold(scores, labels, delta):
    """Threshold = mean true-class score over keyword samples, minus ``delta``.

    Non-keyword samples do not influence the result.

    Raises:
        CalibrationError: if there are no keyword samples.
    """
    scores = _as_scores(scores)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    kw = np.flatnonzero(labels != 0)
    if kw.size == 0:
        raise CalibrationError("calibration set has no keyword samples")
    return float(-delta + scores[kw, labels[kw] - 1].mean())


def calibrated_rule(scores, labels, delta):
    return DecisionRule(calibrate_threshold(scores, labels, delta), source="calibrated")


def decide(score_row, rule):
    """Class for one row of ``C`` keyword scores: best keyword, or 0 if rejected.

    ``rule`` is a :class:`DecisionRule` or a bare threshold. The comparison
    is ``>=`` and ties go to the lowest keyword index.
    """
    threshold = getattr(rule, "threshold", rule)
    row = np.asarray(score_row, dtype=np.float64).ravel()
    best = int(np.argmax(row))
    return best + 1 if row[best] >= threshold else 0


def decide_batch(scores, threshold):
    """Vectorized :func:`decide` over an ``(N, C)`` score matrix."""
    scores = _as_scores(scores)
    best = np.argmax(scores, axis=1)
    accepted = scores[np.arange(scores.shape[0]), best] >= threshold
    return np.where(accepted, best + 1, 0).astype(np.int64)


def decide_with_filler(scores):
    """Argmax over ``C + 1`` outputs; winning column 0 means non-keyword."""
    return np.argmax(_as_scores(scores), axis=1).astype(np.int64)


def total_accuracy(predictions, labels):
    """Fraction of exact matches over the whole open test set."""
    predictions = np.asarray(predictions).ravel()
    labels = np.asarray(labels).ravel()
    if labels.size == 0:
        raise MetricError("accuracy of an empty set")
    if predictions.shape != labels.shape:
        raise ShapeError(f"{predictions.size} predictions for {labels.size} labels")
    return float(np.count_nonzero(predictions == labels)) / labels.size


def closed_accuracy(predictions, labels, unseen_mask):
    """Accuracy after dropping samples flagged as unseen negatives."""
    keep = ~np.asarray(unseen_mask, dtype=bool).ravel()
    predictions = np.asarray(predictions).ravel()
    labels = np.asarray(labels).ravel()
    if keep.shape != labels.shape:
        raise ShapeError("mask length does not match labels")
    if not keep.any():
        raise MetricError("every sample is masked out")
    return total_accuracy(predictions[keep], labels[keep])


def per_class_f1(predictions, labels):
    """F1 per class that occurs in ``labels`` or ``predictions``.

    Returns:
        dict ``{class: f1}``; undefined precision or recall counts as 0.
    """
    predictions = np.asarray(predictions).ravel()
    labels = np.asarray(labels).ravel()
    if predictions.shape != labels.shape:
        raise ShapeError(f"{predictions.size} predictions for {labels.size} labels")
    result = {}
    for c in np.union1d(labels, predictions):
        tp = np.count_nonzero((predictions == c) & (labels == c))
        n_pred = np.count_nonzero(predictions == c)
        n_true = np.count_nonzero(labels == c)
        precision = tp / n_pred if n_pred else 0.0
        recall = tp / n_true if n_true else 0.0
        denom = precision + recall
        result[int(c)] = 2 * precision * recall / denom if denom else 0.0
    return result


def macro_f1(predictions, labels):
    """Unweighted mean F1 over classes present in labels or predictions."""
    scores = per_class_f1(predictions, labels)
    if not scores:
        raise MetricError("macro F1 of an empty set")
    return float(np.mean(list(scores.values())))


@dataclass
class DetCurve:
    """Miss/false-alarm trade-off of a keyword-vs-non-keyword detector.

    A sample is accepted as a keyword when its score is ``>= threshold``.
    Thresholds are the sorted unique scores followed by ``+inf``.
    """

    thresholds: np.ndarray
    false_alarm_rate: np.ndarray
    miss_rate: np.ndarray
    auc: float

    @property
    def points(self):
        return list(zip(self.thresholds.tolist(), self.false_alarm_rate.tolist(),
                        self.miss_rate.tolist()))

    def to_csv(self):
        lines = [DET_HEADER]
        lines += [f"{t!r},{fa!r},{m!r}" for t, fa, m in self.points]
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_csv())


def det_curve(scores, is_keyword):
    """DET operating points and detection AUC.

    Args:
        scores: per-sample detection score (best keyword score).
        is_keyword: boolean per sample.

    Raises:
        MetricError: if either group is empty.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    is_keyword = np.asarray(is_keyword, dtype=bool).ravel()
    if scores.shape != is_keyword.shape:
        raise ShapeError("scores and keyword flags differ in length")
    pos = np.sort(scores[is_keyword])
    neg = np.sort(scores[~is_keyword])
    if pos.size == 0 or neg.size == 0:
        raise MetricError("DET curve needs both keyword and non-keyword samples")
    thresholds = np.append(np.unique(scores), np.inf)
    false_alarm = (neg.size - np.searchsorted(neg, thresholds, side="left")) / neg.size
    miss = np.searchsorted(pos, thresholds, side="left") / pos.size
    return DetCurve(thresholds, false_alarm, miss, binary_auc_metric(pos, neg))


def read_det_csv(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if header != DET_HEADER:
            raise ValueError(f"unexpected DET header {header!r}")
        rows = [tuple(float(v) for v in line.split(",")) for line in fh if line.strip()]
    return rows


@dataclass
class MetricReport:
    """Metrics of one evaluation run. Fractions are in ``[0, 1]``."""

    total_acc: float
    closed_acc: float
    macro_f1: float
    detection_auc: float
    n_eval: int
    det: DetCurve = field(default=None, repr=False)

    SCALARS = ("total_acc", "closed_acc", "macro_f1", "detection_auc", "n_eval")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.SCALARS}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def read(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        return cls(**{k: d[k] for k in cls.SCALARS})


def build_report(predictions, labels, unseen_mask, detection_scores):
    """Assemble a :class:`MetricReport` from decisions and detection scores."""
    labels = np.asarray(labels).ravel()
    det = det_curve(detection_scores, labels != 0)
    return MetricReport(
        total_acc=total_accuracy(predictions, labels),
        closed_acc=closed_accuracy(predictions, labels, unseen_mask),
        macro_f1=macro_f1(predictions, labels),
        detection_auc=det.auc,
        n_eval=int(labels.size),
        det=det,
    )


def mean_report(reports):
    """Arithmetic mean of the scalar metrics of several reports."""
    if not reports:
        raise MetricError("no reports to average")
    keys = ("total_acc", "closed_acc", "macro_f1", "detection_auc")
    means = {k: float(np.mean([getattr(r, k) for r in reports])) for k in keys}
    return MetricReport(n_eval=reports[0].n_eval, **means)
