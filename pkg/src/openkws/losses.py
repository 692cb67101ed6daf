"""Loss functions over network scores.

All losses take graph nodes and return a ``(1, 1)`` node, so calling
``node.graph.backward(loss)`` yields parameter gradients.

* :func:`auc_loss` over a :func:`partition_scores` partition: the multi-class
  AUC loss, a pairwise hinge between every positive and every negative score.
* :func:`multiclass_hinge_loss`, :func:`cross_entropy_loss`: per-sample
  baselines over ``C + 1`` outputs where column 0 is the filler class.
* :func:`apfc_loss`: angular prototypical loss with learnable class centers.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .exceptions import ConfigError, LayoutError, LossUndefinedError, MetricError, ShapeError

HINGE_VARIANTS = ("linear", "squared")


@dataclass(frozen=True)
class AucConfig:
    delta: float = 0.3
    hinge_variant: str = "linear"

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigError(f"delta must be > 0, got {self.delta}")
        if self.hinge_variant not in HINGE_VARIANTS:
            raise ConfigError(f"unknown hinge variant {self.hinge_variant!r}")


@dataclass
class ScorePartition:
    """Positive and negative score columns, each an ``(n, 1)`` node."""

    positives: ad.Node
    negatives: ad.Node

    @property
    def n_pos(self):
        return self.positives.value.shape[0]

    @property
    def n_neg(self):
        return self.negatives.value.shape[0]

    @property
    def defined(self):
        """Whether the AUC loss can be computed (both sets non-empty)."""
        return self.n_pos > 0 and self.n_neg > 0

    @property
    def positive_values(self):
        return self.positives.value[:, 0].copy()

    @property
    def negative_values(self):
        return self.negatives.value[:, 0].copy()


def _check_labels(labels, n_classes):
    if labels.size and labels.max() > n_classes:
        raise ShapeError(f"label {labels.max()} exceeds class count {n_classes}")


def partition_scores(batch):
    """Split a batch of ``C``-column keyword scores into positive/negative sets.

    A keyword sample (label ``y > 0``) contributes its true-class score to the
    positives and its best competing keyword score to the negatives; a
    non-keyword sample contributes its highest score to the negatives. The
    negatives therefore hold one entry per sample, in batch order.

    With a single keyword column there is no competing score, so keyword
    samples add nothing to the negatives and the result is the plain binary
    split.

    The partition may have no positives; check :attr:`ScorePartition.defined`
    before computing a loss.
    """
    scores, labels = batch.scores, batch.labels
    n_classes = scores.shape[1]
    _check_labels(labels, n_classes)
    kw = np.flatnonzero(labels != 0)
    positives = ad.select(scores, kw, labels[kw] - 1)
    if n_classes == 1:
        nk = np.flatnonzero(labels == 0)
        negatives = ad.select(scores, nk, np.zeros_like(nk))
    else:
        negatives = ad.row_max(scores, exclude=labels - 1)
    return ScorePartition(positives, negatives)


def binary_auc_metric(positives, negatives):
    """Fraction of (positive, negative) pairs ranked strictly correctly.

    Ties count as failures.

    Raises:
        MetricError: if either set is empty.
    """
    pos = np.asarray(positives, dtype=np.float64).ravel()
    neg = np.sort(np.asarray(negatives, dtype=np.float64).ravel())
    if pos.size == 0 or neg.size == 0:
        raise MetricError("AUC undefined with an empty positive or negative set")
    wins = np.searchsorted(neg, pos, side="left").sum()
    return float(wins) / (pos.size * neg.size)


def auc_loss(partition, delta=0.3, hinge_variant="linear"):
    """Mean pairwise hinge ``max(0, delta - (s_pos - s_neg))`` over all pairs.

    ``hinge_variant="squared"`` squares each hinge term.

    Raises:
        LossUndefinedError: if the partition has no positives or negatives.
    """
    if delta < 0:
        raise ConfigError(f"delta must be >= 0, got {delta}")
    if hinge_variant not in HINGE_VARIANTS:
        raise ConfigError(f"unknown hinge variant {hinge_variant!r}")
    if not partition.defined:
        raise LossUndefinedError(
            f"AUC loss undefined with {partition.n_pos} positives and {partition.n_neg} negatives")
    gaps = ad.sub(partition.positives, ad.transpose(partition.negatives))
    terms = ad.hinge(gaps, delta)
    if hinge_variant == "squared":
        terms = ad.square(terms)
    return ad.mean(terms)


def multiclass_hinge_loss(batch, delta=0.3):
    """``1/(N C) * sum_n sum_{c != y_n} max(0, delta - p[n, y_n] + p[n, c])``.

    ``batch.scores`` has ``C + 1`` columns, column 0 being the filler class.
    """
    scores, labels = batch.scores, batch.labels
    n, width = scores.shape
    if width < 2:
        raise ShapeError("hinge loss needs at least two output columns")
    _check_labels(labels, width - 1)
    graph = scores.graph
    true = ad.select(scores, np.arange(n), labels)
    terms = ad.relu(ad.add_scalar(ad.sub(scores, true), delta))
    mask = np.ones((n, width))
    mask[np.arange(n), labels] = 0.0
    total = ad.sum_all(ad.mul(terms, graph.constant(mask)))
    return ad.scale(total, 1.0 / (n * (width - 1)))


def cross_entropy_loss(batch, eps=1e-12):
    """Mean of ``-log p[n, y_n]`` with probabilities clamped below at ``eps``."""
    scores, labels = batch.scores, batch.labels
    n, width = scores.shape
    _check_labels(labels, width - 1)
    true = ad.select(scores, np.arange(n), labels)
    return ad.scale(ad.mean(ad.log(ad.clip_min(true, eps))), -1.0)


@dataclass
class ApFcParams:
    """Class centers ``(C, E)``, log of the positive scale ``w``, shared bias ``b``.

    The scale is stored as its logarithm so unconstrained updates keep ``w > 0``.
    """

    centers: np.ndarray
    log_scale: float
    bias: float

    PARAM_NAMES = ("apfc_centers", "apfc_log_scale", "apfc_bias")

    @classmethod
    def init(cls, n_keywords, embed_dim, seed=0, scale=10.0, bias=-5.0):
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(embed_dim)
        return cls(rng.uniform(-bound, bound, size=(n_keywords, embed_dim)),
                   float(np.log(scale)), float(bias))

    @property
    def scale(self):
        return float(np.exp(self.log_scale))

    def to_params(self):
        names = self.PARAM_NAMES
        return {names[0]: np.asarray(self.centers, dtype=np.float64),
                names[1]: np.array([[self.log_scale]]),
                names[2]: np.array([[self.bias]])}

    @classmethod
    def from_params(cls, params):
        c, s, b = cls.PARAM_NAMES
        return cls(np.asarray(params[c]), float(params[s][0, 0]), float(params[b][0, 0]))

    def as_nodes(self, graph, trainable=True):
        p = self.to_params()
        make = graph.parameter if trainable else (lambda name, v: graph.constant(v))
        return tuple(make(name, p[name]) for name in self.PARAM_NAMES)


def apfc_similarity(embeddings, centers, log_scale, bias):
    """``S[n, c] = exp(log_scale) * cos(e_n, W_c) + bias`` as an ``(N, C)`` node."""
    cos = ad.matmul(ad.normalize_rows(embeddings), ad.transpose(ad.normalize_rows(centers)))
    return ad.add(ad.mul(cos, ad.exp(log_scale)), bias)


def check_apfc_layout(labels, n_keywords):
    """Raise :class:`LayoutError` unless labels read ``1..C`` then only zeros."""
    labels = np.asarray(labels).ravel()
    if labels.size < n_keywords:
        raise LayoutError(f"batch of {labels.size} cannot hold {n_keywords} keyword anchors")
    if not np.array_equal(labels[:n_keywords], np.arange(1, n_keywords + 1)):
        raise LayoutError(f"first {n_keywords} labels must be 1..{n_keywords}, "
                          f"got {labels[:n_keywords].tolist()}")
    if np.any(labels[n_keywords:] != 0):
        raise LayoutError("samples after the keyword anchors must be non-keywords")


def apfc_loss_from_similarity(similarity):
    """``-1/C * sum_c log softmax_over_n(S[:, c])[c]`` for an ``(C + N0, C)`` node."""
    n_keywords = similarity.shape[1]
    log_probs = ad.row_log_softmax(ad.transpose(similarity))
    diag = ad.select(log_probs, np.arange(n_keywords), np.arange(n_keywords))
    return ad.scale(ad.mean(diag), -1.0)


def apfc_loss(embeddings, labels, params, trainable=True):
    """AP-FC loss for a batch laid out as keywords ``1..C`` then non-keywords.

    Args:
        embeddings: ``(C + N0, E)`` node.
        labels: batch labels, checked against the required layout.
        params: :class:`ApFcParams`; registered on the embeddings' graph under
            :attr:`ApFcParams.PARAM_NAMES` (trainable unless told otherwise).
    """
    n_keywords = params.centers.shape[0]
    check_apfc_layout(labels, n_keywords)
    centers, log_scale, bias = params.as_nodes(embeddings.graph, trainable=trainable)
    return apfc_loss_from_similarity(apfc_similarity(embeddings, centers, log_scale, bias))
