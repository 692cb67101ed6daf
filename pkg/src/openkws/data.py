"""Open-set datasets: synthetic Gaussian clusters and feature-file I/O.

Feature files are comma-separated text with header
``label,unseen,f0,...,f{D-1}`` and one sample per row. ``unseen`` is 1 for
non-keyword samples drawn from classes never seen during training.
"""

import os
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ConfigError, FeatureFileError

SPLITS = ("train", "validation", "test")


@dataclass
class LabeledDataset:
    """Feature matrix with labels in ``0..C`` (0 = non-keyword)."""

    features: np.ndarray
    labels: np.ndarray
    unseen_mask: np.ndarray = None
    split: str = "train"

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if self.unseen_mask is None:
            self.unseen_mask = np.zeros(self.labels.size, dtype=bool)
        self.unseen_mask = np.asarray(self.unseen_mask, dtype=bool).ravel()
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.size:
            raise ValueError(f"features {self.features.shape} do not match {self.labels.size} labels")
        if self.unseen_mask.size != self.labels.size:
            raise ValueError("unseen mask length does not match labels")
        if np.any(self.labels[self.unseen_mask] != 0):
            raise ValueError("unseen samples must carry label 0")
        if self.split != "test" and self.unseen_mask.any():
            raise ValueError(f"{self.split} split must not contain unseen negatives")

    def __len__(self):
        return self.labels.size

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def n_keywords(self):
        return int(self.labels.max()) if self.labels.size else 0

    def subset(self, indices):
        return LabeledDataset(self.features[indices], self.labels[indices],
                              self.unseen_mask[indices], self.split)


@dataclass(frozen=True)
class SynthConfig:
    """Gaussian-cluster benchmark.

    Cluster centers are uniform in ``[-center_scale, center_scale]^dim``; each
    sample is its center plus isotropic noise of std ``cluster_std``.
    Keyword and seen-negative clusters appear in every split, unseen-negative
    clusters only in the test split.
    """

    dim: int = 16
    n_keywords: int = 10
    seen_negative_clusters: int = 5
    unseen_negative_clusters: int = 5
    train_per_cluster: int = 200
    val_per_cluster: int = 200
    test_per_cluster: int = 200
    center_scale: float = 1.0
    cluster_std: float = 0.6
    seed: int = 0

    def __post_init__(self):
        counts = (self.dim, self.n_keywords, self.train_per_cluster,
                  self.val_per_cluster, self.test_per_cluster)
        if min(counts) < 1:
            raise ConfigError("dim, keyword count and per-cluster sizes must be >= 1")
        if self.seen_negative_clusters < 0 or self.unseen_negative_clusters < 0:
            raise ConfigError("negative cluster counts must be >= 0")
        if not self.cluster_std > 0 or not self.center_scale > 0:
            raise ConfigError("cluster_std and center_scale must be > 0")

    def split_sizes(self):
        seen = self.n_keywords + self.seen_negative_clusters
        return {
            "train": seen * self.train_per_cluster,
            "validation": seen * self.val_per_cluster,
            "test": (seen + self.unseen_negative_clusters) * self.test_per_cluster,
        }

    def to_dict(self):
        return asdict(self)


def generate_synthetic(config):
    """Draw the train/validation/test triple for ``config``.

    Deterministic in ``config.seed``. Samples are ordered by cluster:
    keywords ``1..C``, then seen negatives, then (test only) unseen negatives.
    """
    rng = np.random.default_rng(config.seed)
    c, s, u = config.n_keywords, config.seen_negative_clusters, config.unseen_negative_clusters
    centers = rng.uniform(-config.center_scale, config.center_scale, size=(c + s + u, config.dim))
    cluster_labels = np.concatenate([np.arange(1, c + 1), np.zeros(s + u, dtype=np.int64)])
    cluster_unseen = np.arange(c + s + u) >= c + s
    per_split = {"train": config.train_per_cluster, "validation": config.val_per_cluster,
                 "test": config.test_per_cluster}
    out = []
    for split in SPLITS:
        n = per_split[split]
        clusters = range(c + s + u) if split == "test" else range(c + s)
        feats, labels, unseen = [], [], []
        for k in clusters:
            feats.append(centers[k] + config.cluster_std * rng.standard_normal((n, config.dim)))
            labels.append(np.full(n, cluster_labels[k]))
            unseen.append(np.full(n, cluster_unseen[k]))
        out.append(LabeledDataset(np.vstack(feats), np.concatenate(labels),
                                  np.concatenate(unseen), split))
    return tuple(out)


def feature_header(dim):
    return ",".join(["label", "unseen"] + [f"f{i}" for i in range(dim)])


def write_features(dataset, path):
    """Write ``dataset`` with 17 significant digits per value."""
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
    lines = [feature_header(dataset.n_features)]
    for label, unseen, row in zip(dataset.labels, dataset.unseen_mask, dataset.features):
        values = ",".join(format(v, ".17g") for v in row)
        lines.append(f"{label},{int(unseen)},{values}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_features(path, n_keywords=None, split="test"):
    """Parse a feature file.

    Args:
        path: file to read.
        n_keywords: if given, labels above it are rejected.
        split: split name attached to the result.

    Raises:
        FeatureFileError: naming the offending line.
    """
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].strip():
        raise FeatureFileError("empty feature file", line=1)
    header = lines[0].strip().split(",")
    dim = len(header) - 2
    if dim < 1 or header != feature_header(dim).split(","):
        raise FeatureFileError(f"bad header {lines[0]!r}", line=1)
    feats, labels, unseen = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != dim + 2:
            raise FeatureFileError(f"expected {dim + 2} fields, got {len(fields)}", line=lineno)
        try:
            label = int(fields[0])
            flag = int(fields[1])
            row = [float(v) for v in fields[2:]]
        except ValueError as exc:
            raise FeatureFileError(f"non-numeric field ({exc})", line=lineno) from None
        if label < 0 or (n_keywords is not None and label > n_keywords):
            raise FeatureFileError(f"label {label} outside 0..{n_keywords if n_keywords is not None else 'C'}",
                                   line=lineno)
        if flag not in (0, 1):
            raise FeatureFileError(f"unseen flag must be 0 or 1, got {flag}", line=lineno)
        if flag and label != 0:
            raise FeatureFileError("unseen samples must have label 0", line=lineno)
        if not np.all(np.isfinite(row)):
            raise FeatureFileError("non-finite feature value", line=lineno)
        feats.append(row)
        labels.append(label)
        unseen.append(bool(flag))
    if not labels:
        raise FeatureFileError("feature file has no samples", line=len(lines))
    if split != "test" and any(unseen):
        raise FeatureFileError(f"{split} file contains unseen negatives")
    return LabeledDataset(np.array(feats), np.array(labels), np.array(unseen), split)
