"""Mini-batch index samplers."""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError

SAMPLER_KINDS = ("random", "fixed_proportion", "apfc_ordered")


@dataclass(frozen=True)
class SamplerConfig:
    """Batch construction settings.

    ``batch_size`` applies to the random sampler. The fixed-proportion sampler
    puts ``keywords_per_batch`` keyword and ``nonkeywords_per_batch``
    non-keyword samples in every batch; the AP-FC sampler uses one sample per
    keyword followed by ``nonkeywords_per_batch`` non-keywords.
    """

    kind: str = "fixed_proportion"
    batch_size: int = 128
    keywords_per_batch: int = 32
    nonkeywords_per_batch: int = 64
    seed: int = 0
    drop_last: bool = False

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ConfigError(f"unknown sampler {self.kind!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.keywords_per_batch < 0 or self.nonkeywords_per_batch < 0:
            raise ConfigError("per-batch counts must be >= 0")
        if self.kind == "fixed_proportion" and self.keywords_per_batch + self.nonkeywords_per_batch < 1:
            raise ConfigError("fixed-proportion batches must hold at least one sample")

    @property
    def effective_batch_size(self):
        if self.kind == "fixed_proportion":
            return self.keywords_per_batch + self.nonkeywords_per_batch
        return self.batch_size


class _RecyclingStream:
    """Draws from ``pool`` without replacement, reshuffling when exhausted."""

    def __init__(self, pool, rng):
        self.pool = np.asarray(pool)
        self.rng = rng
        self.order = rng.permutation(self.pool)
        self.pos = 0

    def take(self, k):
        out = []
        while len(out) < k:
            if self.pos == len(self.order):
                order = self.rng.permutation(self.pool)
                # keep a single batch free of repeats across the reshuffle
                taken = np.isin(order, out)
                self.order = np.concatenate([order[~taken], order[taken]])
                self.pos = 0
            need = k - len(out)
            chunk = self.order[self.pos:self.pos + need]
            self.pos += len(chunk)
            out.extend(chunk.tolist())
        return out


def _labels_of(dataset):
    labels = getattr(dataset, "labels", dataset)
    return np.asarray(labels, dtype=np.int64).ravel()


def make_epoch_batches(dataset, config, epoch=0):
    """Index batches for one epoch.

    Args:
        dataset: a :class:`~openkws.data.LabeledDataset` or a label array.
        config: :class:`SamplerConfig`.
        epoch: epoch number; each epoch reshuffles deterministically from
            ``(config.seed, epoch)``.

    Returns:
        list of int64 index arrays.

    Raises:
        ConfigError: if a stratum cannot fill even one batch.
    """
    labels = _labels_of(dataset)
    if labels.size == 0:
        raise ConfigError("cannot sample from an empty dataset")
    rng = np.random.default_rng([config.seed, epoch])
    if config.kind == "random":
        return _random_batches(labels, config, rng)
    if config.kind == "fixed_proportion":
        return _fixed_proportion_batches(labels, config, rng)
    return _apfc_batches(labels, config, rng)


def _random_batches(labels, config, rng):
    perm = rng.permutation(labels.size)
    size = config.batch_size
    stop = (labels.size // size) * size if config.drop_last else labels.size
    return [perm[i:i + size] for i in range(0, stop, size)]


def _fixed_proportion_batches(labels, config, rng):
    kw_pool = np.flatnonzero(labels != 0)
    nk_pool = np.flatnonzero(labels == 0)
    n_kw, n_nk = config.keywords_per_batch, config.nonkeywords_per_batch
    if kw_pool.size < n_kw:
        raise ConfigError(f"{kw_pool.size} keyword samples cannot fill {n_kw} slots")
    if nk_pool.size < n_nk:
        raise ConfigError(f"{nk_pool.size} non-keyword samples cannot fill {n_nk} slots")
    # the stratum needing more batches sets the epoch length; the other recycles
    n_batches = max(kw_pool.size // n_kw if n_kw else 0, nk_pool.size // n_nk if n_nk else 0)
    kw_stream = _RecyclingStream(kw_pool, rng)
    nk_stream = _RecyclingStream(nk_pool, rng)
    batches = []
    for _ in range(n_batches):
        idx = kw_stream.take(n_kw) + nk_stream.take(n_nk)
        batches.append(np.asarray(idx, dtype=np.int64))
    return batches


def _apfc_batches(labels, config, rng):
    n_keywords = int(labels.max())
    if n_keywords < 1:
        raise ConfigError("AP-FC sampling needs keyword samples")
    pools = [np.flatnonzero(labels == c) for c in range(1, n_keywords + 1)]
    empty = [c for c, p in enumerate(pools, start=1) if p.size == 0]
    if empty:
        raise ConfigError(f"keyword classes {empty} have no samples")
    nk_pool = np.flatnonzero(labels == 0)
    n_nk = config.nonkeywords_per_batch
    if nk_pool.size < n_nk:
        raise ConfigError(f"{nk_pool.size} non-keyword samples cannot fill {n_nk} slots")
    n_batches = max(max(p.size for p in pools), nk_pool.size // n_nk if n_nk else 0)
    streams = [_RecyclingStream(p, rng) for p in pools]
    nk_stream = _RecyclingStream(nk_pool, rng) if n_nk else None
    batches = []
    for _ in range(n_batches):
        idx = [s.take(1)[0] for s in streams]
        if nk_stream is not None:
            idx += nk_stream.take(n_nk)
        batches.append(np.asarray(idx, dtype=np.int64))
    return batches
