"""Experiment configuration: a flat ``key = value`` text file.

Blank lines and ``#`` comments are ignored. Unknown keys are rejected.
List-valued keys take comma-separated values; an empty value selects the
built-in default for optional keys.
"""

import dataclasses
from dataclasses import dataclass

from .data import SynthConfig
from .exceptions import ConfigError
from .sampling import SamplerConfig
from .training import TrainConfig, default_sampler


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    # feature files; empty means "generate the synthetic benchmark"
    train_file: str = ""
    val_file: str = ""
    test_file: str = ""
    dim: int = 16
    n_keywords: int = 10
    seen_negative_clusters: int = 5
    unseen_negative_clusters: int = 5
    train_per_cluster: int = 200
    val_per_cluster: int = 200
    test_per_cluster: int = 200
    center_scale: float = 1.0
    cluster_std: float = 0.6
    loss: str = "auc"
    delta: float = 0.3
    hinge_variant: str = "linear"
    hidden_dims: tuple = (64, 64)
    output_activation: str = None
    sampler: str = None
    batch_size: int = 128
    keywords_per_batch: int = 32
    nonkeywords_per_batch: int = 64
    epochs: int = 60
    lr: float = 1e-3
    lr_decayed: float = 1e-4
    lr_decay_epoch: int = 30
    weight_decay: float = None
    selection_metric: str = "macro_f1"
    n_seeds: int = 5
    deltas: tuple = (0.1, 0.3, 0.5)
    samplers: tuple = ("random", "fixed_proportion")

    def synth_config(self):
        return SynthConfig(
            dim=self.dim, n_keywords=self.n_keywords,
            seen_negative_clusters=self.seen_negative_clusters,
            unseen_negative_clusters=self.unseen_negative_clusters,
            train_per_cluster=self.train_per_cluster, val_per_cluster=self.val_per_cluster,
            test_per_cluster=self.test_per_cluster, center_scale=self.center_scale,
            cluster_std=self.cluster_std, seed=self.seed)

    def train_config(self, seed=None):
        kind = self.sampler or default_sampler(self.loss).kind
        sampler = SamplerConfig(kind=kind, batch_size=self.batch_size,
                                keywords_per_batch=self.keywords_per_batch,
                                nonkeywords_per_batch=self.nonkeywords_per_batch)
        return TrainConfig(
            loss=self.loss, epochs=self.epochs, lr=self.lr, lr_decayed=self.lr_decayed,
            lr_decay_epoch=self.lr_decay_epoch, weight_decay=self.weight_decay,
            delta=self.delta, hinge_variant=self.hinge_variant, sampler=sampler,
            selection_metric=self.selection_metric, hidden_dims=self.hidden_dims,
            output_activation=self.output_activation,
            seed=self.seed if seed is None else seed)

    def run_seeds(self):
        """Seeds of the repeated runs; the first equals ``seed``."""
        return [self.seed + k for k in range(self.n_seeds)]

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())


_KINDS = {
    "seed": "int", "out_dir": "str", "train_file": "str", "val_file": "str", "test_file": "str",
    "dim": "int", "n_keywords": "int", "seen_negative_clusters": "int",
    "unseen_negative_clusters": "int", "train_per_cluster": "int", "val_per_cluster": "int",
    "test_per_cluster": "int", "center_scale": "float", "cluster_std": "float", "loss": "str",
    "delta": "float", "hinge_variant": "str", "hidden_dims": "ints",
    "output_activation": "opt_str", "sampler": "opt_str", "batch_size": "int",
    "keywords_per_batch": "int", "nonkeywords_per_batch": "int", "epochs": "int", "lr": "float",
    "lr_decayed": "float", "lr_decay_epoch": "int", "weight_decay": "opt_float",
    "selection_metric": "str", "n_seeds": "int", "deltas": "floats", "samplers": "strs",
}

KEYS = tuple(f.name for f in dataclasses.fields(ExperimentConfig))
assert set(KEYS) == set(_KINDS)


def _format(value):
    if value is None:
        return ""
    if isinstance(value, (tuple, list)):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_value(key, text):
    """Convert the text form of ``key`` to its typed value."""
    if key not in _KINDS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _KINDS[key]
    text = text.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "str":
            return text
        if kind == "opt_str":
            return text or None
        if kind == "opt_float":
            return float(text) if text and text.lower() != "none" else None
        items = [t.strip() for t in text.split(",") if t.strip()]
        if kind == "ints":
            return tuple(int(t) for t in items)
        if kind == "floats":
            return tuple(float(t) for t in items)
        return tuple(items)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def parse_text(text):
    """Parse ``key = value`` lines into a dict of typed values."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        values[key] = parse_value(key, value)
    return values


def load_config(path=None, overrides=None):
    """Build an :class:`ExperimentConfig` from a file plus text overrides."""
    values = {}
    if path:
        with open(path) as fh:
            values.update(parse_text(fh.read()))
    for key, text in (overrides or {}).items():
        values[key] = parse_value(key, text)
    return ExperimentConfig(**values)
