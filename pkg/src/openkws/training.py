"""Optimization loop, trained-model artifact and multi-run drivers."""

import dataclasses
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .exceptions import (ConfigError, LossUndefinedError, MetricError, NonFiniteGradientError,
                         TrainingDivergedError)
from .losses import (ApFcParams, apfc_loss, apfc_similarity, auc_loss, cross_entropy_loss,
                     multiclass_hinge_loss, partition_scores)
from .metrics import (build_report, calibrate_threshold, closed_accuracy, decide_batch,
                      decide_with_filler, macro_f1, mean_report, total_accuracy)
from .network import NetworkConfig, ScoreBatch, init_network, load_checkpoint, save_checkpoint, score
from .sampling import SamplerConfig, make_epoch_batches

logger = logging.getLogger(__name__)

LOSS_KINDS = ("auc", "cross_entropy", "hinge", "apfc")
SELECTION_METRICS = ("macro_f1", "closed_acc")
# heads whose decisions use a calibrated threshold instead of a filler output
THRESHOLD_HEADS = ("auc", "apfc")


def derive_seeds(seed):
    """Independent ``(init, sampler, head)`` seeds from one run seed."""
    state = np.random.SeedSequence(seed).generate_state(3)
    return tuple(int(s) for s in state)


def default_sampler(loss):
    if loss == "apfc":
        return SamplerConfig(kind="apfc_ordered", nonkeywords_per_batch=64)
    if loss == "auc":
        return SamplerConfig(kind="fixed_proportion", keywords_per_batch=32, nonkeywords_per_batch=64)
    return SamplerConfig(kind="random", batch_size=128)


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters.

    ``weight_decay=None`` means 1e-5 for cross-entropy and 0 otherwise;
    ``sampler=None`` picks the per-loss default; ``output_activation=None``
    means softmax (identity embeddings for AP-FC). The learning rate is ``lr``
    for epochs ``1..lr_decay_epoch`` and ``lr_decayed`` afterwards.
    """

    loss: str = "auc"
    epochs: int = 60
    lr: float = 1e-3
    lr_decayed: float = 1e-4
    lr_decay_epoch: int = 30
    weight_decay: float = None
    delta: float = 0.3
    hinge_variant: str = "linear"
    sampler: SamplerConfig = None
    selection_metric: str = "macro_f1"
    hidden_dims: tuple = (64, 64)
    output_activation: str = None
    seed: int = 0

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not (self.lr > 0 and self.lr_decayed > 0):
            raise ConfigError("learning rates must be > 0")
        if self.selection_metric not in SELECTION_METRICS:
            raise ConfigError(f"unknown selection metric {self.selection_metric!r}")
        if self.loss in ("auc", "apfc", "hinge") and not self.delta > 0:
            raise ConfigError("delta must be > 0")
        if self.sampler is None:
            object.__setattr__(self, "sampler", default_sampler(self.loss))
        if (self.loss == "apfc") != (self.sampler.kind == "apfc_ordered"):
            raise ConfigError("the AP-FC loss needs the apfc_ordered sampler and vice versa")
        if self.weight_decay is None:
            object.__setattr__(self, "weight_decay", 1e-5 if self.loss == "cross_entropy" else 0.0)
        if self.output_activation is None:
            object.__setattr__(self, "output_activation",
                               "identity" if self.loss == "apfc" else "softmax")
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))

    def lr_at(self, epoch):
        """Learning rate for 1-based ``epoch``."""
        return self.lr if epoch <= self.lr_decay_epoch else self.lr_decayed

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


def network_config_for(config, input_dim, n_keywords, init_seed=None):
    """Network shape implied by the loss: ``C`` outputs, or ``C + 1`` with a filler."""
    width = n_keywords + 1 if config.loss in ("cross_entropy", "hinge") else n_keywords
    if init_seed is None:
        init_seed = derive_seeds(config.seed)[0]
    return NetworkConfig(input_dim=input_dim, output_dim=width, hidden_dims=config.hidden_dims,
                         output_activation=config.output_activation, init_seed=init_seed)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params, grads, state, lr, weight_decay=0.0):
    """One bias-corrected Adam update with L2 decay folded into the gradient.

    Returns:
        ``(new_params, new_state)``; the inputs are not modified.

    Raises:
        NonFiniteGradientError: naming the first parameter with a NaN/inf gradient.
    """
    for name in params:
        g = grads[name]
        if g.shape != params[name].shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r} "
                                         f"({np.count_nonzero(~np.isfinite(g))} of {g.size} entries)")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name] + weight_decay * p if weight_decay else grads[name]
        m = b1 * state.m.get(name, 0.0) + (1 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(new_m, new_v, t, b1, b2, state.eps)


def build_loss(params, features, labels, loss, activation, delta=0.3, hinge_variant="linear"):
    """Record network + loss on a fresh graph with trainable parameters.

    Returns:
        the scalar loss node; ``None`` when the loss is undefined for this
        batch (an AUC batch without keyword samples).
    """
    net_params = {k: v for k, v in params.items() if not k.startswith("apfc_")}
    out = score(net_params, features, activation, trainable=True)
    batch = ScoreBatch(out, labels)
    if loss == "auc":
        partition = partition_scores(batch)
        if not partition.defined:
            return None
        return auc_loss(partition, delta, hinge_variant)
    if loss == "cross_entropy":
        return cross_entropy_loss(batch)
    if loss == "hinge":
        return multiclass_hinge_loss(batch, delta)
    return apfc_loss(out, labels, ApFcParams.from_params(params))


@dataclass
class KWSModel:
    """A trained keyword scorer plus its decision rule."""

    network: NetworkConfig
    params: dict
    loss: str
    delta: float = 0.3
    threshold: float = None

    @property
    def n_keywords(self):
        if self.loss in ("cross_entropy", "hinge"):
            return self.network.output_dim - 1
        if self.loss == "apfc":
            return self.params[ApFcParams.PARAM_NAMES[0]].shape[0]
        return self.network.output_dim

    def _net_params(self):
        return {k: v for k, v in self.params.items() if not k.startswith("apfc_")}

    def raw_scores(self, features):
        """Network outputs (``C`` or ``C + 1`` columns, or embeddings for AP-FC)."""
        return score(self._net_params(), np.asarray(features, dtype=np.float64),
                     self.network.output_activation).value

    def keyword_scores(self, features):
        """``(N, C)`` keyword confidences used for decisions and DET curves.

        Filler heads drop the filler column; AP-FC heads softmax the scaled
        cosine similarities over classes.
        """
        out = self.raw_scores(features)
        if self.loss in ("cross_entropy", "hinge"):
            return out[:, 1:]
        if self.loss == "apfc":
            graph = ad.Graph()
            nodes = ApFcParams.from_params(self.params).as_nodes(graph, trainable=False)
            return ad.row_softmax(apfc_similarity(graph.constant(out), *nodes)).value
        return out

    def detection_scores(self, features):
        return self.keyword_scores(features).max(axis=1)

    def predict(self, features):
        """Open-set decisions in ``{0..C}``.

        A threshold head that was never calibrated accepts nothing, so every
        sample is predicted as non-keyword.
        """
        if self.loss in ("cross_entropy", "hinge"):
            return decide_with_filler(self.raw_scores(features))
        threshold = self.threshold
        if threshold is None:
            logger.warning("model has no calibrated threshold; rejecting every sample")
            threshold = np.inf
        return decide_batch(self.keyword_scores(features), threshold)

    def calibrate(self, dataset):
        if self.loss in THRESHOLD_HEADS:
            self.threshold = calibrate_threshold(self.keyword_scores(dataset.features),
                                                 dataset.labels, self.delta)
        return self.threshold

    def meta(self):
        return {"loss": self.loss, "delta": self.delta, "threshold": self.threshold}

    def save(self, path):
        save_checkpoint(path, self.network, self.params, self.meta())

    @classmethod
    def load(cls, path):
        config, params, meta = load_checkpoint(path)
        return cls(config, params, meta["loss"], meta["delta"], meta["threshold"])


def evaluate(model, dataset):
    """Test-set :class:`MetricReport` for ``model``."""
    predictions = model.predict(dataset.features)
    return build_report(predictions, dataset.labels, dataset.unseen_mask,
                        model.detection_scores(dataset.features))


def validation_metrics(model, dataset):
    predictions = model.predict(dataset.features)
    labels = dataset.labels
    record = {
        "val_macro_f1": macro_f1(predictions, labels),
        "val_closed_acc": closed_accuracy(predictions, labels, dataset.unseen_mask),
        "val_total_acc": total_accuracy(predictions, labels),
    }
    return record


def _validation_loss(model, dataset, config):
    if config.loss == "apfc":
        return None
    try:
        loss = build_loss(model.params, dataset.features, dataset.labels, config.loss,
                          model.network.output_activation, config.delta, config.hinge_variant)
    except LossUndefinedError:
        return None
    return None if loss is None else loss.item()


@dataclass
class TrainResult:
    model: KWSModel
    log: list
    best_epoch: int
    skipped_batches: int

    def best_record(self):
        return self.log[self.best_epoch - 1]


def write_log(log, path):
    """Per-epoch records as JSON lines."""
    with open(path, "w") as fh:
        for record in log:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_log(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def train(train_set, val_set, config, net_config=None):
    """Train one model and keep the epoch with the best validation metric.

    Each epoch: one pass of the sampler, an Adam step per batch, then (for
    threshold heads) threshold calibration on ``val_set`` followed by
    validation metrics. Batches whose loss is undefined are skipped and
    counted.

    Args:
        train_set, val_set: :class:`~openkws.data.LabeledDataset`.
        config: :class:`TrainConfig`.
        net_config: explicit network shape; derived from ``config`` and the
            data when omitted.

    Raises:
        TrainingDivergedError: on a non-finite loss, carrying the best model
            found so far as ``last_good``.
    """
    n_keywords = max(train_set.n_keywords, val_set.n_keywords)
    init_seed, sampler_seed, head_seed = derive_seeds(config.seed)
    if net_config is None:
        net_config = network_config_for(config, train_set.n_features, n_keywords, init_seed)
    if net_config.input_dim != train_set.n_features:
        raise ConfigError(f"network expects {net_config.input_dim} features, data has {train_set.n_features}")
    params = init_network(net_config)
    if config.loss == "apfc":
        params.update(ApFcParams.init(n_keywords, net_config.output_dim, seed=head_seed).to_params())
    sampler = dataclasses.replace(config.sampler, seed=sampler_seed)
    state = AdamState()
    log, skipped_total = [], 0
    best_params, best_metric, best_epoch, best_threshold = None, -np.inf, 0, None

    for epoch in range(1, config.epochs + 1):
        lr = config.lr_at(epoch)
        losses, skipped = [], 0
        for idx in make_epoch_batches(train_set.labels, sampler, epoch):
            loss = build_loss(params, train_set.features[idx], train_set.labels[idx], config.loss,
                              net_config.output_activation, config.delta, config.hinge_variant)
            if loss is None:
                skipped += 1
                continue
            value = loss.item()
            if not np.isfinite(value):
                last_good = None
                if best_params is not None:
                    last_good = KWSModel(net_config, best_params, config.loss, config.delta,
                                         best_threshold)
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}", last_good, log)
            grads = loss.graph.backward(loss)
            params, state = adam_step(params, grads, state, lr, config.weight_decay)
            losses.append(value)
        skipped_total += skipped
        if skipped:
            logger.info("epoch %d: skipped %d batches with no keyword samples", epoch, skipped)

        model = KWSModel(net_config, params, config.loss, config.delta)
        model.calibrate(val_set)
        record = {"epoch": epoch, "lr": lr,
                  "train_loss": float(np.mean(losses)) if losses else None,
                  "skipped_batches": skipped, "threshold": model.threshold}
        record.update(validation_metrics(model, val_set))
        record["val_loss"] = _validation_loss(model, val_set, config)
        log.append(record)
        logger.debug("epoch %d %s", epoch, record)

        metric = record["val_" + config.selection_metric]
        if metric > best_metric:
            best_metric, best_epoch = metric, epoch
            best_params, best_threshold = params, model.threshold

    best = KWSModel(net_config, best_params, config.loss, config.delta, best_threshold)
    return TrainResult(best, log, best_epoch, skipped_total)


@dataclass
class MultiSeedResult:
    seeds: list
    reports: list
    mean: object
    complete: bool
    failures: dict = field(default_factory=dict)


def multi_seed_run(train_set, val_set, test_set, config, seeds):
    """Train one model per seed, evaluate each on ``test_set``, average.

    A seed that fails is recorded in ``failures`` and the result is flagged
    incomplete; the mean covers the successful seeds.
    """
    seeds = list(seeds)
    if not seeds:
        raise ConfigError("need at least one seed")
    done, reports, failures = [], [], {}
    for seed in seeds:
        run_config = dataclasses.replace(config, seed=seed)
        try:
            result = train(train_set, val_set, run_config)
        except (TrainingDivergedError, NonFiniteGradientError, MetricError) as exc:
            logger.warning("seed %d failed: %s", seed, exc)
            failures[seed] = str(exc)
            continue
        done.append(seed)
        reports.append(evaluate(result.model, test_set))
    mean = mean_report(reports) if reports else None
    return MultiSeedResult(done, reports, mean, complete=not failures, failures=failures)


def sweep_delta(train_set, val_set, config, deltas, samplers=("random", "fixed_proportion"),
                seeds=(0,)):
    """Validation metrics of the AUC loss over a grid of margins and samplers.

    Returns:
        list of dict rows ``{delta, sampler, closed_acc, macro_f1}``, each
        the mean over ``seeds`` of the selected epoch's validation metrics.
    """
    rows = []
    for kind in samplers:
        base = config.sampler if config.sampler.kind == kind else default_sampler("auc")
        sampler = dataclasses.replace(base, kind=kind)
        for delta in deltas:
            f1s, accs = [], []
            for seed in seeds:
                run_config = dataclasses.replace(config, loss="auc", delta=delta, sampler=sampler,
                                                 seed=seed)
                result = train(train_set, val_set, run_config)
                best = result.best_record()
                f1s.append(best["val_macro_f1"])
                accs.append(best["val_closed_acc"])
            rows.append({"delta": float(delta), "sampler": kind,
                         "closed_acc": float(np.mean(accs)), "macro_f1": float(np.mean(f1s))})
    return rows
