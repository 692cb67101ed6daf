"""Open-set keyword spotting with a multi-class AUC loss."""

from .data import LabeledDataset, SynthConfig, generate_synthetic, load_features, write_features
from .estimator import OpenSetKWSClassifier
from .losses import auc_loss, binary_auc_metric, partition_scores
from .metrics import DecisionRule, MetricReport, calibrate_threshold, decide, det_curve
from .network import NetworkConfig, ScoreBatch, init_network, score
from .sampling import SamplerConfig, make_epoch_batches
from .training import KWSModel, TrainConfig, evaluate, multi_seed_run, train

__version__ = "0.1.0"

__all__ = [
    "DecisionRule", "KWSModel", "LabeledDataset", "MetricReport", "NetworkConfig",
    "OpenSetKWSClassifier", "SamplerConfig", "ScoreBatch", "SynthConfig", "TrainConfig",
    "auc_loss", "binary_auc_metric", "calibrate_threshold", "decide", "det_curve", "evaluate",
    "generate_synthetic", "init_network", "load_features", "make_epoch_batches",
    "multi_seed_run", "partition_scores", "score", "train", "write_features",
]
