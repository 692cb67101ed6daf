"""Command-line entry point: ``openkws <command> [--config FILE] [--key value ...]``.

Commands
--------
gen-data     write train/validation/test feature files
train        train one model, save checkpoint, log and test metrics
eval         evaluate a checkpoint on a test file
det          write only the DET curve of a checkpoint on a test file
sweep-delta  AUC-loss validation metrics over margins x samplers
multi-seed   train ``n_seeds`` models and average their test metrics

Every command writes ``config.resolved.txt`` into ``out_dir``; passing that
file back via ``--config`` reproduces the run.
"""

import argparse
import csv
import json
import logging
import os
import sys

from .config import KEYS, load_config
from .data import SPLITS, generate_synthetic, load_features, write_features
from .exceptions import (CheckpointError, ConfigError, FeatureFileError, MetricError,
                         TrainingDivergedError)
from .training import KWSModel, evaluate, multi_seed_run, sweep_delta, train, write_log

logger = logging.getLogger("openkws")

SPLIT_FILES = {"train": "train.csv", "validation": "validation.csv", "test": "test.csv"}


def _prepare(cfg):
    os.makedirs(cfg.out_dir, exist_ok=True)
    cfg.write(os.path.join(cfg.out_dir, "config.resolved.txt"))


def _datasets(cfg):
    files = (cfg.train_file, cfg.val_file, cfg.test_file)
    if any(files) and not all(files):
        raise ConfigError("train_file, val_file and test_file must be given together")
    if not any(files):
        return generate_synthetic(cfg.synth_config())
    train_set = load_features(cfg.train_file, split="train")
    c = train_set.n_keywords
    return (train_set, load_features(cfg.val_file, c, split="validation"),
            load_features(cfg.test_file, c, split="test"))


def _test_set(cfg, model):
    if cfg.test_file:
        return load_features(cfg.test_file, model.n_keywords, split="test")
    return generate_synthetic(cfg.synth_config())[2]


def _write_eval(cfg, model, test_set, prefix=""):
    report = evaluate(model, test_set)
    report.write(os.path.join(cfg.out_dir, f"{prefix}metrics.json"))
    report.det.write_csv(os.path.join(cfg.out_dir, f"{prefix}det.csv"))
    return report


def cmd_gen_data(cfg, args):
    _prepare(cfg)
    for split, dataset in zip(SPLITS, generate_synthetic(cfg.synth_config())):
        path = os.path.join(cfg.out_dir, SPLIT_FILES[split])
        write_features(dataset, path)
        print(f"{split}: {len(dataset)} samples -> {path}")


def cmd_train(cfg, args):
    _prepare(cfg)
    train_set, val_set, test_set = _datasets(cfg)
    try:
        result = train(train_set, val_set, cfg.train_config())
    except TrainingDivergedError as exc:
        write_log(exc.log, os.path.join(cfg.out_dir, "train_log.jsonl"))
        if exc.last_good is not None:
            exc.last_good.save(os.path.join(cfg.out_dir, "model.ckpt"))
        raise
    result.model.save(os.path.join(cfg.out_dir, "model.ckpt"))
    write_log(result.log, os.path.join(cfg.out_dir, "train_log.jsonl"))
    report = _write_eval(cfg, result.model, test_set)
    summary = {"best_epoch": result.best_epoch, "skipped_batches": result.skipped_batches,
               "best_validation": result.best_record(), "test": report.to_dict()}
    with open(os.path.join(cfg.out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(report.to_json(), end="")


def _load_model(args):
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required")
    return KWSModel.load(args.checkpoint)


def cmd_eval(cfg, args):
    model = _load_model(args)
    test_set = _test_set(cfg, model)
    if test_set.n_features != model.network.input_dim:
        raise CheckpointError(f"checkpoint expects {model.network.input_dim} features, "
                              f"test data has {test_set.n_features}")
    _prepare(cfg)
    report = _write_eval(cfg, model, test_set)
    print(report.to_json(), end="")


def cmd_det(cfg, args):
    model = _load_model(args)
    test_set = _test_set(cfg, model)
    if test_set.n_features != model.network.input_dim:
        raise CheckpointError(f"checkpoint expects {model.network.input_dim} features, "
                              f"test data has {test_set.n_features}")
    _prepare(cfg)
    report = evaluate(model, test_set)
    path = os.path.join(cfg.out_dir, "det.csv")
    report.det.write_csv(path)
    print(f"detection_auc = {report.detection_auc!r} -> {path}")


def cmd_sweep_delta(cfg, args):
    _prepare(cfg)
    train_set, val_set, _ = _datasets(cfg)
    rows = sweep_delta(train_set, val_set, cfg.train_config(), cfg.deltas, cfg.samplers,
                       cfg.run_seeds())
    path = os.path.join(cfg.out_dir, "sweep.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["delta", "sampler", "closed_acc", "macro_f1"],
                                lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    with open(path) as fh:
        print(fh.read(), end="")


def cmd_multi_seed(cfg, args):
    _prepare(cfg)
    train_set, val_set, test_set = _datasets(cfg)
    result = multi_seed_run(train_set, val_set, test_set, cfg.train_config(), cfg.run_seeds())
    out = {
        "complete": result.complete,
        "failures": {str(k): v for k, v in result.failures.items()},
        "mean": result.mean.to_dict() if result.mean else None,
        "per_seed": [dict(seed=s, **r.to_dict()) for s, r in zip(result.seeds, result.reports)],
    }
    with open(os.path.join(cfg.out_dir, "multi_seed.json"), "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(out, indent=2, sort_keys=True))
    if not result.complete:
        raise TrainingDivergedError(f"{len(result.failures)} seed(s) failed")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "det": cmd_det,
    "sweep-delta": cmd_sweep_delta,
    "multi-seed": cmd_multi_seed,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="openkws", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        if name in ("eval", "det"):
            p.add_argument("--checkpoint", help="model checkpoint to evaluate")
        for key in KEYS:
            p.add_argument("--" + key.replace("_", "-"), dest="opt_" + key, metavar="VALUE")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {}
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            overrides[key.strip().replace("-", "_")] = value
        for key in KEYS:
            value = getattr(args, "opt_" + key)
            if value is not None:
                overrides[key] = value
        cfg = load_config(args.config, overrides)
        COMMANDS[args.command](cfg, args)
    except (ConfigError, FeatureFileError, CheckpointError, MetricError, TrainingDivergedError,
            OSError, ValueError) as exc:
        print(f"openkws {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
