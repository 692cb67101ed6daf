import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from openkws.cli import main
from openkws.config import ExperimentConfig, load_config, parse_text
from openkws.data import generate_synthetic
from openkws.exceptions import ConfigError
from openkws.network import init_network
from openkws.training import KWSModel, network_config_for, read_log

TINY = ["--dim", "4", "--n-keywords", "2", "--seen-negative-clusters", "1",
        "--unseen-negative-clusters", "1", "--train-per-cluster", "20", "--val-per-cluster", "10",
        "--test-per-cluster", "10", "--hidden-dims", "8", "--epochs", "2",
        "--keywords-per-batch", "8", "--nonkeywords-per-batch", "8"]


def run(*argv):
    return main([str(a) for a in argv])


def test_gen_data_counts_and_determinism(tmp_path):
    out = tmp_path / "missing" / "data"
    assert run("gen-data", "--out-dir", out, *TINY) == 0
    counts = {name: len((out / name).read_text().splitlines()) - 1
              for name in ("train.csv", "validation.csv", "test.csv")}
    assert counts == {"train.csv": 60, "validation.csv": 30, "test.csv": 40}
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert run("gen-data", "--out-dir", out, *TINY) == 0
    assert {p.name: p.read_bytes() for p in out.iterdir()} == first


def test_gen_data_default_row_counts(tmp_path):
    assert run("gen-data", "--out-dir", tmp_path) == 0
    lines = {n: len((tmp_path / n).read_text().splitlines()) - 1
             for n in ("train.csv", "validation.csv", "test.csv")}
    assert lines == {"train.csv": 3000, "validation.csv": 3000, "test.csv": 4000}


def test_train_then_eval_round_trip(tmp_path):
    out = tmp_path / "run"
    assert run("train", "--out-dir", out, *TINY) == 0
    for name in ("model.ckpt", "train_log.jsonl", "metrics.json", "det.csv", "summary.json",
                 "config.resolved.txt"):
        assert (out / name).exists()
    assert len(read_log(out / "train_log.jsonl")) == 2
    ev = tmp_path / "eval"
    assert run("eval", "--config", out / "config.resolved.txt", "--out-dir", ev,
               "--checkpoint", out / "model.ckpt") == 0
    assert (ev / "metrics.json").read_bytes() == (out / "metrics.json").read_bytes()
    assert run("det", "--config", out / "config.resolved.txt", "--out-dir", tmp_path / "det",
               "--checkpoint", out / "model.ckpt") == 0
    assert (tmp_path / "det" / "det.csv").read_bytes() == (out / "det.csv").read_bytes()


def test_train_from_feature_files(tmp_path):
    data = tmp_path / "data"
    assert run("gen-data", "--out-dir", data, *TINY) == 0
    files = ["--train-file", data / "train.csv", "--val-file", data / "validation.csv",
             "--test-file", data / "test.csv"]
    assert run("train", "--out-dir", tmp_path / "a", *TINY, *files) == 0
    assert run("train", "--out-dir", tmp_path / "b", *TINY) == 0
    assert (tmp_path / "a" / "metrics.json").read_bytes() == (tmp_path / "b" / "metrics.json").read_bytes()


def test_resolved_config_reproduces_run(tmp_path):
    assert run("train", "--out-dir", tmp_path / "a", *TINY, "--seed", "3") == 0
    resolved = tmp_path / "a" / "config.resolved.txt"
    assert run("train", "--config", resolved, "--set", f"out_dir={tmp_path / 'b'}") == 0
    for name in ("metrics.json", "model.ckpt", "det.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_sweep_delta_rows(tmp_path):
    assert run("sweep-delta", "--out-dir", tmp_path, *TINY, "--epochs", "1", "--n-seeds", "1") == 0
    with open(tmp_path / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6
    assert {(float(r["delta"]), r["sampler"]) for r in rows} == {
        (d, s) for d in (0.1, 0.3, 0.5) for s in ("random", "fixed_proportion")}


def test_multi_seed(tmp_path):
    assert run("multi-seed", "--out-dir", tmp_path, *TINY, "--epochs", "1", "--n-seeds", "2") == 0
    out = json.loads((tmp_path / "multi_seed.json").read_text())
    assert out["complete"] and [r["seed"] for r in out["per_seed"]] == [0, 1]
    mean = np.mean([r["total_acc"] for r in out["per_seed"]])
    assert out["mean"]["total_acc"] == pytest.approx(mean, abs=1e-15)


def test_eval_untrained_model_is_majority_rate(tmp_path):
    cfg = load_config(None, {"out_dir": str(tmp_path)})
    _, _, test = generate_synthetic(cfg.synth_config())
    net = network_config_for(cfg.train_config(), cfg.dim, cfg.n_keywords)
    KWSModel(net, init_network(net), "auc").save(tmp_path / "fresh.ckpt")
    assert run("eval", "--out-dir", tmp_path, "--checkpoint", tmp_path / "fresh.ckpt") == 0
    report = json.loads((tmp_path / "metrics.json").read_text())
    majority = np.bincount(test.labels).max() / len(test)
    assert report["total_acc"] == pytest.approx(majority, abs=0.02)


def test_checkpoint_dimension_mismatch(tmp_path, capsys):
    assert run("train", "--out-dir", tmp_path, *TINY) == 0
    code = run("eval", "--out-dir", tmp_path / "e", *TINY, "--dim", "5",
               "--checkpoint", tmp_path / "model.ckpt")
    assert code == 1
    assert "features" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["train", "--set", "learning_rate=0.1"],
    ["train", "--set", "epochs"],
    ["train", "--epochs", "many"],
    ["train", "--loss", "focal", "--epochs", "1"],
    ["eval"],
])
def test_config_errors_exit_nonzero(argv, tmp_path, capsys):
    assert main(argv + ["--out-dir", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err


def test_unknown_key_in_file(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("epochs = 3\nbogus = 1\n")
    with pytest.raises(ConfigError, match="bogus"):
        load_config(path)


def test_config_text_round_trip():
    cfg = ExperimentConfig(hidden_dims=(3, 5), deltas=(0.2,), weight_decay=1e-5, sampler="random")
    assert ExperimentConfig(**parse_text(cfg.to_text())) == cfg
    assert ExperimentConfig(**parse_text(ExperimentConfig().to_text())) == ExperimentConfig()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "openkws", "gen-data", "--out-dir", str(tmp_path),
                           *TINY], capture_output=True, text=True)
    assert proc.returncode == 0 and "test: 40 samples" in proc.stdout
