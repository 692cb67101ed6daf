import numpy as np
import pytest

from openkws.data import (LabeledDataset, SynthConfig, feature_header, generate_synthetic,
                          load_features, write_features)
from openkws.exceptions import ConfigError, FeatureFileError


def test_split_sizes():
    cfg = SynthConfig(n_keywords=2, seen_negative_clusters=1, unseen_negative_clusters=1,
                      train_per_cluster=10, val_per_cluster=10, test_per_cluster=10)
    train, val, test = generate_synthetic(cfg)
    assert (len(train), len(val), len(test)) == (30, 30, 40)
    assert cfg.split_sizes() == {"train": 30, "validation": 30, "test": 40}


def test_unseen_only_in_test():
    train, val, test = generate_synthetic(SynthConfig(train_per_cluster=5, val_per_cluster=5,
                                                     test_per_cluster=5))
    assert not train.unseen_mask.any() and not val.unseen_mask.any()
    assert test.unseen_mask.sum() == 25
    assert np.all(test.labels[test.unseen_mask] == 0)


def test_no_unseen_clusters():
    *_, test = generate_synthetic(SynthConfig(unseen_negative_clusters=0, train_per_cluster=3,
                                              val_per_cluster=3, test_per_cluster=3))
    assert not test.unseen_mask.any()


def test_balanced_per_class():
    cfg = SynthConfig(train_per_cluster=7, val_per_cluster=5, test_per_cluster=3)
    train, val, test = generate_synthetic(cfg)
    for ds, n in ((train, 7), (val, 5), (test, 3)):
        counts = np.bincount(ds.labels)
        assert np.all(counts[1:] == n)
        assert counts[0] == n * (cfg.seen_negative_clusters
                                 + (cfg.unseen_negative_clusters if ds.split == "test" else 0))


def test_generation_deterministic():
    a = generate_synthetic(SynthConfig(seed=3, train_per_cluster=4))
    b = generate_synthetic(SynthConfig(seed=3, train_per_cluster=4))
    for x, y in zip(a, b):
        assert x.features.tobytes() == y.features.tobytes()
        assert np.array_equal(x.labels, y.labels)


def test_synth_config_validation():
    with pytest.raises(ConfigError):
        SynthConfig(cluster_std=0)
    with pytest.raises(ConfigError):
        SynthConfig(n_keywords=0)


def test_dataset_invariants():
    with pytest.raises(ValueError):
        LabeledDataset(np.ones((2, 2)), [1, 0], [True, False], split="test")
    with pytest.raises(ValueError):
        LabeledDataset(np.ones((2, 2)), [0, 0], [True, False], split="train")


def test_write_load_round_trip(tmp_path):
    *_, test = generate_synthetic(SynthConfig(train_per_cluster=2, val_per_cluster=2,
                                              test_per_cluster=4, seed=8))
    path = tmp_path / "sub" / "test.csv"
    write_features(test, path)
    loaded = load_features(path, n_keywords=10)
    assert loaded.features.tobytes() == test.features.tobytes()
    assert np.array_equal(loaded.labels, test.labels)
    assert np.array_equal(loaded.unseen_mask, test.unseen_mask)


def test_load_two_rows(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text(feature_header(3) + "\n1,0,0.5,1,2\n0,0,-1,0,3e-2\n")
    ds = load_features(path)
    assert len(ds) == 2
    np.testing.assert_array_equal(ds.features, [[0.5, 1, 2], [-1, 0, 0.03]])


@pytest.mark.parametrize("body,line", [
    ("-1,0,0.5,1,2\n", 2),
    ("1,0,0.5,1,2\n1,0,0.5,1\n", 3),
    ("1,0,0.5,abc,2\n", 2),
    ("5,0,0.5,1,2\n", 2),
    ("1,1,0.5,1,2\n", 2),
])
def test_load_errors_name_the_line(tmp_path, body, line):
    path = tmp_path / "f.csv"
    path.write_text(feature_header(3) + "\n" + body)
    with pytest.raises(FeatureFileError, match=f"line {line}"):
        load_features(path, n_keywords=3)


def test_load_empty_file(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("")
    with pytest.raises(FeatureFileError):
        load_features(path)


def test_load_bad_header(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("y,unseen,a\n1,0,2\n")
    with pytest.raises(FeatureFileError, match="header"):
        load_features(path)
