import json
import pytest

import wwforecast as wf


def test_metrics_example():
    m = wf.compute_metrics([10.0, 20.0], [12.0, 18.0])
    assert m.mae == pytest.approx(2.0)
    assert m.smape == pytest.approx(100.0 * (2 / 22 + 2 / 38))
    assert m.cv == pytest.approx(100.0 * 2.0 / 15.0)
    assert m.count == 2


def test_metrics_zero_mean_has_no_cv():
    m = wf.compute_metrics([0.0, 0.0], [0.0, 1.0])
    assert m.cv is None
    assert m.smape == pytest.approx(100.0)


def test_metrics_length_mismatch_raises():
    with pytest.raises(wf.Error):
        wf.compute_metrics([1.0], [1.0, 2.0])


def test_window_count_matches_enumeration():
    for length in range(1, 60):
        for stride in (1, 3, 10):
            brute = len(range(0, length - 14 - 7 + 1, stride)) if length >= 21 else 0
            assert wf.window_count(length, 14, 7, stride) == brute


def test_split_example_and_error():
    assert wf.split_chronological(100, 14, 7) == (72, 80, 100)
    with pytest.raises(wf.DataError, match="C42"):
        wf.split_chronological(45, 30, 10, "C42")


def tiny_config():
    return {
        "synth": {"counties": 3, "days": 160},
        "holdout": ["C03"],
        "tft": {"hidden": 4, "heads": 1},
        "deeptcn": {"channels": 4, "decoder_hidden": 4},
        "train": {"max_epochs": 2, "patience": 1, "batch_size": 64, "steps_per_epoch": 2},
        "seed": 1,
    }


def test_config_hash_is_stable_and_seeded():
    cfg = tiny_config()
    h = wf.config_hash(cfg)
    assert len(h) == 16 and h == wf.config_hash(json.dumps(cfg))
    cfg["seed"] = 2
    assert wf.config_hash(cfg) != h


def test_bad_config_raises_config_error():
    with pytest.raises(wf.ConfigError):
        wf.config_hash({"train": {"learning_rate": -1.0}})
    with pytest.raises(wf.ConfigError):
        wf.config_hash("{not json")


def test_ablate_end_to_end(tmp_path):
    assert wf.run("ablate", tiny_config(), tmp_path) == 0
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics
    for name in ("metrics.json", "importance.json"):
        assert (tmp_path / name).stat().st_size > 0
    assert metrics["config_hash"] == wf.config_hash(tiny_config())
