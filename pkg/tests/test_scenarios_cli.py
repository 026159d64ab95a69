"""Scenario orchestration, reports, presets, and the command-line interface."""

import json
import os

import numpy as np
import pytest

from dcmz.cli import main
from dcmz.core import KNOWN_KEYS, ConfigError
from dcmz.masking import load_masks
from dcmz.scenarios import (
    SCHEMA_VERSION,
    load_preset,
    load_task_data,
    resolve_config,
    run_scenario,
)

# small enough to train in well under a second, structured like the real
# presets so every scenario code path is exercised
TINY = {
    "task": "tiny", "mode": "static",
    "T": 0.241, "beta": 0.8, "phi": float(np.pi / 4),
    "D": 8 * 0.05205, "P": 8 * 0.05205, "N_m": 8,
    "n_train": 60, "n_test": 40, "repeats": 1,
    "iterations": 30, "batch_size": 10, "learning_rate": 0.01,
    "momentum": 0.9, "log_every": 10,
    "retrain_iterations": 40, "retrain_batch_size": 10,
    "retrain_learning_rate": 0.002,
    "scale_grid": (0.1, 0.5), "select_iterations": 15, "val_fraction": 0.2,
    "delta_beta": 0.05, "phi_drift_amplitude": 0.05,
    "phi_drift_period_samples": 2000, "noise_sigma": 0.005, "twin_seed": 0,
}


def _write_tiny_cfg(path, **extra):
    cfg = dict(TINY, **extra)
    lines = []
    for key, value in cfg.items():
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


# -------------------------------------------------------------------- presets

def test_shipped_presets_parse_and_stay_within_known_keys():
    for name in ("mnist-desk", "seq-desk", "mnist-paper"):
        cfg = load_preset(name)
        assert set(cfg) <= KNOWN_KEYS
        assert cfg["mode"] in ("static", "streaming")
        assert cfg["N_m"] >= 100
        # per-step ratio equals the full-scale geometry on every preset
        assert cfg["P"] / cfg["N_m"] / cfg["T"] == pytest.approx(0.05205 / 0.241, rel=1e-12)


def test_unknown_preset_lists_available_names():
    with pytest.raises(ConfigError, match="mnist-desk"):
        load_preset("nope")


def test_resolve_config_precedence(tmp_path):
    over = tmp_path / "over.cfg"
    over.write_text("iterations = 7\n", encoding="utf-8")
    cfg = resolve_config("mnist-desk", str(over), {"learning_rate": "0.5"})
    assert cfg["task"] == "mnist-desk"
    assert cfg["iterations"] == 7             # file beats preset
    assert cfg["learning_rate"] == 0.5        # override beats file
    assert cfg["N_m"] == 100                  # untouched preset value


def test_resolve_config_requires_a_task(tmp_path):
    anon = tmp_path / "anon.cfg"
    anon.write_text("iterations = 7\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="task"):
        resolve_config(None, str(anon), None)


def test_load_task_data_is_deterministic_across_calls():
    a_train, a_test = load_task_data(TINY)
    b_train, b_test = load_task_data(TINY)
    np.testing.assert_array_equal(a_train.images, b_train.images)
    np.testing.assert_array_equal(a_test.labels, b_test.labels)
    assert len(a_train) == 60 and len(a_test) == 40


# ------------------------------------------------------------------ scenarios

def test_unknown_scenario_is_rejected(tmp_path):
    with pytest.raises(ConfigError, match="scenario"):
        run_scenario("bogus", dict(TINY), tmp_path)


def test_shuffled_without_masks_names_the_prerequisite(tmp_path):
    with pytest.raises(ConfigError, match="optimized"):
        run_scenario("shuffled", dict(TINY), tmp_path, seed=0)


@pytest.fixture(scope="module")
def tiny_optimized(tmp_path_factory):
    out = tmp_path_factory.mktemp("opt")
    report = run_scenario("optimized", dict(TINY), out, seed=3)
    return out, report


def test_optimized_scenario_writes_a_complete_report(tiny_optimized):
    out, report = tiny_optimized
    assert (out / "report.json").exists()
    assert (out / "report.csv").exists()
    assert (out / "final.bin").exists()
    on_disk = json.loads((out / "report.json").read_text())
    assert on_disk["schema_version"] == SCHEMA_VERSION
    assert on_disk["scenario"] == "optimized"
    assert on_disk["seed"] == 3
    assert 0.0 <= on_disk["train_error"] <= 1.0
    assert 0.0 <= on_disk["test_error"] <= 1.0
    assert on_disk["wall_clock_s"] >= 0.0
    assert on_disk["config"]["N_m"] == 8
    # the hash in the report is the hash of the masks on disk
    assert load_masks(out / "final.bin").content_hash() == on_disk["masks_sha256"]
    assert "mask_loss_first" in on_disk["extra"]
    assert on_disk["extra"]["mask_loss_last"] <= on_disk["extra"]["mask_loss_first"]


def test_report_csv_is_one_header_and_one_row(tiny_optimized):
    out, _ = tiny_optimized
    lines = (out / "report.csv").read_text().strip().split("\n")
    assert len(lines) == 2
    header = lines[0].split(",")
    for column in ("scenario", "task", "seed", "train_error", "test_error", "masks_sha256"):
        assert column in header
    assert len(lines[1].split(",")) == len(header)


def test_optimized_rerun_is_bit_identical(tiny_optimized, tmp_path):
    out, report = tiny_optimized
    again = run_scenario("optimized", dict(TINY), tmp_path / "again", seed=3)
    assert again.masks_sha256 == report.masks_sha256
    assert again.train_error == report.train_error
    assert again.test_error == report.test_error


def test_shuffled_scenario_runs_from_optimized_masks(tiny_optimized, tmp_path):
    out, report = tiny_optimized
    shuf = run_scenario("shuffled", dict(TINY), tmp_path / "shuf", seed=3,
                        masks_path=str(out / "final.bin"))
    assert shuf.masks_sha256 != report.masks_sha256
    saved = load_masks(tmp_path / "shuf" / "final.bin")
    base = load_masks(out / "final.bin")
    # time-shuffling permutes mask rows; the multiset of columns survives
    assert sorted(map(tuple, saved.M.T.tolist())) != sorted(map(tuple, base.M.T.tolist())) or \
        not np.array_equal(saved.M, base.M)
    np.testing.assert_array_equal(np.sort(saved.m0), np.sort(base.m0))


def test_random_scenario_reports_its_scale_search(tmp_path):
    rand = run_scenario("random", dict(TINY), tmp_path / "rand", seed=3)
    assert rand.extra["scale"] in (0.1, 0.5)
    errs = rand.extra["scale_validation_errors"]
    assert set(errs) == {"0.1", "0.5"}
    assert all(0.0 <= v <= 1.0 for v in errs.values())


def test_twin_scenario_reports_the_mismatch_block(tiny_optimized, tmp_path):
    out, _ = tiny_optimized
    twin = run_scenario("twin", dict(TINY), tmp_path / "twin", seed=3,
                        masks_path=str(out / "final.bin"))
    for key in ("sim_test_error", "sim_train_error", "twin_reused_test_error",
                "delta_beta", "phi_drift_amplitude", "noise_sigma"):
        assert key in twin.extra
    assert twin.extra["delta_beta"] == 0.05


# ------------------------------------------------------------------------ CLI

def test_cli_run_executes_a_scenario(tmp_path, capsys):
    cfg = _write_tiny_cfg(tmp_path / "tiny.cfg")
    code = main(["run", "--scenario", "optimized", "--config", cfg,
                 "--seed", "2", "--out", str(tmp_path / "run")])
    assert code == 0
    printed = capsys.readouterr().out
    assert "scenario=optimized" in printed
    assert (tmp_path / "run" / "report.json").exists()


def test_cli_missing_prerequisite_masks_exits_2(tmp_path, capsys):
    cfg = _write_tiny_cfg(tmp_path / "tiny.cfg")
    code = main(["run", "--scenario", "shuffled", "--config", cfg,
                 "--out", str(tmp_path / "shuf")])
    assert code == 2
    assert "configuration error" in capsys.readouterr().err


def test_cli_rejects_unknown_override_keys(tmp_path, capsys):
    cfg = _write_tiny_cfg(tmp_path / "tiny.cfg")
    code = main(["train", "--config", cfg, "--bogus", "1"])
    assert code == 2
    assert "bogus" in capsys.readouterr().err


def test_cli_override_pairs_reach_the_config(tmp_path, capsys):
    cfg = _write_tiny_cfg(tmp_path / "tiny.cfg")
    code = main(["train", "--config", cfg, "--out", str(tmp_path / "t"),
                 "--iterations", "5"])
    assert code == 0
    assert "iterations=5" in capsys.readouterr().out


def test_cli_train_then_eval_round_trip(tmp_path, capsys):
    cfg = _write_tiny_cfg(tmp_path / "tiny.cfg")
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "t")]) == 0
    masks = str(tmp_path / "t" / "final.bin")
    capsys.readouterr()
    assert main(["eval", "--config", cfg, "--masks", masks,
                 "--out", str(tmp_path / "e")]) == 0
    printed = capsys.readouterr().out
    assert "train_error=" in printed and "test_error=" in printed
    assert (tmp_path / "e" / "eval.json").exists()


def test_cli_retrain_requires_readable_masks(tmp_path, capsys):
    cfg = _write_tiny_cfg(tmp_path / "tiny.cfg")
    code = main(["retrain", "--config", cfg, "--masks", str(tmp_path / "no.bin")])
    assert code == 2


def test_cli_data_synth_and_inspect_round_trip(tmp_path, capsys):
    out = tmp_path / "data"
    code = main(["data", "synth", "--kind", "digits", "--split", "train",
                 "--n", "30", "--out", str(out)])
    assert code == 0
    images = out / "train-images-idx3-ubyte"
    labels = out / "train-labels-idx1-ubyte"
    assert images.exists() and labels.exists()
    capsys.readouterr()
    assert main(["data", "inspect", str(images), str(labels)]) == 0
    printed = capsys.readouterr().out
    assert "30 images" in printed and "30 labels" in printed


def test_cli_data_synth_sequences_and_inspect(tmp_path, capsys):
    out = tmp_path / "data"
    code = main(["data", "synth", "--kind", "sequences", "--split", "test",
                 "--n", "4", "--length", "6", "--n-in", "5", "--n-classes", "3",
                 "--out", str(out)])
    assert code == 0
    capsys.readouterr()
    assert main(["data", "inspect", str(out / "test.seqs")]) == 0
    assert "4 sequences" in capsys.readouterr().out


def test_cli_data_inspect_rejects_garbage(tmp_path, capsys):
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"\xff\xfe\xfd\xfc rubbish")
    assert main(["data", "inspect", str(junk)]) == 2
    assert "magic" in capsys.readouterr().err


def test_cli_gradcheck_passes_on_a_small_instance(capsys):
    code = main(["gradcheck", "--n-m", "4", "--n-in", "2", "--seed", "0"])
    assert code == 0
    assert "gradcheck PASS" in capsys.readouterr().out


def test_cli_export_trace_writes_model_and_oracle_csv(tmp_path, capsys):
    cfg = _write_tiny_cfg(tmp_path / "tiny.cfg")
    code = main(["export-trace", "--config", cfg, "--periods", "3",
                 "--seed", "1", "--oracle", "--out", str(tmp_path / "tr")])
    assert code == 0
    trace = (tmp_path / "tr" / "trace.csv").read_text().strip().split("\n")
    assert trace[0] == "step,period,mask_step,a_bar"
    assert len(trace) == 1 + 3 * 8
    oracle = (tmp_path / "tr" / "oracle.csv").read_text().strip().split("\n")
    assert oracle[0].startswith("step,period,mask_step,a_bar")


def test_cli_export_trace_from_a_dataset_sample(tmp_path, capsys):
    cfg = _write_tiny_cfg(tmp_path / "tiny.cfg")
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "t"),
                 "--iterations", "2"]) == 0
    capsys.readouterr()
    code = main(["export-trace", "--config", cfg,
                 "--masks", str(tmp_path / "t" / "final.bin"),
                 "--sample-index", "0", "--out", str(tmp_path / "tr")])
    assert code == 0
    assert (tmp_path / "tr" / "trace.csv").exists()


def test_cli_export_trace_sample_needs_masks(tmp_path, capsys):
    cfg = _write_tiny_cfg(tmp_path / "tiny.cfg")
    code = main(["export-trace", "--config", cfg, "--sample-index", "0",
                 "--out", str(tmp_path / "tr")])
    assert code == 2
    assert "masks" in capsys.readouterr().err
