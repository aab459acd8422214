import json
import shutil

import pytest

from soarlab.cli import main

SMALL = {
    "seed": 3,
    "dataset": {"kind": "blobs", "d": 2, "C": 2, "n_per_class": 60, "test_n_per_class": 40,
                "separation": 3.0, "rescale": True},
    "model": {"family": "mlp", "hidden": [8, 8]},
    "train": {"method": "soar", "epochs": 2, "lr": 0.004, "eps": 0.05, "clamp_box": [0.0, 1.0],
              "pretrain_epochs": 2, "early_stop_metric": "probe_pgd_acc", "patience": 2},
    "attacks": {"pgd20": {"eps": 0.05, "step": 0.0125, "iters": 20, "clamp_box": [0.0, 1.0]},
                "fgsm": {"eps": 0.05, "clamp_box": [0.0, 1.0]}},
    "eval": {"confidence": ["clean", "pgd1"], "grad_nonzero": True, "saturation_step": 0.0125,
             "relaxation_eps": 0.05, "interpolation_points": 3, "interpolation_steps": 5},
    "bounds": {"instances": 6, "linf_samples": 2000, "frobenius_matrices": 3, "hvp_instances": 3},
}


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL))
    return p


def manifest_names(d):
    return [line.split("\t")[0] for line in (d / "manifest.txt").read_text().splitlines()]


def test_train_eval_interpolate(tmp_path, config, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(config), "--out", str(out)]) == 0
    assert set(manifest_names(out)) == {"model.npz", "run.json", "metrics.csv"}
    rec = json.loads((out / "run.json").read_text())
    assert rec["config"]["seed"] == 3 and rec["status"] == "ok"
    ev_out = tmp_path / "eval"
    assert main(["eval", "--checkpoint", str(out / "model.npz"), "--config", str(config), "--out", str(ev_out)]) == 0
    metrics = (ev_out / "metrics.csv").read_text()
    assert "robust/pgd20" in metrics and "relaxation/l2_loss" in metrics
    ip = tmp_path / "interp"
    assert main(["interpolate", "--checkpoint", str(out / "model.npz"), "--config", str(config), "--out", str(ip)]) == 0
    assert len((ip / "curves.csv").read_text().splitlines()) == 1 + 3 * 5


def test_train_and_eval_metrics_are_byte_identical(tmp_path, config):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["--threads", "1", "train", "--config", str(config), "--out", str(d)]) == 0
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    ea, eb = tmp_path / "ea", tmp_path / "eb"
    for d in (ea, eb):
        assert main(["--threads", "1", "eval", "--checkpoint", str(a / "model.npz"), "--config", str(config),
                     "--out", str(d)]) == 0
    assert (ea / "metrics.csv").read_bytes() == (eb / "metrics.csv").read_bytes()


def test_toy_table(tmp_path, capsys):
    assert main(["toy", "--d", "2", "--sigma", "1", "--eps", "1", "--trials", "100000", "--out", str(tmp_path)]) == 0
    header, row = (tmp_path / "metrics.csv").read_text().splitlines()
    assert header == "d,sigma,eps,predicted,monte_carlo"
    _, _, _, pred, mc = row.split(",")
    assert float(pred) == pytest.approx(1.6366, abs=1e-4)
    assert float(mc) == pytest.approx(float(pred), rel=0.02)


def test_verify_bounds(tmp_path, config, capsys):
    assert main(["verify-bounds", "--config", str(config), "--out", str(tmp_path)]) == 0
    assert "bounds: PASS" in capsys.readouterr().out


def test_unknown_flag_prints_usage(capsys):
    assert main(["train", "--bogus"]) == 1
    assert "usage:" in capsys.readouterr().err


def test_missing_files(tmp_path, config):
    assert main(["train", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 1
    assert main(["eval", "--checkpoint", str(tmp_path / "none.npz"), "--config", str(config),
                 "--out", str(tmp_path)]) == 1


@pytest.mark.parametrize("patch", [
    {"extra": 1},
    {"train": {"epochz": 1}},
    {"train": {"seed": 1}},
    {"dataset": {"kind": "blobs", "colour": "red"}},
    {"attacks": {"a": {"eps": 0.1, "stepp": 1}}},
    {"eval": {"attacks": ["missing"]}},
    {"train": {"method": "bogus"}},
])
def test_config_errors_exit_1(tmp_path, patch, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({**SMALL, **patch}))
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
    assert "config error" in capsys.readouterr().err


def test_invalid_json_exit_1(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 1


def test_non_finite_training_exits_2(tmp_path):
    data = tmp_path / "train.csv"
    data.write_text("1e300,1e300,0\n-1e300,1e300,1\n")
    cfg = {"dataset": {"kind": "csv", "train": "train.csv", "test": "train.csv", "d": 2, "C": 2},
           "model": {"family": "logistic"},
           "train": {"method": "standard", "epochs": 2, "lr": 1e10, "probe_fraction": 0.0}}
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    import numpy as np
    with np.errstate(all="ignore"):
        assert main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert json.loads((tmp_path / "o" / "run.json").read_text())["status"] == "aborted"
