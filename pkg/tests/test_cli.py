import csv
import json
import os
import subprocess
import sys

import pytest
import yaml

from hts_surrogate import cli
from hts_surrogate import dataset as ds
from hts_surrogate import pipeline
from hts_surrogate.config import OUT_ENV
from hts_surrogate.trainer import TrainedModel

from conftest import tiny_config_dict


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    """A tiny run directory after generate + train."""
    base = tmp_path_factory.mktemp("cli")
    cfg = base / "tiny.yaml"
    cfg.write_text(yaml.safe_dump(tiny_config_dict(str(base / "run"))))
    assert cli.main(["generate", "--config", str(cfg)]) == 0
    assert cli.main(["train", "--config", str(cfg)]) == 0
    return cfg, base / "run"


def test_generate_writes_every_split(run_dir):
    cfg, out = run_dir
    index = json.loads((out / "data" / "index.json").read_text())
    plan = tiny_config_dict()["plan"]
    P, T = 5, 5
    for split in ds.SPLITS:
        rows, man = ds.read_dataset(out / "data" / f"{split}.sfds")
        assert man.configs == [tuple(c) for c in plan[split]]
        assert rows.shape == (sum(N * Np for N, Np in man.configs) * P * T, ds.ROW_WIDTH)
        assert index["splits"][split]["rows"] == rows.shape[0]
    assert (out / "config.yaml").exists()
    assert (out / "data" / "histories" / "N4_Np2.npy").exists()


def test_dry_run_writes_nothing(tmp_path, tiny_config, capsys):
    out = tmp_path / "dry"
    for cmd in ("generate", "train", "eval"):
        assert cli.main([cmd, "--config", str(tiny_config), "--out", str(out), "--dry-run"]) == 0
    assert not out.exists()
    text = capsys.readouterr().out
    assert "interp_val" in text and "nothing written" in text


def test_generate_deterministic(tmp_path, tiny_config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["generate", "--config", str(tiny_config), "--out", str(a), "--deterministic"]) == 0
    assert cli.main(["generate", "--config", str(tiny_config), "--out", str(b), "--jobs", "2"]) == 0
    for split in ds.SPLITS:
        assert (a / "data" / f"{split}.sfds").read_bytes() == (b / "data" / f"{split}.sfds").read_bytes()


def test_train_outputs(run_dir):
    _, out = run_dir
    latest = json.loads((out / "train" / "latest.json").read_text())
    assert latest["status"] == "ok"
    ckpt = out / "train" / latest["checkpoint"]
    model = TrainedModel.load(ckpt)
    assert model.arch.label == "FCRN_NRB1_H8"
    with open(out / "train" / "run_loss.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    assert (out / "train" / "loss_curve.svg").read_text().startswith("<svg")


def test_eval_reproduces_training_losses(run_dir, capsys):
    cfg, out = run_dir
    assert cli.main(["eval", "--config", str(cfg)]) == 0
    report = json.loads((out / "eval" / "report.json").read_text())
    latest = json.loads((out / "train" / "latest.json").read_text())
    # float32 checkpoint weights vs the float64 model that was scored in training
    assert report["split_losses"]["train"] == pytest.approx(latest["train_eval_loss"], rel=1e-4)
    assert report["split_losses"]["interp_val"] == pytest.approx(latest["val_loss"], rel=1e-4)
    assert set(report["split_losses"]) == set(ds.SPLITS)
    with open(out / "eval" / "error_surface.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [(int(r["N"]), int(r["Np"])) for r in rows] == [tuple(c) for c in tiny_config_dict()["eval"]["loss_configs"]]
    assert (out / "eval" / "error_map_N3_Np1.csv").exists()
    assert (out / "eval" / "error_map_N3_Np1.svg").exists()
    assert (out / "eval" / "error_surface.svg").exists()
    assert report["flags"]["3_1"]["outside_training_hull"] is False


def test_bench(run_dir, capsys):
    cfg, out = run_dir
    assert cli.main(["bench", "--config", str(cfg)]) == 0
    with open(out / "bench" / "timing.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [(int(r["N"]), int(r["Np"])) for r in rows] == [(1, 1), (2, 2)]
    assert all(float(r["speedup"]) > 0 for r in rows)
    assert "speedup" in capsys.readouterr().out
    assert cli.main(["bench", "--config", str(cfg), "--repetitions", "2"]) == cli.EXIT_CONFIG


def test_sweep_two_by_two(run_dir):
    cfg, out = run_dir
    assert cli.main(["sweep", "--config", str(cfg), "--epochs", "2"]) == 0
    ckpts = sorted(os.listdir(out / "sweep" / "checkpoints"))
    labels = {c.split("_seed")[0] + "_seed" + c.split("_seed")[1][0] for c in ckpts}
    assert labels == {"FCN_L3_H8_seed0", "FCN_L3_H8_seed1", "FCRN_NRB1_H8_seed0", "FCRN_NRB1_H8_seed1"}
    with open(out / "sweep" / "sweep.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 2
    assert (out / "sweep" / "sweep.json").exists()


def test_resume_rejects_other_arch(run_dir, tmp_path):
    cfg, out = run_dir
    latest = json.loads((out / "train" / "latest.json").read_text())
    ckpt = str(out / "train" / latest["checkpoint"])
    d = tiny_config_dict(str(tmp_path / "other"))
    d["network"] = {"kind": "plain", "hidden_width": 8, "depth": 3}
    other = tmp_path / "other.yaml"
    other.write_text(yaml.safe_dump(d))
    rc = cli.main(["train", "--config", str(other), "--out", str(out), "--resume", ckpt, "--epochs", "1"])
    assert rc == cli.EXIT_CONFIG


def test_resume_same_arch(run_dir, tmp_path):
    cfg, out = run_dir
    latest = json.loads((out / "train" / "latest.json").read_text())
    ckpt = str(tmp_path / "start.sfnn")
    with open(out / "train" / latest["checkpoint"], "rb") as src, open(ckpt, "wb") as dst:
        dst.write(src.read())
    assert cli.main(["train", "--config", str(cfg), "--resume", ckpt, "--epochs", "1"]) == 0


def test_missing_data_and_checkpoint(tmp_path, tiny_config):
    empty = str(tmp_path / "empty")
    assert cli.main(["train", "--config", str(tiny_config), "--out", empty]) == cli.EXIT_DATA
    assert cli.main(["eval", "--config", str(tiny_config), "--out", empty]) == cli.EXIT_DATA
    assert cli.main(["train", "--config", str(tiny_config), "--out", empty,
                     "--resume", str(tmp_path / "none.sfnn")]) == cli.EXIT_DATA


def test_config_errors(tmp_path):
    assert cli.main(["generate", "--config", str(tmp_path / "absent.yaml")]) == cli.EXIT_CONFIG
    assert cli.main(["generate", "--config", "desk", "--jobs", "0", "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert cli.main(["train", "--config", "desk", "--epochs", "0", "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_divergence_exit_code(run_dir, tmp_path, monkeypatch):
    cfg, _ = run_dir

    def boom(*a, **k):
        raise pipeline.DivergenceError("diverged")
    monkeypatch.setattr(pipeline, "run_train", boom)
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == cli.EXIT_DIVERGED


def test_solver_exit_code(tmp_path, tiny_config, monkeypatch):
    from hts_surrogate.emsolver import SolverError

    def boom(*a, **k):
        raise SolverError("no convergence")
    monkeypatch.setattr(pipeline, "generate", boom)
    assert cli.main(["generate", "--config", str(tiny_config), "--out", str(tmp_path)]) == cli.EXIT_SOLVER


def test_out_env_default(tmp_path, tiny_config, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv(OUT_ENV, str(target))
    args = cli.build_parser().parse_args(["generate", "--config", str(tiny_config)])
    from hts_surrogate import config as cm
    assert cli.resolve_out(args, cm.load(str(tiny_config))) == str(target)
    args = cli.build_parser().parse_args(["generate", "--config", str(tiny_config), "--out", "x"])
    assert cli.resolve_out(args, cm.load(str(tiny_config))) == "x"


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "hts_surrogate", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("generate", "train", "sweep", "eval", "bench"):
        assert cmd in res.stdout
