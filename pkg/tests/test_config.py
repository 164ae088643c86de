import os

import pytest
import yaml

from hts_surrogate import config as cm
from hts_surrogate import dataset as ds
from hts_surrogate.config import ConfigError

from conftest import tiny_config_dict


def test_presets_load():
    paper = cm.load("paper")
    assert paper.network.label == "FCRN_NRB12_H256"
    assert paper.points_per_tape == 41
    assert len(paper.plan["train"]) == 25
    assert len(paper.plan["interp_val"]) == 9
    assert sum(len(paper.plan[k]) for k in ds.EXTRAP_SPLITS) == 16
    assert len(paper.sweep_archs) == 18
    assert paper.training.batch_size_train == 4096
    assert paper.training.max_epochs == 500
    desk = cm.load("desk")
    assert desk.plan == {k: [tuple(c) for c in v] for k, v in ds.DESK_PLAN.items()}
    assert desk.points_per_tape == 21


def test_preset_output_dir_relative_to_cwd():
    assert not os.path.isabs(cm.load("desk").output_dir)


def test_file_output_dir_relative_to_file(tmp_path):
    d = tiny_config_dict("rel_run")
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(d))
    assert cm.load(str(p)).output_dir == str(tmp_path / "rel_run")


def test_roundtrip(tmp_path):
    cfg = cm.from_dict(tiny_config_dict(str(tmp_path / "run")))
    cfg.dump(tmp_path / "again.yaml")
    again = cm.load(str(tmp_path / "again.yaml"))
    assert again.to_dict() == cfg.to_dict()


@pytest.mark.parametrize("mutate,match", [
    (lambda d: d.update(bogus=1), "unknown top-level"),
    (lambda d: d["geometry"].update(colour="red"), "unknown keys"),
    (lambda d: d["sampling"].update(resolution=3e-4), "does not divide"),
    (lambda d: d["sampling"].update(snapshots=1), "snapshots"),
    (lambda d: d["geometry"].update(tape_width=-1.0), "positive"),
    (lambda d: d["plan"].update(train=[[1, 1]], interp_val=[[1, 1]]), "plan"),
    (lambda d: d["plan"].update(train="nope"), "pairs"),
    (lambda d: d["network"].update(kind="conv"), "network"),
    (lambda d: d["bench"].update(repetitions=2), "repetitions"),
    (lambda d: d["bench"].update(precision="float16"), "precision"),
    (lambda d: d["sampling"].update(max_dt=0), "max_dt"),
    (lambda d: d["training"].update(batch_size_train=0), "training"),
    (lambda d: d["normalization"].update(r_scale=0), "non-zero"),
    (lambda d: d.update(output_dir=""), "output_dir"),
])
def test_invalid_configs(mutate, match):
    d = tiny_config_dict()
    mutate(d)
    with pytest.raises(ConfigError, match=match):
        cm.from_dict(d)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        cm.load(str(tmp_path / "nope.yaml"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("geometry: [unclosed\n")
    with pytest.raises(ConfigError):
        cm.load(str(bad))
    scalar = tmp_path / "scalar.yaml"
    scalar.write_text("3\n")
    with pytest.raises(ConfigError):
        cm.load(str(scalar))
