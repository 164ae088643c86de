import os

import pytest
import yaml
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def tiny_config_dict(out="runs/tiny"):
    """A plan small enough to generate, train and evaluate in seconds."""
    return {
        "output_dir": out,
        "geometry": {"inner_radius": 0.01, "tape_width": 0.004, "tape_thickness": 1e-4,
                     "pancake_gap": 0.001, "op_current": 50.0, "ramp_rate": 50.0,
                     "sc_layer_thickness": 1e-6},
        "power_law": {"E_c": 1e-4, "J_c": 5e10, "n_index": 21},
        "sampling": {"resolution": 1e-3, "snapshots": 5},
        "normalization": {"r_scale": 2500.0, "z_offset": 5e-4, "z_scale": 250.0, "t_scale": 1.0,
                          "n_turns_scale": 4.0, "n_pancakes_scale": 2.0, "pancake_scale": 2.0},
        "plan": {"train": [[1, 1], [3, 1]], "interp_val": [[2, 1]], "extrap_N": [[4, 1]],
                 "extrap_Np": [[2, 2]], "extrap_both": [[4, 2]]},
        "network": {"kind": "residual", "hidden_width": 8, "depth": 1},
        "sweep": {"archs": [{"kind": "plain", "hidden_width": 8, "depth": 3},
                            {"kind": "residual", "hidden_width": 8, "depth": 1}],
                  "seeds": [0, 1]},
        "training": {"batch_size_train": 16, "batch_size_val": 64, "max_epochs": 3,
                     "base_lr": 5e-4, "lr_factor": 0.6, "lr_period": 50, "seed": 0},
        "eval": {"threshold": 0.4, "loss_configs": [[1, 1], [2, 1], [4, 2]],
                 "error_map_configs": [[3, 1]]},
        "bench": {"configs": [[1, 1], [2, 2]], "repetitions": 3},
    }


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    with open(path, "w") as fh:
        yaml.safe_dump(tiny_config_dict(str(tmp_path / "run")), fh)
    return path


# one line per acceptance criterion, echoed again at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
