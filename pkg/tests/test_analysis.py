import math
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hts_surrogate import analysis as an
from hts_surrogate import dataset as ds
from hts_surrogate.autonet import RESIDUAL, NetworkArch
from hts_surrogate.emsolver import PowerLawParams, magnetization_loss, solve_ramp
from hts_surrogate.geometry import SolenoidConfig, build_solenoid, discretize
from hts_surrogate.trainer import Model, TrainedModel

PARAMS = PowerLawParams()
BASE = SolenoidConfig()
RES = 1e-3


def solve(N, Np, snapshots=5):
    cfg = BASE.with_counts(N, Np)
    mesh = discretize(build_solenoid(cfg), RES)
    return solve_ramp(mesh, cfg, PARAMS, np.linspace(0, cfg.ramp_duration, snapshots))


@pytest.fixture(scope="module")
def history():
    return solve(4, 2)


class Replay:
    """Model stand-in that returns a stored field in query order."""

    def __init__(self, J, scale=1.0):
        self.y = ds.normalize_output(scale * J, PARAMS.J_c).reshape(-1, 1)

    def predict(self, X, batch_size=8192, dtype=np.float64):
        assert X.shape[0] == self.y.shape[0]
        return self.y


def random_model(seed=0):
    arch = NetworkArch(RESIDUAL, 8, 1)
    return TrainedModel(arch, Model.fresh(arch, seed).params, 0, 1.0, 1.0)


# --------------------------------------------------------------------------
# error maps

def test_error_map_identity(history):
    err = an.relative_error_map(history.J, history.J)
    assert not err.empty
    assert err.max == 0.0 and err.mean == 0.0
    assert np.all(np.isnan(err.error[~err.mask]))


def test_error_map_uniform_scaling(history):
    err = an.relative_error_map(1.1 * history.J, history.J)
    assert err.max == pytest.approx(0.1, rel=1e-12)
    assert err.mean == pytest.approx(0.1, rel=1e-12)


def test_error_map_masks_initial_snapshot(history):
    err = an.relative_error_map(history.J, history.J, threshold=0.4)
    assert not err.mask[0].any()     # no current at t = 0
    assert err.mask[-1].any()
    np.testing.assert_array_equal(err.mask, np.abs(history.J) / PARAMS.J_c > 0.4)


def test_error_map_empty_when_threshold_unreached(history):
    err = an.relative_error_map(history.J, history.J, threshold=10.0)
    assert err.empty
    assert math.isnan(err.max) and math.isnan(err.mean)


def test_error_map_shape_mismatch():
    with pytest.raises(ValueError):
        an.relative_error_map(np.ones((2, 3)), np.ones((3, 2)))


@given(arrays(np.float64, (3, 7), elements=st.floats(-1e11, 1e11)),
       st.floats(0.0, 3.0))
def test_error_map_properties(ref, scale):
    err = an.relative_error_map(scale * ref, ref)
    masked = err.error[err.mask]
    assert np.all(masked >= 0)
    np.testing.assert_allclose(masked, abs(scale - 1.0), atol=1e-12)
    assert np.all(np.abs(ref[err.mask]) > 0.4 * 5e10)


# --------------------------------------------------------------------------
# loss errors

def test_relative_loss_error_uses_reference_denominator():
    assert an.relative_loss_error(1.1, 1.0) == pytest.approx(0.1)
    assert an.relative_loss_error(1.0, 1.1) == pytest.approx(0.1 / 1.1)
    assert an.relative_loss_error(2.0, 2.0) == 0.0


def test_loss_error_zero_for_identical_field(history):
    oracle = {(4, 2): history}
    rows = an.loss_error_surface(Replay(history.J), lambda N, Np: oracle[(N, Np)], [(4, 2)], BASE, PARAMS)
    assert len(rows) == 1
    r = rows[0]
    assert (r.N, r.Np) == (4, 2)
    assert r.loss_solver == pytest.approx(magnetization_loss(history, PARAMS), rel=1e-14)
    assert r.rel_error < 1e-12


def test_loss_error_amplified_by_power_law(history):
    # a uniform 1% over-prediction changes E.J by a factor 1.01^(n+1)
    oracle = lambda N, Np: history
    r = an.loss_error_surface(Replay(history.J, 1.01), oracle, [(4, 2)], BASE, PARAMS)[0]
    assert r.rel_error == pytest.approx(1.01 ** (PARAMS.n_index + 1) - 1, rel=1e-9)


def test_loss_error_zero_reference_is_excluded(history):
    flat = solve(1, 1, snapshots=2)
    flat.J[:] = 0.0
    r = an.loss_error_surface(Replay(flat.J), lambda N, Np: flat, [(1, 1)], BASE, PARAMS)[0]
    assert math.isnan(r.rel_error)
    assert r.note


# --------------------------------------------------------------------------
# split evaluation

def _rows(n, seed):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, size=(n, ds.ROW_WIDTH)).astype(np.float32)


def test_eval_split_matches_direct_mse():
    model, rows = random_model(), _rows(500, 1)
    X, y = ds.split_xy(rows)
    expect = float(np.mean((model.predict(X) - y) ** 2))
    assert an.eval_split(model, rows) == pytest.approx(expect, rel=1e-12)
    assert an.eval_split(model, rows, batch_size=7) == pytest.approx(expect, rel=1e-12)


def test_eval_split_weighted_over_subsplits():
    model = random_model()
    a, b = _rows(300, 2), _rows(45, 3)
    la, lb = an.eval_split(model, a), an.eval_split(model, b)
    both = an.eval_split(model, np.vstack([a, b]))
    assert both == pytest.approx((300 * la + 45 * lb) / 345, rel=1e-12)
    assert both != pytest.approx((la + lb) / 2, rel=1e-6)


def test_eval_split_duplicated_rows():
    model, rows = random_model(), _rows(200, 4)
    assert an.eval_split(model, np.vstack([rows, rows])) == pytest.approx(an.eval_split(model, rows), rel=1e-12)


def test_eval_split_empty():
    with pytest.raises(ValueError):
        an.eval_split(random_model(), np.zeros((0, ds.ROW_WIDTH)))


# --------------------------------------------------------------------------
# field prediction

def test_predict_field_shape_and_batches(history):
    model = random_model()
    cfg = BASE.with_counts(4, 2)
    grid = an.QueryGrid(history.mesh, history.times)
    a = an.predict_field(model, cfg, grid)
    b = an.predict_field(model, cfg, grid, batch_size=13)
    assert a.J.shape == history.J.shape == grid.shape
    np.testing.assert_allclose(a.J, b.J, rtol=1e-12, atol=1e-12 * PARAMS.J_c)
    np.testing.assert_array_equal(a.transport_current, history.transport_current)


def test_predict_field_flags(history):
    model = random_model()
    cfg = BASE.with_counts(4, 2)
    grid = an.QueryGrid(history.mesh, history.times)
    norm = ds.Normalization.for_config(cfg, n_turns_scale=4.0, n_pancakes_scale=2.0, pancake_scale=2.0)
    inside = an.predict_field(model, cfg, grid, norm, train_configs=[(2, 1), (4, 2)])
    assert inside.meta["outside_training_hull"] is False
    outside = an.predict_field(model, cfg, grid, norm, train_configs=[(2, 1), (3, 1)])
    assert outside.meta["outside_training_hull"] is True
    tight = ds.Normalization.for_config(cfg, n_turns_scale=2.0)
    assert an.predict_field(model, cfg, grid, tight).meta["outside_unit_box"] is True


# --------------------------------------------------------------------------
# timing

def test_timing_needs_three_repetitions():
    with pytest.raises(ValueError):
        an.timing_benchmark(random_model(), solve, [(1, 1)], repetitions=2)


def test_timing_rows_and_median(history):
    calls = []

    def solver(N, Np):
        calls.append((N, Np))
        time.sleep(0.02)
        return history

    rows = an.timing_benchmark(random_model(), solver, [(4, 2)], repetitions=3, base_config=BASE)
    assert len(calls) == 4          # warm-up plus three timed runs
    r = rows[0]
    assert r.solver_seconds >= 0.02
    assert r.speedup == pytest.approx(r.solver_seconds / r.surrogate_seconds)
    assert r.query_points == history.J.size
    assert r.paper_fem_seconds is None


def test_timing_reduced_precision_records_float64(history):
    rows = an.timing_benchmark(random_model(), lambda N, Np: history, [(4, 2)], repetitions=3,
                               base_config=BASE, precision="float32")
    r = rows[0]
    assert r.precision == "float32"
    assert r.surrogate_seconds_f64 > 0
    assert 0 <= r.precision_deviation < 1e-4
    with pytest.raises(ValueError):
        an.timing_benchmark(random_model(), lambda N, Np: history, [(4, 2)], precision="float16")


def test_timing_grows_with_coil_size():
    rows = an.timing_benchmark(random_model(), lambda N, Np: solve(N, Np, snapshots=3),
                               [(8, 2), (16, 4)], repetitions=3, base_config=BASE)
    assert rows[1].solver_seconds > rows[0].solver_seconds
    assert rows[1].query_points == 4 * rows[0].query_points


def test_report_write(tmp_path, history):
    rep = an.EvalReport(split_losses={"train": 1e-3},
                        loss_errors=[an.LossErrorRow(4, 2, 1.0, 1.1, an.relative_loss_error(1.0, 1.1))])
    rep.write(tmp_path)
    assert (tmp_path / "report.json").exists()
    lines = (tmp_path / "error_surface.csv").read_text().splitlines()
    assert lines[0].startswith("N,Np,")
    assert len(lines) == 2
