"""Evaluation of trained surrogates against the solver."""
from __future__ import annotations

import csv
import json
import math
import os
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dataset as ds
from .emsolver import CurrentDensityHistory, PowerLawParams, magnetization_loss
from .geometry import ElementMesh, SolenoidConfig
from .trainer import _jsonable

# reference values for (N, Np): FEM seconds, surrogate seconds
PAPER_TIMINGS = {(100, 10): (73 * 60, 0.107), (150, 15): (164 * 60, 0.176), (250, 25): (666 * 60, 0.366)}


@dataclass
class QueryGrid:
    mesh: ElementMesh
    times: np.ndarray

    @property
    def shape(self):
        return (len(self.times), len(self.mesh))


def predict_field(model, config: SolenoidConfig, grid: QueryGrid, norm: ds.Normalization = None,
                  batch_size=8192, train_configs=None, dtype=np.float64) -> CurrentDensityHistory:
    """Surrogate current density on a mesh/snapshot grid.

    Queries outside the unit box of the normalization, or outside the hull of
    ``train_configs``, are allowed and recorded in ``meta``.
    """
    norm = ds.Normalization.for_config(config) if norm is None else norm
    X = ds.history_inputs(grid.mesh, grid.times, config, norm)
    y = model.predict(X, batch_size=batch_size, dtype=dtype)
    J = ds.denormalize_output(y[:, 0], norm.J_c).reshape(grid.shape)
    meta = {"outside_unit_box": bool(np.any((X < 0) | (X > 1)))}
    if train_configs:
        n_lo, n_hi, p_lo, p_hi = ds._hull(train_configs)
        meta["outside_training_hull"] = not (n_lo <= config.n_turns <= n_hi
                                             and p_lo <= config.n_pancakes_half <= p_hi)
    return CurrentDensityHistory(times=np.asarray(grid.times, float), J=J, mesh=grid.mesh,
                                 transport_current=config.transport_current(grid.times), meta=meta)


def eval_split(model, rows, batch_size=8192) -> float:
    """MSE of the model over all rows of a split (size-weighted over batches)."""
    rows = np.asarray(rows)
    if rows.shape[0] == 0:
        raise ValueError("empty split")
    X, y = ds.split_xy(rows)
    total = 0.0
    for i in range(0, X.shape[0], batch_size):
        pred = model.predict(X[i:i + batch_size], batch_size=batch_size)
        d = pred - y[i:i + batch_size]
        total += float(np.sum(d * d))
    return total / X.shape[0]


@dataclass
class ErrorMap:
    error: np.ndarray     # relative error, NaN where masked
    mask: np.ndarray
    max: float
    mean: float

    @property
    def empty(self) -> bool:
        return not bool(self.mask.any())


def relative_error_map(pred, ref, threshold=0.4, J_c=5e10) -> ErrorMap:
    """|pred - ref| / |ref| restricted to points with |ref| / Jc > threshold."""
    pred = np.asarray(pred, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if pred.shape != ref.shape:
        raise ValueError(f"grid mismatch {pred.shape} vs {ref.shape}")
    mask = np.abs(ref) / J_c > threshold
    err = np.full(ref.shape, np.nan)
    err[mask] = np.abs(pred[mask] - ref[mask]) / np.abs(ref[mask])
    if not mask.any():
        return ErrorMap(err, mask, math.nan, math.nan)
    return ErrorMap(err, mask, float(err[mask].max()), float(err[mask].mean()))


def relative_loss_error(p_surrogate, p_reference):
    """Relative error with the reference (solver) loss in the denominator."""
    return abs(p_surrogate - p_reference) / p_reference


@dataclass
class LossErrorRow:
    N: int
    Np: int
    loss_surrogate: float
    loss_solver: float
    rel_error: float
    note: str = ""


def loss_error_surface(model, solver_oracle, configs, base_config: SolenoidConfig,
                       params: PowerLawParams, norm: ds.Normalization = None, train_configs=None):
    """Relative magnetization-loss error of the surrogate for every (N, Np)."""
    rows = []
    for N, Np in configs:
        ref = solver_oracle(N, Np)
        cfg = base_config.with_counts(N, Np)
        pred = predict_field(model, cfg, QueryGrid(ref.mesh, ref.times), norm,
                             train_configs=train_configs)
        p_sol = magnetization_loss(ref, params)
        p_sur = magnetization_loss(pred, params)
        if p_sol == 0:
            rows.append(LossErrorRow(N, Np, p_sur, p_sol, math.nan, "solver loss is zero; excluded"))
            continue
        rows.append(LossErrorRow(N, Np, p_sur, p_sol, relative_loss_error(p_sur, p_sol)))
    return rows


@dataclass
class TimingRow:
    N: int
    Np: int
    solver_seconds: float
    surrogate_seconds: float
    speedup: float
    query_points: int
    precision: str = "float64"
    surrogate_seconds_f64: float = None
    precision_deviation: float = None     # max |J - J_f64| / Jc on the grid
    paper_fem_seconds: float = None
    paper_model_seconds: float = None


def _median_time(fn, repetitions):
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def timing_benchmark(model, solver, configs, repetitions=3, base_config: SolenoidConfig = None,
                     norm: ds.Normalization = None, batch_size=8192, precision="float64"):
    """Median wall time of a full solver ramp vs. surrogate inference on the same grid.

    ``solver(N, Np)`` must run the complete ramp and return its history; the
    first call doubles as the warm-up and provides the query grid. For a
    reduced ``precision`` the float64 time and the largest deviation from the
    float64 field are recorded as well.
    """
    if repetitions < 3:
        raise ValueError("timing needs at least 3 repetitions")
    dtype = np.dtype(precision)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {precision!r}")
    rows = []
    for N, Np in configs:
        ref = solver(N, Np)     # warm-up
        cfg = (base_config or ref.config).with_counts(N, Np)
        grid = QueryGrid(ref.mesh, ref.times)

        def infer(dt):
            return predict_field(model, cfg, grid, norm, batch_size, dtype=dt)
        exact = infer(np.float64)
        t_sol = _median_time(lambda: solver(N, Np), repetitions)
        t64 = _median_time(lambda: infer(np.float64), repetitions)
        t_sur, dev = t64, None
        if dtype != np.float64:
            fast = infer(dtype)
            J_c = (norm or ds.Normalization.for_config(cfg)).J_c
            dev = float(np.abs(fast.J - exact.J).max() / J_c)
            t_sur = _median_time(lambda: infer(dtype), repetitions)
        fem, nn = PAPER_TIMINGS.get((N, Np), (None, None))
        rows.append(TimingRow(N, Np, t_sol, t_sur, t_sol / t_sur, grid.shape[0] * grid.shape[1],
                              dtype.name, t64, dev, fem, nn))
    return rows


@dataclass
class EvalReport:
    split_losses: dict = field(default_factory=dict)
    loss_errors: list = field(default_factory=list)
    error_maps: list = field(default_factory=list)     # summaries: config, snapshot, max, mean
    timing: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "split_losses": self.split_losses,
            "loss_errors": [asdict(r) for r in self.loss_errors],
            "error_maps": self.error_maps,
            "timing": [asdict(r) for r in self.timing],
            "flags": self.flags,
        }

    def write(self, directory):
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "report.json"), "w") as fh:
            json.dump(_jsonable(self.to_dict()), fh, indent=2)
        if self.split_losses:
            with open(os.path.join(directory, "split_losses.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["split", "mse"])
                for k, v in self.split_losses.items():
                    w.writerow([k, repr(v)])
        if self.loss_errors:
            write_rows_csv(os.path.join(directory, "error_surface.csv"), self.loss_errors)
        if self.timing:
            write_rows_csv(os.path.join(directory, "timing.csv"), self.timing)


def write_rows_csv(path, rows):
    rows = [asdict(r) for r in rows]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})


def error_map_grid(history: CurrentDensityHistory, err: ErrorMap, snapshot: int, pancake: int):
    """(points_per_tape, n_turns) slice of an error map for one pancake and snapshot."""
    m = history.mesh
    sel = m.pancake == pancake
    P = m.points_per_tape
    return err.error[snapshot, sel].reshape(-1, P).T


def write_error_map_csv(path, history: CurrentDensityHistory, ref: CurrentDensityHistory, err: ErrorMap):
    m = history.mesh
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "turn", "pancake", "r", "z", "J_ref", "J_pred", "rel_error"])
        for k, t in enumerate(history.times):
            for i in range(len(m)):
                e = err.error[k, i]
                w.writerow([repr(float(t)), int(m.turn[i]), int(m.pancake[i]), repr(float(m.r[i])),
                            repr(float(m.z[i])), repr(float(ref.J[k, i])), repr(float(history.J[k, i])),
                            "" if not np.isfinite(e) else repr(float(e))])
