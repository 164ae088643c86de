"""Orchestration of generate / train / sweep / eval / bench over a PipelineConfig.

Output layout under the run directory:

    data/{split}.sfds, data/index.json, data/histories/N{N}_Np{Np}.npy
    train/run.json, train/run_loss.csv, train/loss_curve.svg, train/checkpoints/*.sfnn
    sweep/sweep.json, sweep/sweep.csv, sweep/checkpoints/*.sfnn
    eval/report.json, eval/*.csv, eval/*.svg
    bench/report.json, bench/timing.csv
"""
from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import analysis, plots
from . import dataset as ds
from .autonet import NetworkError
from .config import ConfigError, PipelineConfig
from .emsolver import CurrentDensityHistory, SolverError, default_snapshot_times, solve_ramp
from .geometry import build_solenoid, discretize
from .trainer import Model, TrainData, TrainedModel, checkpoint_name, run_sweep, train

log = logging.getLogger(__name__)


class DataError(RuntimeError):
    pass


class DivergenceError(RuntimeError):
    pass


def _paths(out):
    return {k: os.path.join(out, k) for k in ("data", "train", "sweep", "eval", "bench")}


def history_path(out, N, Np):
    return os.path.join(out, "data", "histories", f"N{N}_Np{Np}.npy")


def snapshot_times(cfg: PipelineConfig):
    return default_snapshot_times(cfg.geometry, cfg.sampling.snapshots)


def mesh_for(cfg: PipelineConfig, N, Np):
    return discretize(build_solenoid(cfg.geometry.with_counts(N, Np)), cfg.sampling.resolution)


def solve_config(cfg: PipelineConfig, N, Np) -> CurrentDensityHistory:
    mesh = mesh_for(cfg, N, Np)
    try:
        hist = solve_ramp(mesh, cfg.geometry.with_counts(N, Np), cfg.power_law, snapshot_times(cfg),
                          max_dt=cfg.sampling.max_dt)
    except SolverError as exc:
        raise SolverError(f"solver failed for (N={N}, Np={Np}): {exc}") from exc
    return hist


def _solve_job(args):
    cfg, N, Np = args
    h = solve_config(cfg, N, Np)
    return h.J, h.stats.max_constraint_error


def _map(fn, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def plan_summary(cfg: PipelineConfig):
    """(split, configs, expected rows) for every split of the plan."""
    P, T = cfg.points_per_tape, cfg.sampling.snapshots
    return [(m.split, m.configs, sum(N * Np * P * T for N, Np in m.configs))
            for m in ds.build_splits(cfg.plan)]


def generate(cfg: PipelineConfig, out, jobs=1, dry_run=False, echo=print):
    """Solve every configuration of the plan and write one dataset file per split."""
    summary = plan_summary(cfg)
    if dry_run:
        for split, configs, rows in summary:
            echo(f"{split:12s} {len(configs):3d} configs  ~{rows} rows  "
                 + " ".join(f"({N},{Np})" for N, Np in configs))
        echo(f"total ~{sum(r for _, _, r in summary)} rows; nothing written")
        return None

    data_dir = _paths(out)["data"]
    os.makedirs(os.path.join(data_dir, "histories"), exist_ok=True)
    configs = cfg.all_configs()
    results = dict(zip(configs, _map(_solve_job, [(cfg, N, Np) for N, Np in configs], jobs)))
    times = snapshot_times(cfg)
    norm_d = {k: v for k, v in vars(cfg.normalization).items()}
    base = {k: v for k, v in vars(cfg.geometry).items() if k not in ("n_turns", "n_pancakes_half")}
    index = {"points_per_tape": cfg.points_per_tape, "snapshot_times": times.tolist(), "splits": {},
             "max_constraint_error": max(r[1] for r in results.values())}
    for N, Np in configs:
        np.save(history_path(out, N, Np), np.ascontiguousarray(results[(N, Np)][0]))
    for split, split_configs, _ in summary:
        blocks = []
        for N, Np in split_configs:
            hist = CurrentDensityHistory(times=times, J=results[(N, Np)][0], mesh=mesh_for(cfg, N, Np),
                                         transport_current=cfg.geometry.transport_current(times))
            blocks.append(ds.sample_history(hist, cfg.geometry.with_counts(N, Np), cfg.normalization))
        manifest = ds.DatasetManifest(split=split, configs=[tuple(c) for c in split_configs],
                                      snapshot_times=times.tolist(), points_per_tape=cfg.points_per_tape,
                                      normalization=norm_d, base_config=base,
                                      row_counts=[int(b.shape[0]) for b in blocks])
        path = os.path.join(data_dir, f"{split}.sfds")
        ds.write_dataset(np.concatenate(blocks), manifest, path)
        index["splits"][split] = {"file": f"{split}.sfds", "rows": manifest.n_rows,
                                  "configs": [list(c) for c in split_configs], "checksum": manifest.checksum}
        echo(f"{split:12s} {manifest.n_rows:8d} rows -> {path}")
    with open(os.path.join(data_dir, "index.json"), "w") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
    cfg.dump(os.path.join(out, "config.yaml"))
    return index


def load_split(out, split):
    path = os.path.join(_paths(out)["data"], f"{split}.sfds")
    if not os.path.isfile(path):
        raise DataError(f"missing dataset file {path}; run 'generate' first")
    try:
        return ds.read_dataset(path)
    except ds.DatasetError as exc:
        raise DataError(str(exc)) from exc


def load_train_data(out) -> TrainData:
    train_rows, _ = load_split(out, "train")
    val_rows, _ = load_split(out, "interp_val")
    return TrainData.from_rows(train_rows, val_rows)


def _loss_curve(run, path, title):
    series = {"train": run.train_loss, "val": run.val_loss}
    if run.train_eval_loss and all(math.isfinite(x) for x in run.train_eval_loss):
        series["train (post-epoch)"] = run.train_eval_loss
    plots.line_plot_svg(series, path, title=title, marks={"val": run.saved_epochs})


def run_train(cfg: PipelineConfig, out, resume=None, progress=None):
    data = load_train_data(out)
    model = None
    if resume is not None:
        if not os.path.isfile(resume):
            raise DataError(f"missing checkpoint {resume}")
        try:
            prev = TrainedModel.load(resume, expected_arch=cfg.network)
        except NetworkError as exc:
            raise ConfigError(f"cannot resume: {exc}") from exc
        model = Model(cfg.network, prev.params)
    d = _paths(out)["train"]
    best, run = train(data, cfg.network, cfg.training, model=model,
                      checkpoint_dir=os.path.join(d, "checkpoints"), progress=progress)
    run.write(d)
    _loss_curve(run, os.path.join(d, "loss_curve.svg"), f"{cfg.network.label} seed {cfg.training.seed}")
    info = {"status": run.status, "message": run.message, "checkpoint": None}
    if best is not None:
        info.update(checkpoint=os.path.join("checkpoints", checkpoint_name(cfg.network, cfg.training.seed, best.epoch)),
                    epoch=best.epoch, train_loss=best.train_loss, val_loss=best.val_loss,
                    train_eval_loss=best.train_eval_loss)
    with open(os.path.join(d, "latest.json"), "w") as fh:
        json.dump(info, fh, indent=2)
    if run.status != "ok":
        raise DivergenceError(f"{cfg.network.label} seed {cfg.training.seed}: {run.status}: {run.message}")
    return best, run


def run_sweep_cmd(cfg: PipelineConfig, out, jobs=1):
    if not cfg.sweep_archs:
        raise ConfigError("[sweep] archs is empty")
    data = load_train_data(out)
    d = _paths(out)["sweep"]
    report = run_sweep(data, cfg.sweep_archs, cfg.sweep_seeds, cfg.training,
                       checkpoint_dir=os.path.join(d, "checkpoints"), jobs=jobs)
    report.write(d)
    for run in report.runs:
        _loss_curve(run, os.path.join(d, f"loss_{_label(run.arch)}_seed{run.seed}.svg"),
                    f"{_label(run.arch)} seed {run.seed}")
    bad = [f"{_label(r.arch)} seed {r.seed}" for r in report.runs if r.status != "ok"]
    if bad:
        raise DivergenceError("diverged runs: " + ", ".join(bad))
    return report


def _label(arch_dict):
    tag = "FCN_L" if arch_dict["kind"] == "plain" else "FCRN_NRB"
    return f"{tag}{arch_dict['depth']}_H{arch_dict['hidden_width']}"


def resolve_checkpoint(out, checkpoint=None):
    if checkpoint is None:
        latest = os.path.join(_paths(out)["train"], "latest.json")
        if not os.path.isfile(latest):
            raise DataError(f"no checkpoint given and {latest} does not exist; run 'train' first")
        with open(latest) as fh:
            rel = json.load(fh).get("checkpoint")
        if not rel:
            raise DataError("last training run saved no checkpoint")
        checkpoint = os.path.join(_paths(out)["train"], rel)
    if not os.path.isfile(checkpoint):
        raise DataError(f"missing checkpoint {checkpoint}")
    return checkpoint


def load_model(cfg: PipelineConfig, out, checkpoint=None) -> TrainedModel:
    path = resolve_checkpoint(out, checkpoint)
    try:
        return TrainedModel.load(path)
    except NetworkError as exc:
        raise DataError(str(exc)) from exc


def solver_oracle(cfg: PipelineConfig, out):
    """History for (N, Np): stored solver output when present, else a fresh solve."""
    times = snapshot_times(cfg)

    def oracle(N, Np):
        mesh = mesh_for(cfg, N, Np)
        p = history_path(out, N, Np)
        if os.path.isfile(p):
            J = np.load(p)
            if J.shape == (times.size, len(mesh)):
                return CurrentDensityHistory(times=times, J=J, mesh=mesh,
                                             transport_current=cfg.geometry.transport_current(times))
        return solve_config(cfg, N, Np)
    return oracle


def _prefetch(cfg, out, configs, jobs):
    """Solve (in parallel) the eval configs that have no stored history."""
    times = snapshot_times(cfg)
    todo = [c for c in configs if not os.path.isfile(history_path(out, *c))]
    if not todo:
        return
    os.makedirs(os.path.dirname(history_path(out, 1, 1)), exist_ok=True)
    for (N, Np), (J, _) in zip(todo, _map(_solve_job, [(cfg, N, Np) for N, Np in todo], jobs)):
        assert J.shape[0] == times.size
        np.save(history_path(out, N, Np), J)


def run_eval(cfg: PipelineConfig, out, checkpoint=None, jobs=1):
    model = load_model(cfg, out, checkpoint)
    report = analysis.EvalReport()
    for split in ds.SPLITS:
        path = os.path.join(_paths(out)["data"], f"{split}.sfds")
        if os.path.isfile(path):
            rows, _ = load_split(out, split)
            report.split_losses[split] = analysis.eval_split(model, rows)
    if not report.split_losses:
        raise DataError("no dataset files found; run 'generate' first")
    d = _paths(out)["eval"]
    os.makedirs(d, exist_ok=True)
    needed = list(dict.fromkeys(list(cfg.eval.loss_configs) + list(cfg.eval.error_map_configs)))
    _prefetch(cfg, out, needed, jobs)
    oracle = solver_oracle(cfg, out)
    if cfg.eval.loss_configs:
        report.loss_errors = analysis.loss_error_surface(
            model, oracle, cfg.eval.loss_configs, cfg.geometry, cfg.power_law,
            cfg.normalization, cfg.train_configs)
        _error_surface_svg(report.loss_errors, os.path.join(d, "error_surface.svg"))
    flags = {}
    for N, Np in cfg.eval.error_map_configs:
        ref = oracle(N, Np)
        pred = analysis.predict_field(model, cfg.geometry.with_counts(N, Np),
                                      analysis.QueryGrid(ref.mesh, ref.times), cfg.normalization,
                                      train_configs=cfg.train_configs)
        flags[f"{N}_{Np}"] = pred.meta
        err = analysis.relative_error_map(pred.J, ref.J, cfg.eval.threshold, cfg.power_law.J_c)
        stem = f"error_map_N{N}_Np{Np}"
        analysis.write_error_map_csv(os.path.join(d, stem + ".csv"), pred, ref, err)
        k = len(ref.times) - 1
        grids = [analysis.error_map_grid(pred, err, k, p) for p in range(1, Np + 1)]
        gap = np.full((1, N), np.nan)
        stacked = np.vstack([g for pair in zip(grids, [gap] * len(grids)) for g in pair][:-1])
        plots.heatmap_svg(stacked, os.path.join(d, stem + ".svg"),
                          title=f"relative error N={N} Np={Np} t={ref.times[k]:g}s "
                                f"(|J|/Jc>{cfg.eval.threshold:g})",
                          xlabels=list(range(1, N + 1)), vmin=0.0)
        report.error_maps.append({"N": N, "Np": Np, "snapshot": k, "max": err.max, "mean": err.mean,
                                  "empty": err.empty, "file": stem + ".csv"})
    report.flags = flags
    run_json = os.path.join(_paths(out)["train"], "run.json")
    if os.path.isfile(run_json):
        with open(run_json) as fh:
            r = json.load(fh)
        plots.line_plot_svg({"train": _floats(r["train_loss"]), "val": _floats(r["val_loss"])},
                            os.path.join(d, "loss_curve.svg"), title="loss curves",
                            marks={"val": r["saved_epochs"]})
    report.write(d)
    return report


def _floats(xs):
    return [math.nan if x is None else float(x) for x in xs]


def _error_surface_svg(rows, path):
    Ns = sorted({r.N for r in rows})
    Ps = sorted({r.Np for r in rows})
    grid = np.full((len(Ps), len(Ns)), np.nan)
    for r in rows:
        grid[Ps.index(r.Np), Ns.index(r.N)] = r.rel_error
    plots.heatmap_svg(grid, path, title="relative magnetization-loss error",
                      xlabels=[f"N={n}" for n in Ns], ylabels=[f"Np={p}" for p in Ps], vmin=0.0, cell=40)


def run_bench(cfg: PipelineConfig, out, checkpoint=None, repetitions=None):
    model = load_model(cfg, out, checkpoint)
    if not cfg.bench.configs:
        raise ConfigError("[bench] configs is empty")
    reps = cfg.bench.repetitions if repetitions is None else repetitions
    if reps < 3:
        raise ConfigError("bench needs at least 3 repetitions")
    rows = analysis.timing_benchmark(model, lambda N, Np: solve_config(cfg, N, Np), cfg.bench.configs,
                                     reps, cfg.geometry, cfg.normalization,
                                     precision=cfg.bench.precision)
    report = analysis.EvalReport(timing=rows)
    report.write(_paths(out)["bench"])
    return report
