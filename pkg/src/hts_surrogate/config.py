"""Declarative pipeline configuration loaded from YAML."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields

import yaml

from . import dataset as ds
from .autonet import NetworkArch, NetworkError
from .emsolver import PowerLawParams
from .geometry import GeometryError, SolenoidConfig, points_for_resolution
from .trainer import TrainHyper

OUT_ENV = "HTS_SURROGATE_OUT"
PRESETS = ("paper", "desk")
_PRESET_DIR = os.path.join(os.path.dirname(__file__), "configs")


class ConfigError(ValueError):
    pass


@dataclass
class Sampling:
    resolution: float = 1e-4
    snapshots: int = 11
    max_dt: float = None     # solver step cap in seconds; None caps at the snapshot spacing


@dataclass
class EvalPlan:
    threshold: float = 0.4
    loss_configs: list = field(default_factory=list)
    error_map_configs: list = field(default_factory=list)


@dataclass
class BenchPlan:
    configs: list = field(default_factory=list)
    repetitions: int = 3
    precision: str = "float64"     # surrogate arithmetic for the timing; float64 is always recorded too


@dataclass
class PipelineConfig:
    geometry: SolenoidConfig
    power_law: PowerLawParams
    sampling: Sampling
    normalization: ds.Normalization
    plan: dict
    network: NetworkArch
    sweep_archs: list
    sweep_seeds: list
    training: TrainHyper
    eval: EvalPlan
    bench: BenchPlan
    output_dir: str = "runs"
    source: str = ""

    @property
    def points_per_tape(self) -> int:
        return points_for_resolution(self.geometry.tape_width, self.sampling.resolution)

    @property
    def train_configs(self):
        return [tuple(c) for c in self.plan["train"]]

    def all_configs(self):
        seen = []
        for name in ds.SPLITS:
            for c in self.plan.get(name, []):
                if tuple(c) not in seen:
                    seen.append(tuple(c))
        return seen

    def to_dict(self):
        geo = asdict(self.geometry)
        geo.pop("n_turns")
        geo.pop("n_pancakes_half")
        norm = asdict(self.normalization)
        norm.pop("inner_radius")
        norm.pop("J_c")
        return {
            "output_dir": self.output_dir,
            "geometry": geo,
            "power_law": asdict(self.power_law),
            "sampling": asdict(self.sampling),
            "normalization": norm,
            "plan": {k: [list(c) for c in v] for k, v in self.plan.items()},
            "network": _arch_dict(self.network),
            "sweep": {"archs": [_arch_dict(a) for a in self.sweep_archs], "seeds": list(self.sweep_seeds)},
            "training": {k: v for k, v in asdict(self.training).items() if k in _TRAIN_KEYS},
            "eval": {"threshold": self.eval.threshold,
                     "loss_configs": [list(c) for c in self.eval.loss_configs],
                     "error_map_configs": [list(c) for c in self.eval.error_map_configs]},
            "bench": {"configs": [list(c) for c in self.bench.configs],
                      "repetitions": self.bench.repetitions, "precision": self.bench.precision},
        }

    def dump(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


_TRAIN_KEYS = ("batch_size_train", "batch_size_val", "max_epochs", "base_lr", "lr_factor",
               "lr_period", "seed", "shuffle")
_TOP_KEYS = {"output_dir", "geometry", "power_law", "sampling", "normalization", "plan",
             "network", "sweep", "training", "eval", "bench"}


def _arch_dict(a: NetworkArch):
    return {"kind": a.kind, "hidden_width": a.hidden_width, "depth": a.depth}


def _section(d, name, allowed):
    sec = d.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a mapping")
    extra = set(sec) - set(allowed)
    if extra:
        raise ConfigError(f"[{name}] unknown keys: {sorted(extra)}")
    return sec


def _pairs(value, where):
    try:
        out = [(int(a), int(b)) for a, b in value]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: expected a list of [N, Np] pairs") from exc
    if any(a < 1 or b < 1 for a, b in out):
        raise ConfigError(f"{where}: N and Np must be >= 1")
    return out


def _arch(d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping with kind/hidden_width/depth")
    try:
        return NetworkArch(kind=d.get("kind", "residual"), hidden_width=int(d["hidden_width"]),
                           depth=int(d["depth"]))
    except (KeyError, TypeError, ValueError, NetworkError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def from_dict(d: dict, source="") -> PipelineConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping")
    extra = set(d) - _TOP_KEYS
    if extra:
        raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
    try:
        geo_kw = _section(d, "geometry", [f.name for f in fields(SolenoidConfig)
                                          if f.name not in ("n_turns", "n_pancakes_half")])
        geometry = SolenoidConfig(**{k: float(v) for k, v in geo_kw.items()})
        pl = _section(d, "power_law", ["E_c", "J_c", "n_index"])
        power_law = PowerLawParams(**{k: float(v) for k, v in pl.items()})
        sm = _section(d, "sampling", ["resolution", "snapshots", "max_dt"])
        max_dt = sm.get("max_dt")
        sampling = Sampling(resolution=float(sm.get("resolution", 1e-4)),
                            snapshots=int(sm.get("snapshots", 11)),
                            max_dt=None if max_dt is None else float(max_dt))
        if sampling.snapshots < 2:
            raise ConfigError("[sampling] snapshots must be >= 2")
        if sampling.max_dt is not None and not sampling.max_dt > 0:
            raise ConfigError("[sampling] max_dt must be positive")
        points_for_resolution(geometry.tape_width, sampling.resolution)
        nm = _section(d, "normalization", [f.name for f in fields(ds.Normalization)
                                           if f.name not in ("inner_radius", "J_c")])
        norm = ds.Normalization(inner_radius=geometry.inner_radius, J_c=power_law.J_c,
                                **{k: float(v) for k, v in nm.items()})
        if any(getattr(norm, k) == 0 for k in ("r_scale", "z_scale", "t_scale", "n_turns_scale",
                                                 "n_pancakes_scale", "pancake_scale")):
            raise ConfigError("[normalization] scales must be non-zero")
    except (GeometryError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc

    raw_plan = _section(d, "plan", ds.SPLITS)
    plan = {k: _pairs(v, f"[plan] {k}") for k, v in raw_plan.items()}
    try:
        ds.validate_plan(plan)
    except ds.DatasetError as exc:
        raise ConfigError(f"[plan] {exc}") from exc

    network = _arch(d.get("network") or {"hidden_width": 256, "depth": 12}, "[network]")
    sw = _section(d, "sweep", ["archs", "seeds"])
    sweep_archs = [_arch(a, f"[sweep] archs[{i}]") for i, a in enumerate(sw.get("archs") or [])]
    sweep_seeds = [int(s) for s in (sw.get("seeds") or [0])]

    tr = _section(d, "training", _TRAIN_KEYS)
    try:
        training = TrainHyper(**{k: (bool(v) if k == "shuffle" else float(v) if k in ("base_lr", "lr_factor")
                                     else int(v)) for k, v in tr.items()})
    except ValueError as exc:
        raise ConfigError(f"[training] {exc}") from exc

    ev = _section(d, "eval", ["threshold", "loss_configs", "error_map_configs"])
    eval_plan = EvalPlan(threshold=float(ev.get("threshold", 0.4)),
                         loss_configs=_pairs(ev.get("loss_configs") or [], "[eval] loss_configs"),
                         error_map_configs=_pairs(ev.get("error_map_configs") or [],
                                                  "[eval] error_map_configs"))
    bn = _section(d, "bench", ["configs", "repetitions", "precision"])
    bench = BenchPlan(configs=_pairs(bn.get("configs") or [], "[bench] configs"),
                      repetitions=int(bn.get("repetitions", 3)),
                      precision=str(bn.get("precision", "float64")))
    if bench.repetitions < 3:
        raise ConfigError("[bench] repetitions must be >= 3")
    if bench.precision not in ("float32", "float64"):
        raise ConfigError("[bench] precision must be float32 or float64")

    out = d.get("output_dir", "runs")
    if not isinstance(out, str) or not out:
        raise ConfigError("output_dir must be a non-empty string")
    if source and not os.path.isabs(out):
        base = os.path.dirname(os.path.abspath(source))
        # relative output dirs of shipped presets resolve against the cwd
        out = out if base == os.path.abspath(_PRESET_DIR) else os.path.join(base, out)
    return PipelineConfig(geometry, power_law, sampling, norm, plan, network, sweep_archs,
                          sweep_seeds, training, eval_plan, bench, out, source)


def preset_path(name):
    return os.path.join(_PRESET_DIR, f"{name}.yaml")


def load(path_or_preset) -> PipelineConfig:
    """Load a YAML file, or one of the shipped presets by name."""
    path = path_or_preset
    if path in PRESETS and not os.path.exists(path):
        path = preset_path(path)
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path_or_preset}")
    try:
        with open(path) as fh:
            d = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(d or {}, source=path)
