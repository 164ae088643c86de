"""Normalized training rows, split plans and the binary dataset format.

A row is seven float32 values: (r, z, t, N, Np, p) normalized, then the
normalized current density. Dataset files are

    b"SFDS" | version u8 | manifest length u32 LE | manifest JSON | rows (f32 LE)

and the manifest carries a 64-bit FNV-1a checksum of the row payload.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import SolenoidConfig

log = logging.getLogger(__name__)

MAGIC = b"SFDS"
VERSION = 1
ROW_WIDTH = 7

SPLITS = ("train", "interp_val", "extrap_N", "extrap_Np", "extrap_both")
EXTRAP_SPLITS = SPLITS[2:]


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Normalization:
    inner_radius: float = 10e-3
    r_scale: float = 100.0
    z_offset: float = 5e-4
    z_scale: float = 250.0
    t_scale: float = 1.0
    n_turns_scale: float = 100.0
    n_pancakes_scale: float = 10.0
    pancake_scale: float = 10.0
    J_c: float = 5e10

    @classmethod
    def for_config(cls, config: SolenoidConfig, J_c: float = 5e10, **kw):
        return cls(inner_radius=config.inner_radius, J_c=J_c, **kw)


def normalize_inputs(r, z, t, N, Np, p, norm: Normalization = Normalization()):
    """Map physical (r, z, t, N, Np, p) to the six network inputs (last axis)."""
    cols = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (r, z, t, N, Np, p)))
    return np.stack([
        (cols[0] - norm.inner_radius) * norm.r_scale,
        (cols[1] - norm.z_offset) * norm.z_scale,
        cols[2] / norm.t_scale,
        cols[3] / norm.n_turns_scale,
        cols[4] / norm.n_pancakes_scale,
        cols[5] / norm.pancake_scale,
    ], axis=-1)


def denormalize_inputs(x, norm: Normalization = Normalization()):
    x = np.asarray(x, dtype=float)
    return (x[..., 0] / norm.r_scale + norm.inner_radius,
            x[..., 1] / norm.z_scale + norm.z_offset,
            x[..., 2] * norm.t_scale,
            x[..., 3] * norm.n_turns_scale,
            x[..., 4] * norm.n_pancakes_scale,
            x[..., 5] * norm.pancake_scale)


def normalize_output(J, J_c):
    return (np.asarray(J, dtype=float) / J_c + 1.0) / 4.0


def denormalize_output(y, J_c):
    return (4.0 * np.asarray(y, dtype=float) - 1.0) * J_c


def history_inputs(mesh, times, config: SolenoidConfig, norm: Normalization):
    """Normalized inputs for every (snapshot, element), snapshot-major, float64."""
    T, n = len(times), len(mesh)
    return normalize_inputs(
        np.tile(mesh.r, T), np.tile(mesh.z, T), np.repeat(times, n),
        config.n_turns, config.n_pancakes_half, np.tile(mesh.pancake, T), norm)


def sample_history(history, config: SolenoidConfig = None, norm: Normalization = None):
    """One float32 row per (snapshot, element) of a solver history."""
    config = history.config if config is None else config
    norm = Normalization.for_config(config) if norm is None else norm
    X = history_inputs(history.mesh, history.times, config, norm)
    y = normalize_output(history.J.ravel(), norm.J_c)
    return np.column_stack([X, y]).astype(np.float32)


# --------------------------------------------------------------------------
# split plans

DEFAULT_PLAN = {
    "train": [(n, p) for n in (10, 30, 50, 70, 100) for p in (1, 3, 5, 7, 10)],
    "interp_val": [(n, p) for n in (20, 60, 90) for p in (2, 6, 9)],
    "extrap_N": [(n, 10) for n in (125, 150, 200, 250)],
    "extrap_Np": [(100, p) for p in (12, 15, 20, 25)],
    "extrap_both": [(125, 12), (150, 15), (175, 18), (200, 20),
                    (225, 22), (250, 25), (110, 11), (140, 14)],
}

# laptop-scale replica: same layout, extrapolation up to 50% and 100%
DESK_PLAN = {
    "train": [(n, p) for n in (4, 8, 12) for p in (1, 2)],
    "interp_val": [(6, 1), (10, 1), (6, 2), (10, 2)],
    "extrap_N": [(15, 2), (18, 2)],
    "extrap_Np": [(12, 3)],
    "extrap_both": [(18, 3), (24, 4)],
}


@dataclass
class DatasetManifest:
    split: str
    configs: list
    snapshot_times: list = field(default_factory=list)
    points_per_tape: int = 0
    normalization: dict = field(default_factory=dict)
    base_config: dict = field(default_factory=dict)
    row_counts: list = field(default_factory=list)
    checksum: str = ""
    version: int = VERSION

    @property
    def n_rows(self) -> int:
        return int(sum(self.row_counts))

    def expected_rows(self) -> int:
        return sum(N * Np * self.points_per_tape * len(self.snapshot_times) for N, Np in self.configs)

    def to_dict(self):
        d = asdict(self)
        d["configs"] = [list(c) for c in self.configs]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["configs"] = [tuple(c) for c in d["configs"]]
        return cls(**d)


def _hull(configs):
    Ns = [c[0] for c in configs]
    Ps = [c[1] for c in configs]
    return min(Ns), max(Ns), min(Ps), max(Ps)


def validate_plan(plan: dict):
    for name, configs in plan.items():
        if name not in SPLITS:
            raise DatasetError(f"unknown split {name!r}")
        if len(set(map(tuple, configs))) != len(configs):
            raise DatasetError(f"duplicate configurations in split {name!r}")
        for N, Np in configs:
            if int(N) != N or int(Np) != Np or N < 1 or Np < 1:
                raise DatasetError(f"invalid configuration ({N}, {Np}) in {name!r}")
    train = set(map(tuple, plan.get("train", [])))
    if not train:
        raise DatasetError("plan has no training configurations")
    n_lo, n_hi, p_lo, p_hi = _hull(train)
    for name, configs in plan.items():
        if name == "train":
            continue
        overlap = train & set(map(tuple, configs))
        if overlap:
            raise DatasetError(f"split {name!r} overlaps the training set: {sorted(overlap)}")
        for N, Np in configs:
            in_n = n_lo <= N <= n_hi
            in_p = p_lo <= Np <= p_hi
            ok = {
                "interp_val": in_n and in_p,
                "extrap_N": N > n_hi and in_p,
                "extrap_Np": Np > p_hi and in_n,
                "extrap_both": N > n_hi and Np > p_hi,
            }[name]
            if not ok:
                raise DatasetError(f"configuration ({N}, {Np}) does not belong in split {name!r}")


def build_splits(plan: dict = None):
    plan = DEFAULT_PLAN if plan is None else plan
    validate_plan(plan)
    return [DatasetManifest(split=name, configs=[tuple(c) for c in plan[name]])
            for name in SPLITS if name in plan]


# --------------------------------------------------------------------------
# file format

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK
    return h


def write_dataset(records, manifest: DatasetManifest, path):
    rows = np.ascontiguousarray(records, dtype="<f4").reshape(-1, ROW_WIDTH)
    if manifest.row_counts and manifest.n_rows != rows.shape[0]:
        raise DatasetError(f"manifest declares {manifest.n_rows} rows, got {rows.shape[0]}")
    if not manifest.row_counts:
        manifest.row_counts = [int(rows.shape[0])]
    payload = rows.tobytes()
    manifest.checksum = f"{fnv1a64(payload):016x}"
    blob = json.dumps(manifest.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BI", VERSION, len(blob)))
        fh.write(blob)
        fh.write(payload)


def read_manifest(path) -> DatasetManifest:
    with open(path, "rb") as fh:
        return _read_head(fh, path)


def _read_head(fh, path):
    if fh.read(4) != MAGIC:
        raise DatasetError(f"{path}: not a dataset file")
    head = fh.read(5)
    if len(head) != 5:
        raise DatasetError(f"{path}: truncated header")
    version, n = struct.unpack("<BI", head)
    if version != VERSION:
        raise DatasetError(f"{path}: unsupported dataset version {version}")
    blob = fh.read(n)
    if len(blob) != n:
        raise DatasetError(f"{path}: truncated manifest")
    try:
        return DatasetManifest.from_dict(json.loads(blob.decode("utf-8")))
    except (ValueError, TypeError, KeyError) as exc:
        raise DatasetError(f"{path}: corrupt manifest ({exc})") from exc


def read_dataset(path):
    with open(path, "rb") as fh:
        manifest = _read_head(fh, path)
        payload = fh.read()
    expected = manifest.n_rows * ROW_WIDTH * 4
    if len(payload) != expected:
        raise DatasetError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    if f"{fnv1a64(payload):016x}" != manifest.checksum:
        raise DatasetError(f"{path}: checksum mismatch")
    rows = np.frombuffer(payload, dtype="<f4").reshape(-1, ROW_WIDTH).astype(np.float32)
    return rows, manifest


def split_xy(rows):
    rows = np.asarray(rows, dtype=np.float64)
    return rows[:, :6], rows[:, 6:7]
