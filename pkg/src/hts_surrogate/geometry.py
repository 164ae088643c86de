"""Solenoid geometry and its discretization into axisymmetric current loops.

Lengths are SI (metres). The quarter model keeps the pancakes above the
midplane z = 0; pancake 1 sits next to the midplane and the stack grows
upward. The mirror image below the midplane is accounted for by the solver.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class SolenoidConfig:
    inner_radius: float = 10e-3
    tape_width: float = 4e-3
    tape_thickness: float = 0.1e-3
    n_turns: int = 10
    n_pancakes_half: int = 1
    pancake_gap: float = 1e-3
    op_current: float = 50.0
    ramp_rate: float = 50.0
    sc_layer_thickness: float = 1e-6

    def __post_init__(self):
        for name in ("inner_radius", "tape_width", "tape_thickness",
                     "sc_layer_thickness", "op_current", "ramp_rate"):
            if not getattr(self, name) > 0:
                raise GeometryError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.pancake_gap < 0:
            raise GeometryError(f"pancake_gap must be non-negative, got {self.pancake_gap!r}")
        if int(self.n_turns) != self.n_turns or self.n_turns < 1:
            raise GeometryError(f"n_turns must be an integer >= 1, got {self.n_turns!r}")
        if int(self.n_pancakes_half) != self.n_pancakes_half or self.n_pancakes_half < 1:
            raise GeometryError(
                f"n_pancakes_half must be an integer >= 1, got {self.n_pancakes_half!r}")

    @property
    def ramp_duration(self) -> float:
        return self.op_current / self.ramp_rate

    def with_counts(self, n_turns: int, n_pancakes_half: int) -> "SolenoidConfig":
        d = asdict(self)
        d.update(n_turns=int(n_turns), n_pancakes_half=int(n_pancakes_half))
        return SolenoidConfig(**d)

    def transport_current(self, t):
        return self.ramp_rate * np.asarray(t, dtype=float)


@dataclass(frozen=True)
class Tape:
    turn: int       # 1-based, counted outward from the bore
    pancake: int    # 1-based in the quarter model; negative for mirrored copies
    radius: float   # centre radius of the turn
    z_low: float
    z_high: float


@dataclass(frozen=True)
class SolenoidGeometry:
    config: SolenoidConfig
    tapes: tuple
    # True for the quarter model: an image loop at -z is implied for every element.
    mirror: bool = True
    mirror_plane_z: float = 0.0
    axis_r: float = 0.0

    @property
    def n_tapes(self) -> int:
        return len(self.tapes)

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "mirror": self.mirror,
            "mirror_plane_z": self.mirror_plane_z,
            "axis_r": self.axis_r,
            "tapes": [asdict(t) for t in self.tapes],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "SolenoidGeometry":
        return cls(
            config=SolenoidConfig(**d["config"]),
            tapes=tuple(Tape(**t) for t in d["tapes"]),
            mirror=d["mirror"],
            mirror_plane_z=d["mirror_plane_z"],
            axis_r=d["axis_r"],
        )


def pancake_z_range(config: SolenoidConfig, p: int) -> tuple:
    lo = config.pancake_gap / 2 + (p - 1) * (config.tape_width + config.pancake_gap)
    return lo, lo + config.tape_width


def turn_radius(config: SolenoidConfig, k: int) -> float:
    return config.inner_radius + (k - 0.5) * config.tape_thickness


def build_solenoid(config: SolenoidConfig) -> SolenoidGeometry:
    """Place every tape of the quarter model, pancake-major then turn."""
    tapes = []
    for p in range(1, config.n_pancakes_half + 1):
        z_lo, z_hi = pancake_z_range(config, p)
        for k in range(1, config.n_turns + 1):
            tapes.append(Tape(k, p, turn_radius(config, k), z_lo, z_hi))
    return SolenoidGeometry(config=config, tapes=tuple(tapes), mirror=True)


def full_stack(geometry: SolenoidGeometry) -> SolenoidGeometry:
    """Unfold the quarter model into the explicit two-sided stack (no image terms).

    Mirrored tapes are appended after the originals, in the same order, with
    negated pancake index and reflected z.
    """
    if not geometry.mirror:
        raise GeometryError("geometry is already a full stack")
    z0 = geometry.mirror_plane_z
    mirrored = tuple(
        Tape(t.turn, -t.pancake, t.radius, 2 * z0 - t.z_high, 2 * z0 - t.z_low)
        for t in geometry.tapes
    )
    return SolenoidGeometry(config=geometry.config, tapes=geometry.tapes + mirrored,
                            mirror=False, mirror_plane_z=z0, axis_r=geometry.axis_r)


@dataclass(frozen=True, eq=False)
class ElementMesh:
    geometry: SolenoidGeometry
    points_per_tape: int
    tape_index: np.ndarray
    turn: np.ndarray
    pancake: np.ndarray
    r: np.ndarray
    z: np.ndarray
    width: np.ndarray
    mirror: bool = field(default=True)

    def __len__(self):
        return self.r.shape[0]

    @property
    def n_tapes(self) -> int:
        return self.geometry.n_tapes

    def tape_slice(self, i: int) -> slice:
        P = self.points_per_tape
        return slice(i * P, (i + 1) * P)

    @property
    def area(self) -> np.ndarray:
        """Superconducting cross-section of each element."""
        return self.width * self.geometry.config.sc_layer_thickness


def points_for_resolution(tape_width: float, resolution: float) -> int:
    if not resolution > 0:
        raise GeometryError(f"resolution must be positive, got {resolution!r}")
    ratio = tape_width / resolution
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
        raise GeometryError(
            f"resolution {resolution!r} does not divide tape width {tape_width!r}")
    return n + 1


def discretize(geometry: SolenoidGeometry, resolution: float) -> ElementMesh:
    """Split every tape into edge-inclusive collocation loops.

    Interior elements have width w/(P-1); the two end elements are half as
    wide so widths partition the tape exactly.
    """
    w = geometry.config.tape_width
    P = points_for_resolution(w, resolution)
    step = w / (P - 1)
    widths = np.full(P, step)
    widths[0] = widths[-1] = step / 2
    offsets = np.arange(P) * step
    offsets[-1] = w

    n = geometry.n_tapes
    tape_index = np.repeat(np.arange(n), P)
    turn = np.repeat([t.turn for t in geometry.tapes], P)
    pancake = np.repeat([t.pancake for t in geometry.tapes], P)
    r = np.repeat([t.radius for t in geometry.tapes], P).astype(float)
    z = (np.array([t.z_low for t in geometry.tapes])[:, None] + offsets[None, :]).ravel()
    width = np.tile(widths, n)
    return ElementMesh(geometry=geometry, points_per_tape=P, tape_index=tape_index,
                       turn=turn, pancake=pancake, r=r, z=z, width=width,
                       mirror=geometry.mirror)
