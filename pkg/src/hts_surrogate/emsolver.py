"""Reduced-order axisymmetric thin-strip solver for REBCO coils.

Every element of the mesh is a coaxial current loop. Loops interact through
a dense inductance matrix (mirror images included for the quarter model) and
dissipate through the E-J power law. Within one tape the loops are parallel
paths; the tape as a whole carries the prescribed transport current, which is
enforced with one voltage multiplier per tape.

Time integration is backward Euler; each step is a damped Newton solve of

    L (I - I_old) / dt + 2 pi r E(I / a) - V_tape = 0
    sum_{i in tape} I_i = I_transport(t)
"""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .geometry import ElementMesh, SolenoidConfig

log = logging.getLogger(__name__)

MU0 = 4e-7 * np.pi
# geometric mean distance of a line segment of unit length from itself
GMD_SEGMENT = np.exp(-1.5)


class SolverError(RuntimeError):
    pass


class StepFailure(SolverError):
    """Newton did not converge; the caller should retry with a smaller dt."""


@dataclass(frozen=True)
class PowerLawParams:
    E_c: float = 1e-4
    J_c: float = 5e10
    n_index: float = 21.0

    def __post_init__(self):
        if not (self.E_c > 0 and self.J_c > 0 and self.n_index > 1):
            raise ValueError(f"invalid power-law parameters {self!r}")


# --------------------------------------------------------------------------
# elliptic integrals and loop inductances

def _agm_terms(m, mc):
    """Return K(m), E(m) and S = sum_{n>=1} 2^n c_n^2 via the AGM.

    ``mc`` is 1 - m, passed separately so it keeps full precision near m = 1.
    S equals (2 - m) K - 2 E without the cancellation of the direct form.
    """
    m = np.asarray(m, dtype=float)
    mc = np.asarray(mc, dtype=float)
    b0 = np.sqrt(mc)
    a = 0.5 * (1.0 + b0)
    b = np.sqrt(b0)
    c = 0.5 * m / (1.0 + b0)    # c_1 = (1 - b0) / 2 without cancellation
    s = 2.0 * c * c
    w = 2.0
    for _ in range(60):
        if not np.any(c > 1e-17 * a):
            break
        a_next = 0.5 * (a + b)
        c = 0.25 * c * c / a_next
        b = np.sqrt(a * b)
        a = a_next
        w *= 2.0
        s = s + w * c * c
    K = np.pi / (2.0 * a)
    E = K * (1.0 - 0.5 * m - 0.5 * s)
    return K, E, s


def ellipke(m):
    """Complete elliptic integrals K(m), E(m) with parameter m = k^2."""
    m = np.asarray(m, dtype=float)
    if np.any((m < 0) | (m >= 1)):
        raise ValueError("elliptic parameter must lie in [0, 1)")
    K, E, _ = _agm_terms(m, 1.0 - m)
    return K, E


def mutual_inductance(ra, za, rb, zb):
    """Mutual inductance of coaxial filament loops (r_a, z_a) and (r_b, z_b).

    Vectorized over broadcastable inputs.
    """
    ra, za, rb, zb = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (ra, za, rb, zb)))
    if np.any(ra <= 0) or np.any(rb <= 0):
        raise ValueError("loop radii must be positive")
    dz2 = (za - zb) ** 2
    den = (ra + rb) ** 2 + dz2
    num_c = (ra - rb) ** 2 + dz2
    if np.any(num_c == 0):
        raise ValueError("coincident loops: use self_inductance")
    m = 4.0 * ra * rb / den
    mc = num_c / den
    K, _, s = _agm_terms(m, mc)
    k = np.sqrt(m)
    out = MU0 * np.sqrt(ra * rb) * K * s / k
    return out if out.ndim else float(out)


def self_inductance(r, element_width):
    """Self inductance of a thin axial ribbon loop of given width.

    Approximated by the mutual inductance of two loops separated by the
    geometric mean distance of the ribbon cross-section.
    """
    r = np.asarray(r, dtype=float)
    element_width = np.asarray(element_width, dtype=float)
    if np.any(element_width <= 0):
        raise ValueError("element width must be positive")
    gmd = GMD_SEGMENT * element_width
    return mutual_inductance(r, 0.0, r, gmd)


def _gmd_primitive(u, d):
    """Second antiderivative in u of ln(sqrt(u^2 + d^2))."""
    u2 = u * u
    r2 = u2 + d * d
    with np.errstate(divide="ignore", invalid="ignore"):
        lg = np.where(r2 > 0, np.log(np.where(r2 > 0, r2, 1.0)), 0.0)
    return 0.25 * (u2 - d * d) * lg - 0.75 * u2 + u * d * np.arctan2(u, d)


def strip_log_gmd(d, s, a, b):
    """ln of the geometric mean distance between two parallel axial strips.

    Widths ``a`` and ``b``, radial separation ``d``, centre offset ``s``.
    For a == b, d == s == 0 this is ln(w) - 3/2.
    """
    d, s, a, b = (np.asarray(x, dtype=float) for x in (d, s, a, b))
    d = np.abs(d)
    F = _gmd_primitive
    total = (F(s + 0.5 * (a + b), d) + F(s - 0.5 * (a + b), d)
             - F(s + 0.5 * (b - a), d) - F(s - 0.5 * (b - a), d))
    return total / (a * b)


# beyond this many element widths the filament kernel is used as is
NEAR_FIELD_WIDTHS = 50.0


def _width_correction(ri, zi, wi, rj, zj, wj):
    """mu0 r (ln rho - ln g): filament-to-strip correction for nearby element pairs."""
    dr = rj - ri
    dz = zj - zi
    rho2 = dr * dr + dz * dz
    wmax = np.maximum(wi, wj)
    near = rho2 < (NEAR_FIELD_WIDTHS * wmax) ** 2
    out = np.zeros(np.broadcast(ri, rj).shape)
    if np.any(near):
        idx = np.nonzero(near)
        b = lambda x: np.broadcast_to(x, out.shape)[idx]
        lg = strip_log_gmd(b(dr), b(dz), b(wi), b(wj))
        out[idx] = MU0 * np.sqrt(b(ri) * b(rj)) * (0.5 * np.log(b(rho2)) - lg)
    return out


def assemble_inductance_matrix(mesh: ElementMesh, chunk: int = 512) -> np.ndarray:
    """Dense inductance matrix of the mesh, including images for the quarter model.

    Off-diagonal entries are filament mutuals corrected to strip-averaged
    values for nearby pairs, so coarse meshes stay positive definite.
    """
    r, z, w = mesh.r, mesh.z, mesh.width
    n = len(mesh)
    L = np.empty((n, n))
    for start in range(0, n, chunk):
        rows = slice(start, min(start + chunk, n))
        ri, zi, wi = r[rows, None], z[rows, None], w[rows, None]
        same = (ri == r[None, :]) & (zi == z[None, :])
        # placeholder separation on the diagonal, overwritten below
        zj = np.where(same, z[None, :] + 1.0, z[None, :])
        block = mutual_inductance(ri, zi, r[None, :], zj)
        block += _width_correction(ri, zi, wi, r[None, :], zj, w[None, :])
        if mesh.mirror:
            block += mutual_inductance(ri, zi, r[None, :], -z[None, :])
            block += _width_correction(ri, zi, wi, r[None, :], -z[None, :], w[None, :])
        L[rows] = block
    diag = self_inductance(r, w)
    if mesh.mirror:
        diag = diag + mutual_inductance(r, z, r, -z) + _width_correction(r, z, w, r, -z, w)
    L[np.diag_indices(n)] = diag
    # enforce exact symmetry against rounding in the kernel
    return 0.5 * (L + L.T)


# --------------------------------------------------------------------------
# constitutive law

def power_law_efield(J, params: PowerLawParams):
    """E = Ec sign(J) |J/Jc|^n, odd in J so that E J >= 0."""
    x = np.asarray(J, dtype=float) / params.J_c
    return params.E_c * np.sign(x) * np.abs(x) ** params.n_index


def power_law_slope(J, params: PowerLawParams):
    x = np.abs(np.asarray(J, dtype=float) / params.J_c)
    return params.n_index * params.E_c / params.J_c * x ** (params.n_index - 1)


# --------------------------------------------------------------------------
# time stepping

@dataclass
class SolverState:
    I: np.ndarray
    t: float
    V: np.ndarray


@dataclass
class NewtonSettings:
    rtol: float = 1e-8
    atol: float = 1e-12
    max_iter: int = 50
    max_backtracks: int = 30


@dataclass
class StepResult:
    state: SolverState
    iterations: int
    residual: float
    constraint_error: float


class RampProblem:
    """Precomputed per-mesh quantities shared by every time step."""

    def __init__(self, mesh: ElementMesh, params: PowerLawParams, L=None):
        self.mesh = mesh
        self.params = params
        self.L = assemble_inductance_matrix(mesh) if L is None else L
        self.area = mesh.area
        self.circ = 2.0 * np.pi * mesh.r
        self.P = mesh.points_per_tape
        self.n_tapes = mesh.n_tapes
        self.n = len(mesh)
        # C^T as a dense indicator matrix, tape-contiguous element ordering
        self.CT = np.zeros((self.n, self.n_tapes))
        self.CT[np.arange(self.n), mesh.tape_index] = 1.0
        self.width_share = (mesh.width / mesh.geometry.config.tape_width)

    def tape_sums(self, x):
        return x.reshape(self.n_tapes, self.P).sum(axis=1)

    def residual(self, I, I_old, V, dt):
        J = I / self.area
        with np.errstate(over="ignore", invalid="ignore"):
            E = power_law_efield(J, self.params)
        return self.L @ (I - I_old) / dt + self.circ * E - V[self.mesh.tape_index]

    def zero_state(self) -> SolverState:
        return SolverState(I=np.zeros(self.n), t=0.0, V=np.zeros(self.n_tapes))


def _constraint_error(prob: RampProblem, I, I_target):
    err = np.abs(prob.tape_sums(I) - I_target)
    return float(err.max() / max(abs(I_target), 1e-300)) if I_target != 0 else float(err.max())


def step(state: SolverState, dt: float, I_target: float, prob: RampProblem,
         guess=None, settings: NewtonSettings = NewtonSettings()) -> StepResult:
    """One backward-Euler step to transport current ``I_target``.

    Raises StepFailure when damped Newton does not converge.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    I_old = state.I
    dI_target = I_target - prob.tape_sums(I_old)

    if guess is None:
        I = I_old + prob.width_share * dI_target[prob.mesh.tape_index]
    else:
        I = np.array(guess, dtype=float)
        I += prob.width_share * (I_target - prob.tape_sums(I))[prob.mesh.tape_index]
    V = state.V.copy()

    ramp_share = prob.width_share * dI_target[prob.mesh.tape_index]
    excitation = float(np.linalg.norm(prob.L @ ramp_share) / dt)
    tol = settings.rtol * excitation + settings.atol

    F = prob.residual(I, I_old, V, dt)
    fnorm = float(np.linalg.norm(F))
    it = 0
    while fnorm > tol:
        if it >= settings.max_iter or not np.isfinite(fnorm):
            raise StepFailure(f"Newton failed at t={state.t + dt:.6g} (|F|={fnorm:.3e}, tol={tol:.3e})")
        it += 1
        J = I / prob.area
        D = prob.circ * power_law_slope(J, prob.params) / prob.area
        A = prob.L / dt
        A[np.diag_indices(prob.n)] += D
        try:
            cf = cho_factor(A, lower=True, check_finite=False)
        except LinAlgError as exc:
            raise StepFailure(f"singular Jacobian at t={state.t + dt:.6g}") from exc
        G = prob.tape_sums(I) - I_target
        AinvF = cho_solve(cf, F, check_finite=False)
        Y = cho_solve(cf, prob.CT, check_finite=False)
        S = prob.CT.T @ Y
        dV = np.linalg.solve(S, -G + prob.tape_sums(AinvF))
        dI = Y @ dV - AinvF

        alpha = 1.0
        for _ in range(settings.max_backtracks):
            I_try = I + alpha * dI
            V_try = V + alpha * dV
            F_try = prob.residual(I_try, I_old, V_try, dt)
            f_try = float(np.linalg.norm(F_try))
            if np.isfinite(f_try) and f_try <= (1.0 - 1e-4 * alpha) * fnorm:
                break
            alpha *= 0.5
        else:
            raise StepFailure(f"line search stalled at t={state.t + dt:.6g} (|F|={fnorm:.3e})")
        I, V, F, fnorm = I_try, V_try, F_try, f_try

    cerr = _constraint_error(prob, I, I_target)
    return StepResult(SolverState(I=I, t=state.t + dt, V=V), it, fnorm, cerr)


# --------------------------------------------------------------------------
# ramp driver and outputs

@dataclass
class SolveStats:
    accepted_steps: int = 0
    rejected_steps: int = 0
    newton_iterations: int = 0
    max_constraint_error: float = 0.0
    constraint_errors: list = field(default_factory=list)


@dataclass(eq=False)
class CurrentDensityHistory:
    times: np.ndarray          # (T,)
    J: np.ndarray              # (T, n_elements), A/m^2 referred to the sc layer
    mesh: ElementMesh
    transport_current: np.ndarray
    stats: SolveStats = field(default_factory=SolveStats)
    meta: dict = field(default_factory=dict)

    @property
    def config(self) -> SolenoidConfig:
        return self.mesh.geometry.config

    def element_currents(self):
        return self.J * self.mesh.area[None, :]

    def write_csv(self, directory):
        """One CSV per snapshot: turn, pancake, r, z, Jphi (SI)."""
        os.makedirs(directory, exist_ok=True)
        paths = []
        m = self.mesh
        for k, t in enumerate(self.times):
            path = os.path.join(directory, f"snapshot_{k:03d}_t{t:.6f}.csv")
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["turn", "pancake", "r", "z", "Jphi"])
                for i in range(len(m)):
                    w.writerow([int(m.turn[i]), int(m.pancake[i]), repr(float(m.r[i])),
                                repr(float(m.z[i])), repr(float(self.J[k, i]))])
            paths.append(path)
        return paths


def default_snapshot_times(config: SolenoidConfig, count: int = 11) -> np.ndarray:
    return np.linspace(0.0, config.ramp_duration, count)


def solve_ramp(mesh: ElementMesh, config: SolenoidConfig, params: PowerLawParams,
               snapshot_times=None, L=None, max_dt=None, settings: NewtonSettings = NewtonSettings(),
               min_dt=1e-9, problem: RampProblem = None) -> CurrentDensityHistory:
    """Integrate a linear current ramp I(t) = ramp_rate * t and record snapshots.

    dt is halved on Newton failure and grown by 1.5x after two consecutive
    successes, never exceeding the snapshot spacing (or ``max_dt``).
    """
    times = default_snapshot_times(config) if snapshot_times is None else np.asarray(snapshot_times, float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("snapshot_times must be a non-empty 1-D sequence")
    if np.any(np.diff(times) <= 0):
        raise ValueError("snapshot_times must be strictly increasing")
    T_end = config.ramp_duration
    if times[0] < 0 or times[-1] > T_end * (1 + 1e-12):
        raise ValueError(f"snapshot_times must lie within [0, {T_end}]")

    prob = problem if problem is not None else RampProblem(mesh, params, L)
    state = prob.zero_state()
    stats = SolveStats()
    out = np.zeros((times.size, prob.n))
    gaps = np.diff(np.concatenate([[0.0], times]))
    spacing = float(np.min(gaps[gaps > 0], initial=T_end))
    cap = spacing if max_dt is None else min(spacing, max_dt)
    dt = cap / 10.0
    streak = 0
    prev_rate = None    # dI/dt of the last accepted step, for the predictor

    for k, t_snap in enumerate(times):
        while state.t < t_snap * (1 - 1e-14) - 1e-15:
            h = min(dt, cap, t_snap - state.t)
            if t_snap - (state.t + h) < 1e-6 * h:
                h = t_snap - state.t
            t_new = t_snap if h == t_snap - state.t else state.t + h
            h = t_new - state.t
            guess = None if prev_rate is None else state.I + prev_rate * h
            try:
                res = step(state, h, float(config.transport_current(t_new)), prob,
                           guess=guess, settings=settings)
            except StepFailure as exc:
                stats.rejected_steps += 1
                streak = 0
                dt = h / 2.0
                log.debug("step rejected: %s; dt -> %.3g", exc, dt)
                if dt < min_dt:
                    raise SolverError(f"time step underflow at t={state.t:.6g}: {exc}") from exc
                continue
            prev_rate = (res.state.I - state.I) / h
            res.state.t = t_new
            state = res.state
            stats.accepted_steps += 1
            stats.newton_iterations += res.iterations
            stats.constraint_errors.append(res.constraint_error)
            stats.max_constraint_error = max(stats.max_constraint_error, res.constraint_error)
            streak += 1
            if streak >= 2:
                dt = min(1.5 * h, cap)
                streak = 0
            else:
                dt = max(dt, h)
        out[k] = state.I / prob.area

    return CurrentDensityHistory(times=times, J=out, mesh=mesh,
                                 transport_current=config.transport_current(times), stats=stats)


def element_volumes(mesh: ElementMesh) -> np.ndarray:
    return 2.0 * np.pi * mesh.r * mesh.area


def dissipation_power(J, mesh: ElementMesh, params: PowerLawParams) -> np.ndarray:
    """Instantaneous sum of E J dV per snapshot row of J (both mirror halves)."""
    J = np.atleast_2d(J)
    with np.errstate(over="ignore"):
        p = (power_law_efield(J, params) * J) @ element_volumes(mesh)
    return p * (2.0 if mesh.mirror else 1.0)


def magnetization_loss(history: CurrentDensityHistory, params: PowerLawParams,
                       config: SolenoidConfig = None) -> float:
    """Energy dissipated over the recorded interval (J), trapezoidal in time."""
    if history.times.size < 2:
        raise ValueError("magnetization loss needs at least two snapshots")
    p = dissipation_power(history.J, history.mesh, params)
    return float(np.trapezoid(p, history.times))
