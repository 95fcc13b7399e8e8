"""Perturbed evolution, Duhamel checks, channel wave operators and the free + weak split."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .fitting import ExponentFit, FitError, fit_exponent
from .grid import FieldState, Grid, h_norm, inner, l2_norm, s_norm
from .interactions import PotentialSpec, effective_potential, potential_energy, potential_field
from .phase_space import CutoffSpec, cutoff_operator, window_violations
from .propagators import FreeFlowCache, free_evolve

logger = logging.getLogger(__name__)

BLOWUP_FACTOR = 1e3


class BlowUpError(RuntimeError):
    """S-norm grew past the guard; ``trajectory`` holds everything stored so far."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class CheckpointError(ValueError):
    pass


def _same_time(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-9 * max(1.0, abs(a), abs(b))


@dataclass
class StateTrajectory:
    grid: Grid
    spec: PotentialSpec
    dt: float
    t_start: float = 0.0
    snapshots: dict = field(default_factory=dict)
    monitors: list = field(default_factory=list)
    stride_times: list = field(default_factory=list)

    @property
    def times(self) -> list[float]:
        return sorted(self.snapshots)

    def key(self, t: float) -> float:
        for k in self.snapshots:
            if _same_time(k, t):
                return k
        raise CheckpointError(f"t = {t} is not a stored checkpoint")

    def state(self, t: float) -> FieldState:
        return self.snapshots[self.key(t)]

    def has(self, t: float) -> bool:
        return any(_same_time(k, t) for k in self.snapshots)

    @property
    def initial(self) -> FieldState:
        return self.snapshots[self.times[0]]

    def monitor_series(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        t = np.array([m["time"] for m in self.monitors])
        return t, np.array([m[name] for m in self.monitors])


def _energy_from_spectral(grid: Grid, uh: np.ndarray, v: np.ndarray) -> tuple[float, float]:
    """(||<P>u||^2 + ||v||^2, ||<P>u||) from the raw DFT of u."""
    hu2 = grid.cell_volume * float(np.sum(grid.omega ** 2 * np.abs(uh) ** 2)) / grid.size
    v2 = l2_norm(grid, v) ** 2
    return hu2 + v2, math.sqrt(hu2)


def _kick(spec: PotentialSpec, grid: Grid, u: np.ndarray, t: float) -> Optional[np.ndarray]:
    if spec.is_empty:
        return None
    return effective_potential(spec, grid, u, t) * u


def strang_propagate(grid: Grid, spec: PotentialSpec, u: np.ndarray, v: np.ndarray,
                     t0: float, dt: float, nsteps: int,
                     on_step: Optional[Callable] = None):
    """Advance (u, v) by nsteps Strang steps of signed size dt from time t0.

    Each step is a half kick v -= dt/2 (V + N0(u)) u, the exact free step and a
    second half kick.  The kick is exact for frozen u, so the scheme reduces to
    the trapezoid rule on the Duhamel integral.  ``on_step(k, t, u, v, uh)``
    is called after every step with the raw DFT ``uh`` of the new u.
    """
    u = np.array(u, dtype=complex)
    v = np.array(v, dtype=complex)
    cache = FreeFlowCache.build(grid, dt)
    force = _kick(spec, grid, u, t0)
    for k in range(1, nsteps + 1):
        t_new = t0 + k * dt
        if force is not None:
            v -= 0.5 * dt * force
        uh, vh = cache.apply_spectral(grid.fft(u), grid.fft(v))
        u, v = grid.ifft(uh), grid.ifft(vh)
        force = _kick(spec, grid, u, t_new)
        if force is not None:
            v -= 0.5 * dt * force
        if on_step is not None:
            on_step(k, t_new, u, v, uh)
    return u, v


def _step_count(span: float, dt: float) -> int:
    n = int(round(span / dt))
    if abs(n * dt - span) > 1e-9 * max(1.0, abs(span)):
        raise ValueError(f"time span {span} is not a multiple of dt = {dt}")
    return n


def evolve(initial: FieldState, spec: PotentialSpec, t_end: float, dt: float,
           checkpoint_times: Sequence[float] = (), stride: Optional[int] = None,
           t_start: float = 0.0, data_radius: Optional[float] = None,
           blowup_factor: float = BLOWUP_FACTOR, check_window: bool = True) -> StateTrajectory:
    """Strang-split evolution of (u, u_dot) from t_start to t_end.

    Snapshots are stored at t_start, t_end, each requested checkpoint and every
    ``stride`` steps.  Scalars (S-norm, energy, ||(V + N0) u||) are monitored
    after every step.
    """
    g = initial.grid
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not t_end > t_start:
        raise ValueError("t_end must exceed t_start")
    if not (np.all(np.isfinite(initial.u.values)) and np.all(np.isfinite(initial.udot.values))):
        raise ValueError("initial state contains NaN or Inf")
    spec.validate_for_dim(g.dim)
    if check_window and data_radius is not None:
        span = max(abs(t_end), abs(t_start), t_end - t_start)
        if span + data_radius >= 0.5 * g.extent:
            raise ValueError(f"T + data_radius = {span + data_radius} leaves the no-wrap window "
                             f"(L/2 = {0.5 * g.extent})")
    nsteps = _step_count(t_end - t_start, dt)
    want = {}
    for t in checkpoint_times:
        if t < t_start or t > t_end + 1e-12:
            raise ValueError(f"checkpoint {t} outside [{t_start}, {t_end}]")
        want[_step_count(t - t_start, dt) if t > t_start else 0] = float(t)
    if stride:
        for k in range(stride, nsteps + 1, stride):
            want.setdefault(k, t_start + k * dt)
    want.setdefault(nsteps, float(t_end))
    traj = StateTrajectory(g, spec, dt, t_start)
    if stride:
        traj.stride_times = [t_start] + [want[k] for k in range(stride, nsteps + 1, stride)]
    traj.snapshots[float(t_start)] = FieldState.from_arrays(g, initial.u.values, initial.udot.values)

    u0, v0 = initial.u.values, initial.udot.values
    e0, hu0 = _energy_from_spectral(g, g.fft(u0), v0)
    s0 = hu0 + l2_norm(g, v0)
    pe0 = potential_energy(spec, g, u0, t_start)
    traj.monitors.append({"time": float(t_start), "s_norm": s0, "energy": e0 + pe0,
                          "interaction_L2": 0.0 if spec.is_empty else
                          l2_norm(g, effective_potential(spec, g, u0, t_start) * u0)})
    limit = blowup_factor * max(s0, 1e-300)

    def on_step(k, t, u, v, uh):
        e_free, hu = _energy_from_spectral(g, uh, v)
        s = hu + l2_norm(g, v)
        if not math.isfinite(s):
            raise BlowUpError(f"NaN/Inf in the state at t = {t}", traj)
        mon = {"time": float(t), "s_norm": s, "energy": e_free}
        if not spec.is_empty:
            mon["energy"] = e_free + potential_energy(spec, g, u, t)
            mon["interaction_L2"] = l2_norm(g, effective_potential(spec, g, u, t) * u)
        else:
            mon["interaction_L2"] = 0.0
        traj.monitors.append(mon)
        if k in want:
            traj.snapshots[want[k]] = FieldState.from_arrays(g, u, v)
        if s > limit:
            raise BlowUpError(f"S-norm {s:.3e} exceeds {blowup_factor:g} x initial at t = {t}", traj)

    strang_propagate(g, spec, u0, v0, t_start, dt, nsteps, on_step)
    return traj


def propagate(state: FieldState, spec: PotentialSpec, t_from: float, t_to: float,
              dt: float) -> FieldState:
    """Perturbed flow U(t_to, t_from) applied to a state; t_to may precede t_from."""
    if t_to == t_from:
        return state
    n = _step_count(abs(t_to - t_from), dt)
    step = math.copysign(dt, t_to - t_from)
    u, v = strang_propagate(state.grid, spec, state.u.values, state.udot.values, t_from, step, n)
    return FieldState.from_arrays(state.grid, u, v)


# ---------------------------------------------------------------- Duhamel forms

def _quadrature_nodes(traj: StateTrajectory, t: float, every: int) -> list[float]:
    if not traj.stride_times:
        raise CheckpointError("trajectory was evolved without a checkpoint stride")
    key = traj.key(t)
    nodes = [s for s in traj.stride_times if s <= key + 1e-12]
    if not _same_time(nodes[-1], key):
        raise CheckpointError(f"t = {t} is not on the stride grid")
    nodes = nodes[::every]
    if not _same_time(nodes[-1], key):
        raise CheckpointError(f"t = {t} is not on the stride grid thinned by {every}")
    if len(nodes) < 2:
        raise CheckpointError("need at least two quadrature nodes")
    return nodes


def _trapezoid_weights(nodes: Sequence[float]) -> np.ndarray:
    s = np.asarray(nodes)
    w = np.zeros(len(s))
    d = np.diff(s)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def _duhamel_sums(traj: StateTrajectory, nodes: Sequence[float], phase_time: Callable[[float], float]):
    """Sum_j c_j (sin(tau_j w)/w, cos(tau_j w)) applied to the DFT of the interaction at s_j."""
    g = traj.grid
    w = g.omega
    su = np.zeros(g.shape, dtype=complex)
    sv = np.zeros(g.shape, dtype=complex)
    for c, s in zip(_trapezoid_weights(nodes), nodes):
        st = traj.state(s)
        f = effective_potential(traj.spec, g, st.u.values, s) * st.u.values
        fh = g.fft(f)
        tau = phase_time(s)
        su += c * np.sin(tau * w) / w * fh
        sv += c * np.cos(tau * w) * fh
    return su, sv


def duhamel_residual(traj: StateTrajectory, t: float, every: int = 1) -> float:
    """S-norm of U0(t) u(0) - int_0^t U0(t - s) (0, N(s) u(s)) ds - u(t).

    The integral is the trapezoid rule over the stride checkpoints (every
    ``every``-th one).
    """
    g = traj.grid
    if traj.spec.is_empty:
        traj.key(t)
        ref = free_evolve(traj.initial, t - traj.t_start)
        return s_norm(ref - traj.state(t))
    nodes = _quadrature_nodes(traj, t, every)
    su, sv = _duhamel_sums(traj, nodes, lambda s: t - s)
    ref = free_evolve(traj.initial, t - traj.t_start)
    u = ref.u.values - g.ifft(su)
    v = ref.udot.values - g.ifft(sv)
    st = traj.state(t)
    return s_norm(FieldState.from_arrays(g, u - st.u.values, v - st.udot.values))


def omega_star(traj: StateTrajectory, t: float) -> FieldState:
    """U0(0, t) U(t, 0) u(0): the state pulled back along the free flow."""
    return free_evolve(traj.state(t), -t)


def omega_star_duhamel(traj: StateTrajectory, t: float, every: int = 1) -> FieldState:
    """u_Omega = u(0) + int sin(s w)/w V u ds,  u_dot_Omega = u_dot(0) - int cos(s w) V u ds."""
    g = traj.grid
    u0 = traj.state(0.0)
    if traj.spec.is_empty:
        return u0
    nodes = _quadrature_nodes(traj, t, every)
    su, sv = _duhamel_sums(traj, nodes, lambda s: s)
    return FieldState.from_arrays(g, u0.u.values + g.ifft(su), u0.udot.values - g.ifft(sv))


# ---------------------------------------------------------------- channel operators

@dataclass
class ConvergenceReport:
    times: list
    increments: list
    ratios: list
    verdict: str
    limit: Optional[FieldState]
    tol_abs: float
    rho: float
    variant: str
    norm: str
    exploratory: bool = False
    window_notes: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "times": self.times, "increments": self.increments, "ratios": self.ratios,
            "verdict": self.verdict, "tol_abs": self.tol_abs, "rho": self.rho,
            "variant": self.variant, "norm": self.norm, "exploratory": self.exploratory,
            "window_notes": self.window_notes, "extras": self.extras,
        }


# increments below this fraction of the data norm are treated as converged roundoff
ROUNDOFF_FLOOR = 1e-10


def certify(increments: Sequence[float], tol_abs: float, rho: float = 0.75,
            scale: float = 1.0, last: int = 3) -> tuple[str, list]:
    """Dyadic Cauchy certificate: converged / diverging / inconclusive."""
    d = list(increments)
    ratios = [d[k + 1] / d[k] if d[k] > 0 else (0.0 if d[k + 1] == 0 else math.inf)
              for k in range(len(d) - 1)]
    tail = d[-last:]
    rtail = ratios[-last:]
    floor = ROUNDOFF_FLOOR * max(scale, 1e-300)
    small = all(x < tol_abs for x in tail)
    contracting = all(r <= rho or d[k + 1] < floor
                      for k, r in zip(range(len(d) - 1 - len(rtail), len(d) - 1), rtail))
    if small and contracting:
        return "converged", ratios
    if len(rtail) >= 2 and all(r > 1 for r in rtail) and tail[-1] >= tol_abs:
        return "diverging", ratios
    return "inconclusive", ratios


def _check_dyadic(times: Sequence[float]) -> list[float]:
    times = [float(t) for t in times]
    if len(times) < 4:
        raise ValueError("need at least 4 dyadic times")
    if times[0] < 1:
        raise ValueError("dyadic times start at t >= 1")
    for a, b in zip(times, times[1:]):
        if not _same_time(b, 2 * a):
            raise ValueError(f"times are not dyadic: {a} -> {b}")
    return times


def channel_cutoffs(variant: str, alpha: float, beta: float = 0.0, b: float = 0.0,
                    width: float = 1.0) -> tuple[CutoffSpec, CutoffSpec]:
    space = CutoffSpec("space_low", alpha=alpha, width=width)
    if variant == "thm1":
        return space, CutoffSpec("freq_low", beta=beta, width=width)
    if variant == "thm2":
        return space, CutoffSpec("freq_high", b=b, width=width)
    raise ValueError(f"unknown channel variant {variant!r}")


def _apply_pair(g: Grid, space: CutoffSpec, freq: CutoffSpec, t: float, f: np.ndarray) -> np.ndarray:
    return cutoff_operator(g, space, t).apply(cutoff_operator(g, freq, t).apply(f))


def channel_wave_operator(traj: StateTrajectory, cutoffs: tuple, times: Sequence[float],
                          variant: str = "thm1", tol_abs: Optional[float] = None,
                          rho: float = 0.75, delta: float = 2.5,
                          sobolev_orders: Sequence[float] = (0.0, 0.5, 0.9)) -> ConvergenceReport:
    """Dyadic Cauchy test of F_c F_1 Omega*(t_k).

    ``thm1``: F_c(|x| <= t^alpha) bar F_1(|P| <= t^beta), increments in L2 + L2.
    ``thm2``: F_c(|x| <= t^alpha) F_1(t^b |P| > 1), increments in the S-norm.
    """
    g = traj.grid
    times = _check_dyadic(times)
    space, freq = cutoffs
    if variant == "thm1":
        notes = window_violations({"alpha": space.alpha, "beta": freq.beta}, "thm1", g.dim)
    else:
        notes = window_violations({"alpha": space.alpha, "b": freq.b}, "thm2", g.dim, delta)
    u0 = traj.state(0.0)
    scale = s_norm(u0)
    if tol_abs is None:
        tol_abs = 1e-3 * scale
    iterates = []
    for t in times:
        om = omega_star(traj, t)
        iterates.append(FieldState.from_arrays(
            g, _apply_pair(g, space, freq, t, om.u.values),
            _apply_pair(g, space, freq, t, om.udot.values)))
    incs, hs = [], {str(a): [] for a in sobolev_orders}
    for a, b in zip(iterates, iterates[1:]):
        d = b - a
        if variant == "thm1":
            incs.append(l2_norm(g, d.u.values) + l2_norm(g, d.udot.values))
        else:
            incs.append(s_norm(d))
        for s in sobolev_orders:
            hs[str(s)].append(h_norm(g, d.u.values, s))
    verdict, ratios = certify(incs, tol_abs, rho, scale)
    rep = ConvergenceReport(times, incs, ratios, verdict,
                            iterates[-1] if verdict == "converged" else None,
                            tol_abs, rho, variant, "L2+L2" if variant == "thm1" else "S",
                            bool(notes), notes)
    rep.extras["sobolev_increments"] = hs
    rep.extras["initial_S_norm"] = scale
    last = iterates[-1]
    rep.extras["last_iterate_S_norm"] = s_norm(last)
    rep.extras["last_iterate_distance_to_initial"] = s_norm(last - u0)
    rep.extras["last_iterate_L2_distance_to_initial"] = (l2_norm(g, last.u.values - u0.u.values)
                                                         + l2_norm(g, last.udot.values - u0.udot.values))
    rep.extras["last_iterate"] = last
    return rep


# ---------------------------------------------------------------- propagation observables

@dataclass
class PropagationObservableLog:
    times: list
    variant: str
    rows: list = field(default_factory=list)
    partial_sums: list = field(default_factory=list)
    tail_increments: list = field(default_factory=list)
    tail_flat: bool = False

    def series(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def min_a1_a4(self) -> float:
        keys = ("A1", "A4", "A11", "A14", "A1_dot", "A4_dot", "A11_dot", "A14_dot")
        return min(r[k] for r in self.rows for k in keys if k in r)

    def bound_ok(self) -> bool:
        return all(abs(r["B1"]) <= r["norm2"] * (1 + 1e-12) + 1e-300 and
                   abs(r["B1_dot"]) <= r["norm2_dot"] * (1 + 1e-12) + 1e-300 for r in self.rows)

    def to_dict(self) -> dict:
        return {"times": self.times, "variant": self.variant, "rows": self.rows,
                "partial_sums": self.partial_sums, "tail_increments": self.tail_increments,
                "tail_flat": self.tail_flat}


def _quadratic_terms(g: Grid, space: CutoffSpec, freq: CutoffSpec, t: float,
                     f: np.ndarray, df: np.ndarray, suffix: str = "") -> dict:
    """Flux split of d/dt <B(t) f, f> for B1 = F F_c F and B11 = F_c F F_c.

    F is the frequency cutoff, F_c the spatial one; both grow in t, so the
    pieces carrying their time derivatives in symmetric square form are >= 0.
    """
    mult = lambda a, x: a * x
    fc = space.profile(g, t)
    dfc = space.time_derivative(g, t)
    fm = freq.profile(g, t)
    dfm = freq.time_derivative(g, t)
    F = lambda x: g.multiply_spectral(x, fm)
    dF = lambda x: g.multiply_spectral(x, dfm)
    ip = lambda a, b: inner(g, a, b)

    B1 = lambda x: F(mult(fc, F(x)))
    B11 = lambda x: mult(fc, F(mult(fc, x)))
    out = {}
    out["B1" + suffix] = ip(f, B1(f)).real
    out["B11" + suffix] = ip(f, B11(f)).real
    out["norm2" + suffix] = l2_norm(g, f) ** 2

    out["A1" + suffix] = ip(F(f), mult(dfc, F(f))).real
    a2 = ip(df, B1(f))
    a3 = ip(f, B1(df))
    sq = np.sqrt(np.clip(fc, 0, None))
    prod = np.clip(fm * dfm, 0, None)
    a4 = 2.0 * ip(sq * f, g.multiply_spectral(sq * f, prod)).real
    pair = ip(f, dF(mult(fc, F(f)))) + ip(f, F(mult(fc, dF(f))))
    out["A2" + suffix] = a2.real
    out["A3" + suffix] = a3.real
    out["A4" + suffix] = a4
    out["R" + suffix] = (pair - a4).real

    gfac = np.sqrt(np.clip(fc * dfc, 0, None))
    a11 = 2.0 * ip(gfac * f, F(gfac * f)).real
    outer = ip(f, mult(dfc, F(mult(fc, f)))) + ip(f, mult(fc, F(mult(dfc, f))))
    out["A11" + suffix] = a11
    out["A12" + suffix] = ip(df, B11(f)).real
    out["A13" + suffix] = ip(f, B11(df)).real
    out["A14" + suffix] = ip(fc * f, dF(fc * f)).real
    out["R1" + suffix] = (outer - a11).real
    return out


def propagation_observables(traj: StateTrajectory, cutoffs: tuple, times: Sequence[float],
                            variant: str = "thm1", tol: Optional[float] = None) -> PropagationObservableLog:
    """Log <B1>, <B11> on u_Omega (and u_dot_Omega) with their flux terms.

    For ``thm2`` the observables act on <P> u_Omega.
    """
    g = traj.grid
    space, freq = cutoffs
    times = [float(t) for t in times]
    log = PropagationObservableLog(times, variant)
    w = g.omega
    for t in times:
        om = omega_star(traj, t)
        st = traj.state(t)
        vu_hat = g.fft(effective_potential(traj.spec, g, st.u.values, t) * st.u.values) \
            if not traj.spec.is_empty else np.zeros(g.shape, dtype=complex)
        if variant == "thm2":
            f = g.multiply_spectral(om.u.values, w)
            df = g.ifft(np.sin(t * w) * vu_hat)
        else:
            f = om.u.values
            df = g.ifft(np.sin(t * w) / w * vu_hat)
        dv = g.ifft(-np.cos(t * w) * vu_hat)
        row = {"time": t}
        row.update(_quadratic_terms(g, space, freq, t, f, df))
        row.update(_quadratic_terms(g, space, freq, t, om.udot.values, dv, "_dot"))
        log.rows.append(row)
    # integrability proxy over dyadic cells
    s = 0.0
    for k, r in enumerate(log.rows):
        width = times[k + 1] - times[k] if k + 1 < len(times) else times[k]
        s += width * (abs(r["A2"]) + abs(r["A3"]) + abs(r["R"]))
        log.partial_sums.append(s)
    log.tail_increments = list(np.diff(log.partial_sums)) if len(log.partial_sums) > 1 else []
    if tol is None:
        tol = 1e-3 * s_norm(traj.state(0.0)) ** 2
    log.tail_flat = bool(len(log.tail_increments) >= 3 and all(x < tol for x in log.tail_increments[-3:]))
    return log


# ---------------------------------------------------------------- decomposition

@dataclass
class Decomposition:
    time: float
    free_part: FieldState
    weak_part: FieldState
    moment_u: float
    moment_v: float
    weak_L2: float
    weak_S: float
    free_S: float


def weighted_moments(state: FieldState) -> tuple[float, float]:
    """(<P>u, |x| <P>u) and (v, |x| v)."""
    g = state.grid
    pu = g.multiply_spectral(state.u.values, g.omega)
    r = g.radius
    mu = g.cell_volume * float(np.sum(r * np.abs(pu) ** 2))
    mv = g.cell_volume * float(np.sum(r * np.abs(state.udot.values) ** 2))
    return mu, mv


def asymptotic_decomposition(traj: StateTrajectory, report: ConvergenceReport, t: float,
                             limit: Optional[FieldState] = None) -> Decomposition:
    """free_part = U0(t) limit, weak_part = u(t) - free_part."""
    if report.verdict != "converged" and limit is None:
        raise ValueError(f"channel verdict is {report.verdict!r}, not converged")
    lim = limit if limit is not None else report.limit
    st = traj.state(t)
    free = free_evolve(lim, t)
    weak = st - free
    mu, mv = weighted_moments(weak)
    g = traj.grid
    return Decomposition(float(t), free, weak, mu, mv,
                         l2_norm(g, weak.u.values) + l2_norm(g, weak.udot.values),
                         s_norm(weak), s_norm(free))


def causal_decomposition(traj: StateTrajectory, cutoffs: tuple, t: float) -> Decomposition:
    """Same-time split: free_part = U0(t) J(t) Omega*(t), J the channel cutoff pair at t.

    Needs only data up to t, so it is available when the dyadic certificate
    has not yet converged at the simulated horizon.
    """
    g = traj.grid
    space, freq = cutoffs
    om = omega_star(traj, t)
    it = FieldState.from_arrays(g, _apply_pair(g, space, freq, t, om.u.values),
                                _apply_pair(g, space, freq, t, om.udot.values))
    free = free_evolve(it, t)
    weak = traj.state(t) - free
    mu, mv = weighted_moments(weak)
    return Decomposition(float(t), free, weak, mu, mv,
                         l2_norm(g, weak.u.values) + l2_norm(g, weak.udot.values),
                         s_norm(weak), s_norm(free))


NEGLIGIBLE_MOMENT = 1e-12


def weak_localization_probe(decompositions: Sequence[Decomposition], e: float,
                            slack: float = 0.2) -> ExponentFit:
    """Growth of (<P>u_w, |x| <P>u_w) against t^e; pass iff slope <= e + slack."""
    if len(decompositions) < 4:
        raise ValueError("need at least 4 decompositions")
    ts = [d.time for d in decompositions]
    ms = [d.moment_u for d in decompositions]
    if min(ms) < 0:
        raise ValueError("negative moment")
    if max(ms) <= NEGLIGIBLE_MOMENT:
        fit = ExponentFit(ts, ms, 0.0, 0.0, 1.0, e, slack, "upper", "theorem_thm2_weak_moment",
                          "weak part negligible")
        return fit
    try:
        fit = fit_exponent(list(zip(ts, ms)), e, slack, "upper", "theorem_thm2_weak_moment")
    except FitError:
        return ExponentFit(ts, ms, 0.0, 0.0, 0.0, e, slack, "upper", "theorem_thm2_weak_moment",
                           "weak part negligible")
    fit.extras["moment_v"] = [d.moment_v for d in decompositions]
    fit.extras["weak_L2"] = [d.weak_L2 for d in decompositions]
    fit.extras["free_S"] = [d.free_S for d in decompositions]
    fit.extras["final_moment"] = ms[-1]
    return fit


# ---------------------------------------------------------------- local decay

def range_anchored_data(v: FieldState, spec: PotentialSpec, anchor: float, dt: float,
                        alpha: float = 0.1, beta: float = 0.05, width: float = 1.0) -> FieldState:
    """Approximate Omega v at time 0 from a finite negative anchor t0.

    The cut-off data bar F_1 F_c v is carried by the free flow to t0 and then
    by the perturbed flow from t0 back up to 0.  With V = 0 this is the
    cut-off data itself.
    """
    if anchor >= 0:
        raise ValueError("anchor time must be negative")
    g = v.grid
    tc = max(1.0, abs(anchor))
    space = CutoffSpec("space_low", alpha=alpha, width=width)
    freq = CutoffSpec("freq_low", beta=beta, width=width)
    cut = FieldState.from_arrays(g, _apply_pair(g, space, freq, tc, v.u.values),
                                 _apply_pair(g, space, freq, tc, v.udot.values))
    if spec.is_empty:
        return cut
    early = free_evolve(cut, anchor)
    return propagate(early, spec, anchor, 0.0, dt)


def local_decay_norm(state: FieldState) -> float:
    g = state.grid
    w = g.japanese_x ** (-0.5 * (g.dim + 1))
    return l2_norm(g, w * state.u.values) + l2_norm(g, w * state.udot.values)


def local_decay_probe(v: FieldState, spec: PotentialSpec, times: Sequence[float], dt: float,
                      anchor: float, second_anchor: Optional[float] = None,
                      alpha: float = 0.1, beta: float = 0.05, slack: float = 0.3,
                      data_radius: float = 0.0) -> ExponentFit:
    """Fit log ||<x>^-(n+1)/2 u(t)|| against log t for range-anchored data (n = 3)."""
    g = v.grid
    if g.dim != 3:
        raise ValueError("local decay probe runs in n = 3 only")
    times = [float(t) for t in times]
    n = g.dim
    target = -(n / 2 - 1)

    def run(t0):
        u0 = range_anchored_data(v, spec, t0, dt, alpha, beta)
        span = max(times[-1], abs(t0))
        if span + data_radius >= 0.5 * g.extent:
            raise ValueError(f"T + data_radius = {span + data_radius} leaves the no-wrap window")
        traj = evolve(u0, spec, times[-1], dt, checkpoint_times=times, check_window=False)
        return [local_decay_norm(traj.state(t)) for t in times], traj

    vals, traj = run(anchor)
    if max(vals) == 0:
        return ExponentFit(times, vals, 0.0, 0.0, 1.0, target, slack, "upper",
                           "section4_local_decay", "vanishing")
    fit = fit_exponent(list(zip(times, vals)), target, slack, "upper", "section4_local_decay")
    fit.extras["anchor"] = anchor
    fit.extras["weight_le_one"] = all(
        local_decay_norm(traj.state(t)) <= s_norm(traj.state(t)) * (1 + 1e-12) for t in times)
    if second_anchor is not None:
        vals2, _ = run(second_anchor)
        fit2 = fit_exponent(list(zip(times, vals2)))
        fit.extras["second_anchor"] = second_anchor
        fit.extras["second_anchor_slope"] = fit2.slope
        fit.extras["anchor_sensitivity"] = abs(fit2.slope - fit.slope)
        fit.extras["second_anchor_values"] = vals2
    return fit


# ---------------------------------------------------------------- dense oracle

def dense_generator(grid: Grid, potential: np.ndarray) -> np.ndarray:
    """Matrix G with d/dt (u, v) = G (u, v) for the discretized linear problem."""
    n = grid.size
    if n > 512:
        raise ValueError("dense generator is for tiny grids only")
    eye = np.eye(n)
    lap = np.empty((n, n), dtype=complex)
    w2 = grid.omega.ravel() ** 2
    for j in range(n):
        lap[:, j] = grid.ifft((w2 * grid.fft(eye[:, j].reshape(grid.shape)).ravel()).reshape(grid.shape)).ravel()
    op = lap + np.diag(np.asarray(potential, dtype=complex).ravel())
    gen = np.zeros((2 * n, 2 * n), dtype=complex)
    gen[:n, n:] = eye
    gen[n:, :n] = -op
    return gen


def potential_on_grid(spec: PotentialSpec, grid: Grid, t: float = 0.0) -> np.ndarray:
    return potential_field(spec, grid, t)
