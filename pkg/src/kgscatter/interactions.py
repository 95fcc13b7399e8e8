"""Interaction catalog: localized and moving potentials, local and power nonlinearities."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal, Optional, Sequence, Union

import numpy as np

from .fitting import ExponentFit, fit_exponent
from .grid import Field, FieldState, Grid, l1_norm, l2_norm, s_norm
from .phase_space import CutoffSpec, cutoff_operator, window_violations


class SpecError(ValueError):
    pass


ProfileKind = Literal["bracket", "gaussian", "odd_bracket"]


@dataclass(frozen=True)
class Profile:
    """Spatial shape.

    ``bracket``      A <x - c>^-sigma
    ``gaussian``     A exp(-|x - c|^2 / rho^2)
    ``odd_bracket``  A (x_0 - c_0) <x - c>^-(sigma + 1); odd in x_0, decays like <x>^-sigma
    """

    kind: ProfileKind = "gaussian"
    amplitude: float = 1.0
    sigma: float = 4.0
    rho: float = 1.0
    center: tuple = ()

    def __post_init__(self):
        if self.kind not in ("bracket", "gaussian", "odd_bracket"):
            raise SpecError(f"unknown profile kind {self.kind!r}")
        if self.kind == "gaussian" and not self.rho > 0:
            raise SpecError("gaussian width rho must be positive")
        if self.kind != "gaussian" and not self.sigma > 0:
            raise SpecError("bracket decay sigma must be positive")

    def evaluate(self, grid: Grid, shift=None) -> np.ndarray:
        """Profile at x - shift - center, evaluated analytically."""
        if shift is None:
            return _static_values(self, grid)
        return self._evaluate(grid, shift)

    def _evaluate(self, grid: Grid, shift=None) -> np.ndarray:
        off = np.zeros(grid.dim)
        if self.center:
            off += np.asarray(self.center, dtype=float)
        if shift is not None:
            off += np.asarray(shift, dtype=float)
        xs = [c - o for c, o in zip(grid.coords, off)]
        r2 = np.broadcast_to(sum(x ** 2 for x in xs), grid.shape)
        if self.kind == "gaussian":
            return self.amplitude * np.exp(-r2 / self.rho ** 2)
        if self.kind == "bracket":
            return self.amplitude * (1.0 + r2) ** (-0.5 * self.sigma)
        return self.amplitude * xs[0] * (1.0 + r2) ** (-0.5 * (self.sigma + 1.0))

    # decay exponent at infinity; inf for gaussians
    @property
    def decay(self) -> float:
        return math.inf if self.kind == "gaussian" else self.sigma

    def in_weighted_linf(self, s: float) -> bool:
        """sup <x>^s |V| finite."""
        return self.decay >= s

    def in_weighted_l2(self, delta: float, dim: int) -> bool:
        """||<x>^delta V||_L2 finite."""
        return self.decay - delta > 0.5 * dim

    def radius(self, sigmas: float = 4.0) -> float:
        c = float(np.linalg.norm(self.center)) if self.center else 0.0
        return c + sigmas * (self.rho if self.kind == "gaussian" else 1.0)


@lru_cache(maxsize=32)
def _static_values(profile: Profile, grid: Grid) -> np.ndarray:
    out = profile._evaluate(grid)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class StaticLocalized:
    profile: Profile
    kind: str = field(default="static_localized", init=False)

    def potential(self, grid: Grid, t: float) -> np.ndarray:
        return self.profile.evaluate(grid)


@dataclass(frozen=True)
class MovingBump:
    """V(x - g(t) v); g(t) = t or t + epsilon sin(frequency t)."""

    profile: Profile
    velocity: tuple
    trajectory: Literal["linear", "sin_modulated"] = "linear"
    epsilon: float = 0.0
    frequency: float = 1.0
    kind: str = field(default="moving_bump", init=False)

    def __post_init__(self):
        speed = float(np.linalg.norm(self.velocity))
        if not speed < 1:
            raise SpecError(f"moving bump speed |v| = {speed} must be < 1")
        if self.trajectory not in ("linear", "sin_modulated"):
            raise SpecError(f"trajectory must be 'linear' or 'sin_modulated', got {self.trajectory!r}")

    def g(self, t: float) -> float:
        if self.trajectory == "linear":
            return t
        return t + self.epsilon * math.sin(self.frequency * t)

    def potential(self, grid: Grid, t: float) -> np.ndarray:
        if len(self.velocity) != grid.dim:
            raise SpecError("velocity dimension does not match the grid")
        return self.profile.evaluate(grid, self.g(t) * np.asarray(self.velocity, dtype=float))


@dataclass(frozen=True)
class TimeModulated:
    """m(t) V(x) with m in {1, cos(w t), 1 + eps cos(w t)}."""

    profile: Profile
    modulation: Literal["constant", "cos", "one_plus_eps_cos"] = "constant"
    frequency: float = 1.0
    epsilon: float = 0.0
    kind: str = field(default="time_modulated", init=False)

    def __post_init__(self):
        if self.modulation not in ("constant", "cos", "one_plus_eps_cos"):
            raise SpecError(f"unknown modulation {self.modulation!r}")

    def factor(self, t: float) -> float:
        if self.modulation == "constant":
            return 1.0
        c = math.cos(self.frequency * t)
        return c if self.modulation == "cos" else 1.0 + self.epsilon * c

    def potential(self, grid: Grid, t: float) -> np.ndarray:
        return self.factor(t) * self.profile.evaluate(grid)


@dataclass(frozen=True)
class NonlinearLocal:
    """a(x) u^2 + b(x) u^3, entering as N0(u) = a u + b u^2."""

    a: Optional[Profile] = None
    b: Optional[Profile] = None
    delta: float = 2.5
    kind: str = field(default="nonlinear_local", init=False)

    def __post_init__(self):
        if not self.delta > 2:
            raise SpecError(f"nonlinear_local needs delta > 2, got {self.delta}")
        for name, p in (("a", self.a), ("b", self.b)):
            if p is not None and not p.in_weighted_linf(self.delta):
                raise SpecError(f"profile {name} is not in L^inf_delta for delta = {self.delta}")


@dataclass(frozen=True)
class NonlinearPower:
    """coefficient * |u|^(p-1), i.e. a contribution coefficient |u|^(p-1) u to the right side."""

    coefficient: float
    power: float
    kind: str = field(default="nonlinear_power", init=False)

    def __post_init__(self):
        if not self.power >= 1:
            raise SpecError(f"power p must be >= 1, got {self.power}")


Term = Union[StaticLocalized, MovingBump, TimeModulated, NonlinearLocal, NonlinearPower]
LINEAR_KINDS = ("static_localized", "moving_bump", "time_modulated")


@dataclass(frozen=True)
class PotentialSpec:
    terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    @property
    def is_empty(self) -> bool:
        return not self.terms

    @property
    def linear_terms(self):
        return [t for t in self.terms if t.kind in LINEAR_KINDS]

    @property
    def nonlinear_terms(self):
        return [t for t in self.terms if t.kind not in LINEAR_KINDS]

    @property
    def is_linear(self) -> bool:
        return not self.nonlinear_terms

    @property
    def is_static(self) -> bool:
        return all(t.kind == "static_localized" or
                   (t.kind == "time_modulated" and t.modulation == "constant")
                   for t in self.linear_terms)

    def validate_for_dim(self, dim: int) -> None:
        for t in self.terms:
            if t.kind == "moving_bump" and len(t.velocity) != dim:
                raise SpecError("moving bump velocity dimension does not match the grid")
            if t.kind == "nonlinear_power" and dim >= 3 and t.power > dim / (dim - 2):
                raise SpecError(f"power p = {t.power} exceeds n/(n-2) = {dim / (dim - 2):g}")

    def data_radius(self, t_max: float = 0.0) -> float:
        """Largest distance from the origin reached by a linear term up to t_max."""
        r = 0.0
        for t in self.linear_terms:
            reach = t.profile.radius()
            if t.kind == "moving_bump":
                g = abs(t.g(t_max)) + (abs(t.epsilon) if t.trajectory == "sin_modulated" else 0.0)
                reach += g * float(np.linalg.norm(t.velocity))
            r = max(r, reach)
        return r


def potential_field(spec: PotentialSpec, grid: Grid, t: float) -> np.ndarray:
    """V(x, t): sum of the linear terms."""
    v = np.zeros(grid.shape)
    for term in spec.linear_terms:
        v = v + term.potential(grid, t)
    return v


def nonlinear_coefficient(spec: PotentialSpec, grid: Grid, u: np.ndarray) -> np.ndarray:
    """N0(u): the state-dependent multiplier."""
    out = np.zeros(grid.shape, dtype=complex)
    for term in spec.nonlinear_terms:
        if term.kind == "nonlinear_local":
            if term.a is not None:
                out = out + term.a.evaluate(grid) * u
            if term.b is not None:
                out = out + term.b.evaluate(grid) * u * u
        else:
            out = out + term.coefficient * np.abs(u) ** (term.power - 1.0)
    return out


def effective_potential(spec: PotentialSpec, grid: Grid, u: np.ndarray, t: float) -> np.ndarray:
    """V(x, t) + N0(u(x)), with u frozen."""
    eff = potential_field(spec, grid, t).astype(complex)
    if spec.nonlinear_terms:
        eff = eff + nonlinear_coefficient(spec, grid, u)
    return eff


def evaluate_interaction(spec: PotentialSpec, state: Union[FieldState, Field], t: float) -> Field:
    """(V(x,t) + N0(u)) u in physical space."""
    f = state.u if isinstance(state, FieldState) else state
    u = f.values
    if not np.all(np.isfinite(u)):
        raise ValueError("state contains NaN or Inf")
    if spec.is_empty:
        return Field(f.grid, np.zeros(f.grid.shape, dtype=complex))
    return Field(f.grid, effective_potential(spec, f.grid, u, t) * u)


def potential_energy(spec: PotentialSpec, grid: Grid, u: np.ndarray, t: float) -> float:
    """int V u^2 + 2 a u^3 / 3 + b u^4 / 2 + 2 c |u|^(p+1) / (p+1), real part."""
    if spec.is_empty:
        return 0.0
    dens = potential_field(spec, grid, t) * u * u
    for term in spec.nonlinear_terms:
        if term.kind == "nonlinear_local":
            if term.a is not None:
                dens = dens + (2.0 / 3.0) * term.a.evaluate(grid) * u ** 3
            if term.b is not None:
                dens = dens + 0.5 * term.b.evaluate(grid) * u ** 4
        else:
            p = term.power
            dens = dens + 2.0 * term.coefficient * np.abs(u) ** (p + 1.0) / (p + 1.0)
    return float(grid.cell_volume * np.sum(dens).real)


@dataclass
class InteractionSample:
    time: float
    effective_potential: Field
    class_norms: dict


def sample_interaction(spec: PotentialSpec, state: FieldState, t: float,
                       delta_tilde: float = 1.0) -> InteractionSample:
    g = state.grid
    eff = effective_potential(spec, g, state.u.values, t)
    vu = eff * state.u.values
    w = g.japanese_x ** delta_tilde
    norms = {
        "L2": l2_norm(g, vu),
        "L2_weighted": l2_norm(g, w * vu),
        "L1_weighted": l1_norm(g, w * vu),
    }
    return InteractionSample(float(t), Field(g, eff), norms)


# ---------------------------------------------------------------- class checks

def interaction_class(spec: PotentialSpec, dim: int, delta: float = 1.5) -> dict:
    """Analytic class membership of the linear part.

    class 1: each term in L2_delta or L^inf_{delta + n/2} with delta > 1 (static or
    time-modulated profiles only).  class 2: each term in L2.
    """
    c1 = delta > 1
    c2 = True
    for t in spec.linear_terms:
        p = t.profile
        in_l2 = p.in_weighted_l2(0.0, dim)
        c2 = c2 and in_l2
        if t.kind == "moving_bump":
            c1 = False
        else:
            c1 = c1 and (p.in_weighted_l2(delta, dim) or p.in_weighted_linf(delta + 0.5 * dim))
    return {"class1": bool(c1), "class2": bool(c2), "delta": delta}


def class_norm_report(spec: PotentialSpec, trajectory, delta: float = 1.5) -> dict:
    """Sup over stored snapshots of ||V u||_L2 and ||u||_S, plus the class verdict."""
    times = list(trajectory.times)
    if not times:
        raise ValueError("trajectory is empty")
    g = trajectory.grid
    vu_norms, s_norms, power_norms = [], [], []
    for t in times:
        st = trajectory.state(t)
        vu = evaluate_interaction(spec, st, t).values
        vu_norms.append(l2_norm(g, vu))
        s_norms.append(s_norm(st))
        if any(term.kind == "nonlinear_power" for term in spec.terms):
            u = st.u.values
            power_norms.append({str(term.power): l2_norm(g, np.abs(u) ** (term.power - 1) * u)
                                for term in spec.terms if term.kind == "nonlinear_power"})
    cls = interaction_class(spec, g.dim, delta)
    finite = all(np.isfinite(vu_norms)) and all(np.isfinite(s_norms))
    if spec.is_linear:
        conforming = cls["class1"] or cls["class2"]
    else:
        conforming = cls["class2"]
    s0 = s_norms[0]
    return {
        "times": times,
        "sup_interaction_L2": max(vu_norms),
        "interaction_L2": vu_norms,
        "sup_S_norm": max(s_norms),
        "S_norm": s_norms,
        "S_norm_relative_variation": (max(s_norms) - min(s_norms)) / s0 if s0 else 0.0,
        "power_terms_L2": power_norms,
        "class": cls,
        "verdict": "conforming" if (conforming and finite) else "nonconforming",
    }


# ---------------------------------------------------------------- decay probes

def can1_exponent(alpha: float, delta: float, dim: int) -> float:
    """min{(1 - alpha) n / 2 + dt / 2 - 1, dt - 1} with dt = (1 + delta) / 2."""
    dt = 0.5 * (1.0 + delta)
    return min((1.0 - alpha) * dim / 2.0 + dt / 2.0 - 1.0, dt - 1.0)


def duhamel_integrands(trajectory, t: float) -> tuple[np.ndarray, np.ndarray]:
    """d/dt u_Omega = sin(t w)/w V u and d/dt u_dot_Omega = -cos(t w) V u at a checkpoint."""
    g = trajectory.grid
    st = trajectory.state(t)
    vu_hat = g.fft(evaluate_interaction(trajectory.spec, st, t).values)
    w = g.omega
    du = g.ifft(np.sin(t * w) / w * vu_hat)
    dv = g.ifft(-np.cos(t * w) * vu_hat)
    return du, dv


def interaction_decay_probe(trajectory, times: Sequence[float], alpha: float,
                            beta: float = 0.0, b: float = 0.0, variant: str = "can2_a0",
                            delta: float = 2.5, width: float = 1.0,
                            tolerance: float = 0.2) -> ExponentFit:
    """Decay of the cut-off Duhamel integrand.

    ``can2_a0``   ||F_c bar F_1(|P| <= t^beta) d/dt u_dot_Omega||, predicted -(n(1-alpha-beta) - 3 beta)/2
    ``can2_a_1``  ||F_c bar F_1 d/dt u_Omega||, predicted -(n(1-alpha-beta) - beta)/2
    ``can1``      ||F_c F_1(t^b |P| > 1) <P> d/dt u_Omega||, predicted -(1 + beta_tilde)
    ``can1_dot``  the same with d/dt u_dot_Omega

    Pass iff slope <= predicted + tolerance.
    """
    g = trajectory.grid
    n = g.dim
    exploratory = False
    if variant.startswith("can2"):
        if n < 3 or not (0 < alpha < 1 - 2 / n) or beta <= 0:
            exploratory = True
        freq = CutoffSpec("freq_low", beta=beta, width=width)
        if variant == "can2_a0":
            target, anchor = -(n * (1 - alpha - beta) - 3 * beta) / 2, "lemma_can2_eq_a0"
        elif variant == "can2_a_1":
            target, anchor = -(n * (1 - alpha - beta) - beta) / 2, "lemma_can2_eq_a_1"
        else:
            raise ValueError(f"unknown variant {variant!r}")
    elif variant in ("can1", "can1_dot"):
        bt = can1_exponent(alpha, delta, n)
        if window_violations({"alpha": alpha, "b": b}, "app1", n, delta) or bt <= 0 or delta <= 1:
            exploratory = True
        freq = CutoffSpec("freq_high", b=b, width=width)
        target, anchor = -(1.0 + bt), "lemma_can1_eq_abc1" if variant == "can1" else "lemma_can1_eq_abc2"
    else:
        raise ValueError(f"unknown variant {variant!r}")
    space = CutoffSpec("space_low", alpha=alpha, width=width)
    vals = []
    for t in times:
        if t < 1:
            raise ValueError("sample times must be >= 1")
        du, dv = duhamel_integrands(trajectory, t)
        if variant == "can2_a_1":
            f = du
        elif variant == "can1":
            f = g.multiply_spectral(du, g.omega)
        else:
            f = dv
        f = cutoff_operator(g, space, t).apply(cutoff_operator(g, freq, t).apply(f))
        vals.append(l2_norm(g, f))
    if max(vals) == 0:
        fit = ExponentFit([float(t) for t in times], vals, 0.0, 0.0, 1.0, target, tolerance, "upper",
                          anchor, "vanishing")
        fit.extras["exploratory"] = exploratory
        return fit
    fit = fit_exponent(list(zip(times, vals)), target, tolerance, "upper", anchor)
    fit.extras["exploratory"] = exploratory
    fit.extras["predicted_slope"] = target
    return fit
