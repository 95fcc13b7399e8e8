"""Smooth phase-space cutoffs, matrix-free operators and the norm probes built on them."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Literal, Optional, Sequence

import numpy as np

from .fitting import ExponentFit, fit_exponent
from .grid import Field, Grid, inner

logger = logging.getLogger(__name__)

Variant = Literal["space_low", "freq_high", "freq_low", "directional_space",
                  "directional_freq", "identity"]

SPACE_VARIANTS = ("space_low", "directional_space")
FREQ_VARIANTS = ("freq_high", "freq_low", "directional_freq")


def smoothstep(lam, width: float = 1.0):
    """C^2 step: 0 for lam <= 1, 1 for lam >= 1 + width, quintic in between."""
    s = np.clip((np.asarray(lam, dtype=float) - 1.0) / width, 0.0, 1.0)
    return s * s * s * (s * (6.0 * s - 15.0) + 10.0)


def smoothstep_prime(lam, width: float = 1.0):
    s = np.clip((np.asarray(lam, dtype=float) - 1.0) / width, 0.0, 1.0)
    return 30.0 * s * s * (s - 1.0) ** 2 / width


@dataclass(frozen=True)
class CutoffSpec:
    """One smooth localizer.

    ``space_low``          F_c(|x| / t^alpha <= 1)
    ``freq_high``          F_1(t^b |P| > 1)
    ``freq_low``           bar F_1(|P| <= t^beta)
    ``directional_space``  F_2(sign * x_j / t^e > 1)
    ``directional_freq``   F_1(sign * t^b P_j > threshold)
    ``identity``           the constant profile 1

    ``complement`` swaps a profile p for 1 - p.
    """

    variant: Variant
    alpha: float = 0.0
    beta: float = 0.0
    b: float = 0.0
    e: float = 0.0
    width: float = 1.0
    axis: int = 0
    sign: int = 1
    threshold: float = 0.1
    complement: bool = False

    @property
    def acts_in_space(self) -> bool:
        return self.variant in SPACE_VARIANTS

    def complemented(self) -> "CutoffSpec":
        return replace(self, complement=not self.complement)

    def _scaled(self, grid: Grid, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Scaled variable lam and d lam / dt."""
        v = self.variant
        if v == "space_low":
            r = grid.radius
            lam = r / t ** self.alpha
            return lam, -self.alpha * lam / t
        if v == "freq_high":
            k = grid.k_abs
            lam = t ** self.b * k
            return lam, self.b * lam / t
        if v == "freq_low":
            k = grid.k_abs
            lam = k / t ** self.beta
            return lam, -self.beta * lam / t
        if v == "directional_space":
            x = np.broadcast_to(grid.coords[self.axis], grid.shape)
            lam = self.sign * x / t ** self.e
            return lam, -self.e * lam / t
        if v == "directional_freq":
            k = np.broadcast_to(grid.freqs[self.axis], grid.shape)
            lam = self.sign * t ** self.b * k / self.threshold
            return lam, self.b * lam / t
        raise ValueError(f"no scaled variable for variant {v!r}")

    def _base_flipped(self) -> bool:
        # low variants are complements of the step in their scaled variable
        return self.variant in ("space_low", "freq_low")

    def profile(self, grid: Grid, t: float) -> np.ndarray:
        if self.variant == "identity":
            p = np.ones(grid.shape)
            return 1.0 - p if self.complement else p
        lam, _ = self._scaled(grid, t)
        p = smoothstep(lam, self.width)
        if self._base_flipped() != self.complement:
            p = 1.0 - p
        return p

    def time_derivative(self, grid: Grid, t: float) -> np.ndarray:
        """d/dt of the profile at fixed x (or k)."""
        if self.variant == "identity":
            return np.zeros(grid.shape)
        lam, dlam = self._scaled(grid, t)
        d = smoothstep_prime(lam, self.width) * dlam
        if self._base_flipped() != self.complement:
            d = -d
        return d


def window_violations(spec_pairs: dict, theorem: str, dim: int = 1, delta: float = 0.0) -> list[str]:
    """Exponent-window checks per theorem; returns human-readable violations."""
    a = spec_pairs.get("alpha", 0.0)
    be = spec_pairs.get("beta", 0.0)
    b = spec_pairs.get("b", 0.0)
    e = spec_pairs.get("e", 0.0)
    out = []
    if theorem == "thm1":
        if dim < 3:
            out.append(f"thm1 needs n >= 3, got n = {dim}")
        if not (a > 0 and be > 0):
            out.append("thm1 needs alpha, beta > 0")
        val = (dim * (1 - a - be) - 3 * be) / 2
        if not val > 1:
            out.append(f"thm1 window (n(1-alpha-beta)-3beta)/2 = {val:.4g} is not > 1")
    elif theorem in ("thm2", "app1"):
        if not 0 <= b < 0.5:
            out.append(f"b = {b} outside [0, 1/2)")
        hi = min(1 - b, 1 - (2 - delta) / dim) if delta else 1 - b
        if not b < a < hi:
            out.append(f"alpha = {a} outside ({b}, {hi:.4g})")
        if e and not (e > 1 - b > a > b >= 0):
            out.append(f"e > 1-b > alpha > b >= 0 violated (e={e}, b={b}, alpha={a})")
    elif theorem == "com0":
        if not b < a <= 1:
            out.append(f"com0 needs b < alpha <= 1 (b={b}, alpha={a})")
    elif theorem == "tool1":
        if not (e > 1 - b > a > b > 0) if a else not (e > 1 - b and b > 0):
            out.append(f"tool1 window e > 1-b > alpha > b > 0 violated (e={e}, b={b}, alpha={a})")
    return out


# ---------------------------------------------------------------- operators

@dataclass(frozen=True)
class LinearOperatorHandle:
    grid: Grid
    apply: Callable[[np.ndarray], np.ndarray]
    adjoint_apply: Callable[[np.ndarray], np.ndarray]
    name: str = "op"

    def __call__(self, values: np.ndarray) -> np.ndarray:
        return self.apply(values)

    def __matmul__(self, other: "LinearOperatorHandle") -> "LinearOperatorHandle":
        return compose(self, other)

    def __sub__(self, other: "LinearOperatorHandle") -> "LinearOperatorHandle":
        return LinearOperatorHandle(
            self.grid,
            lambda f: self.apply(f) - other.apply(f),
            lambda f: self.adjoint_apply(f) - other.adjoint_apply(f),
            f"({self.name} - {other.name})")

    def __add__(self, other: "LinearOperatorHandle") -> "LinearOperatorHandle":
        return LinearOperatorHandle(
            self.grid,
            lambda f: self.apply(f) + other.apply(f),
            lambda f: self.adjoint_apply(f) + other.adjoint_apply(f),
            f"({self.name} + {other.name})")

    @property
    def adjoint(self) -> "LinearOperatorHandle":
        return LinearOperatorHandle(self.grid, self.adjoint_apply, self.apply, f"{self.name}*")


def compose(*ops: LinearOperatorHandle) -> LinearOperatorHandle:
    """Product ops[0] @ ops[1] @ ... (the last factor acts first)."""
    grid = ops[0].grid

    def fwd(f):
        for op in reversed(ops):
            f = op.apply(f)
        return f

    def adj(f):
        for op in ops:
            f = op.adjoint_apply(f)
        return f

    return LinearOperatorHandle(grid, fwd, adj, " ".join(o.name for o in ops))


def multiplication(grid: Grid, g: np.ndarray, name: str = "mult") -> LinearOperatorHandle:
    g = np.broadcast_to(g, grid.shape)
    gc = np.conj(g)
    return LinearOperatorHandle(grid, lambda f: g * f, lambda f: gc * f, name)


def fourier_multiplier(grid: Grid, m: np.ndarray, name: str = "fmult") -> LinearOperatorHandle:
    m = np.broadcast_to(m, grid.shape)
    mc = np.conj(m)
    return LinearOperatorHandle(grid, lambda f: grid.multiply_spectral(f, m),
                                lambda f: grid.multiply_spectral(f, mc), name)


def identity(grid: Grid) -> LinearOperatorHandle:
    return LinearOperatorHandle(grid, lambda f: f, lambda f: f, "I")


def cutoff_operator(grid: Grid, spec: CutoffSpec, t: float, sqrt: bool = False,
                    derivative: bool = False) -> LinearOperatorHandle:
    p = spec.time_derivative(grid, t) if derivative else spec.profile(grid, t)
    if sqrt:
        p = np.sqrt(np.clip(p, 0.0, None))
    name = f"{'d' if derivative else ''}{spec.variant}"
    if spec.acts_in_space or spec.variant == "identity":
        return multiplication(grid, p, name)
    return fourier_multiplier(grid, p, name)


def half_wave_operator(grid: Grid, t: float, sign: int = 1) -> LinearOperatorHandle:
    return fourier_multiplier(grid, np.exp(sign * 1j * t * grid.omega), f"exp({sign}it<P>)")


def apply_cutoff(field: Field, spec: CutoffSpec, t: float) -> Field:
    if t < 1:
        raise ValueError(f"cutoffs are defined for t >= 1, got t = {t}")
    if spec.variant in ("directional_space", "directional_freq") and not 0 <= spec.axis < field.grid.dim:
        raise ValueError(f"axis {spec.axis} out of range for dim {field.grid.dim}")
    if field.space != "physical":
        raise ValueError("apply_cutoff expects a physical field")
    op = cutoff_operator(field.grid, spec, t)
    return field.with_values(op.apply(field.values))


def assemble_dense(op: LinearOperatorHandle) -> np.ndarray:
    """Dense matrix of an operator on a tiny grid, column by column."""
    g = op.grid
    n = g.size
    if n > 4096:
        raise ValueError(f"refusing to assemble a {n} x {n} matrix")
    mat = np.empty((n, n), dtype=complex)
    e = np.zeros(n, dtype=complex)
    for j in range(n):
        e[:] = 0
        e[j] = 1
        mat[:, j] = op.apply(e.reshape(g.shape)).ravel()
    return mat


def dense_norm(op: LinearOperatorHandle) -> float:
    return float(np.linalg.norm(assemble_dense(op), 2))


@dataclass
class PowerIterationResult:
    norm: float
    history: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def power_iteration(op: LinearOperatorHandle, iterations: int = 200, seed: int = 0,
                    rtol: float = 1e-8) -> PowerIterationResult:
    """Power iteration on A*A from a seeded complex Gaussian start.

    The iterates sqrt(<x, A*A x>) with ||x|| = 1 form a nondecreasing sequence
    of lower bounds on ||A||.
    """
    if iterations < 20:
        raise ValueError("need at least 20 iterations")
    g = op.grid
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)
    x /= np.linalg.norm(x)
    hist: list[float] = []
    prev = None
    res = PowerIterationResult(0.0)
    for it in range(1, iterations + 1):
        y = op.apply(x)
        if not np.all(np.isfinite(y)):
            raise FloatingPointError("operator produced NaN or Inf")
        est = float(np.linalg.norm(y))
        hist.append(est)
        z = op.adjoint_apply(y)
        nz = np.linalg.norm(z)
        if nz == 0:
            res.converged = True
            break
        x = z / nz
        if prev is not None and abs(est - prev) <= rtol * max(est, 1e-300):
            res.converged = True
            break
        prev = est
    res.history = hist
    res.iterations = len(hist)
    res.norm = hist[-1] if hist else 0.0
    return res


def operator_norm(op: LinearOperatorHandle, iterations: int = 200, seed: int = 0) -> float:
    return power_iteration(op, iterations, seed).norm


# ---------------------------------------------------------------- probes

def commutator_handle(grid: Grid, space: CutoffSpec, freq: CutoffSpec, t: float) -> LinearOperatorHandle:
    a = cutoff_operator(grid, space, t)
    b = cutoff_operator(grid, freq, t)
    return compose(a, b) - compose(b, a)


def commutator_norm_probe(grid: Grid, alpha: float, times: Sequence[float], b: Optional[float] = None,
                          beta: Optional[float] = None, width: float = 1.0,
                          constant_space: bool = False, iterations: int = 200, seed: int = 0,
                          tolerance: Optional[float] = None) -> ExponentFit:
    """Fit log ||[F_c(|x|/t^alpha <= 1), F_1(t^b |P| > 1)]|| against log t.

    With ``beta`` set, the frequency factor is bar F_1(|P| <= t^beta) and the
    predicted slope is -(alpha + beta); otherwise it is -(alpha - b).
    """
    times = [float(t) for t in times]
    if len(times) < 4 or min(times) < 1:
        raise ValueError("need at least 4 sample times, all >= 1")
    if beta is None:
        b = 0.0 if b is None else b
        if not b < alpha <= 1:
            raise ValueError(f"exponent ordering violated: need b < alpha <= 1 (b={b}, alpha={alpha})")
        freq = CutoffSpec("freq_high", b=b, width=width)
        target, anchor = -(alpha - b), "lemma_com0_eqc0"
        kmax_needed = max(t ** -b for t in times) * (1 + width)
    else:
        if not (beta > 0 and 0 < alpha <= 1):
            raise ValueError("beta variant needs beta > 0 and 0 < alpha <= 1")
        freq = CutoffSpec("freq_low", beta=beta, width=width)
        target, anchor = -(alpha + beta), "lemma_com0_eqc2"
        kmax_needed = max(t ** beta for t in times) * (1 + width)
    space = CutoffSpec("identity") if constant_space else CutoffSpec("space_low", alpha=alpha, width=width)
    rmax_needed = max(t ** alpha for t in times) * (1 + width)
    if rmax_needed >= 0.5 * grid.extent:
        raise ValueError(f"spatial cutoff reaches {rmax_needed:.3g}, beyond L/2 = {0.5 * grid.extent}")
    if kmax_needed >= np.pi / grid.spacing:
        raise ValueError(f"frequency cutoff reaches {kmax_needed:.3g}, beyond the Nyquist frequency")
    norms = []
    for i, t in enumerate(times):
        op = commutator_handle(grid, space, freq, t)
        norms.append(operator_norm(op, iterations, seed + i))
    if tolerance is None:
        tolerance = 0.15 if beta is None else 0.2
    if constant_space:
        fit = ExponentFit(times, norms, 0.0, 0.0, 1.0, target, tolerance, "band", anchor,
                          "pass" if max(norms) < 1e-10 else "fail")
        fit.extras["max_norm"] = max(norms)
        return fit
    fit = fit_exponent(list(zip(times, norms)), target, tolerance, "band", anchor)
    fit.extras["constant"] = float(np.exp(fit.intercept))
    return fit


DIRECTIONS = ("outgoing_plus", "incoming_plus", "outgoing_minus", "incoming_minus")


@dataclass
class VelocityBound:
    norm: float
    envelope: float
    ratio: float
    envelope_exponent: float
    exploratory: bool
    direction: str
    a: float
    t: float


def velocity_bound_handle(grid: Grid, e: float, b: float, delta: float, a: float, t: float,
                          direction: str, axis: int = 0, threshold: float = 0.1,
                          width: float = 1.0) -> LinearOperatorHandle:
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    sign = 1 if direction.endswith("plus") else -1
    incoming = direction.startswith("incoming")
    space = CutoffSpec("directional_space", e=e, axis=axis, sign=sign, width=width)
    freq = CutoffSpec("directional_freq", b=b, axis=axis, sign=sign, threshold=threshold,
                      width=width, complement=incoming)
    prop_sign = -1 if incoming else 1
    xj = np.broadcast_to(grid.coords[axis], grid.shape)
    weight = (1.0 + xj ** 2) ** (-0.5 * delta)
    return compose(cutoff_operator(grid, space, t), cutoff_operator(grid, freq, t),
                   half_wave_operator(grid, a, prop_sign), multiplication(grid, weight, "<x_j>^-delta"))


def velocity_bound_probe(grid: Grid, e: float, b: float, delta: float, a_or_c: float, t: float,
                         direction: str = "outgoing_plus", axis: int = 0, threshold: float = 0.1,
                         width: float = 1.0, iterations: int = 200, seed: int = 0) -> VelocityBound:
    """Norm of the minimal/maximal velocity operator against |t^e + sqrt(a)|^-delta."""
    exploratory = bool(window_violations({"e": e, "b": b}, "tool1"))
    if direction.startswith("incoming") and not 0 < a_or_c <= t:
        exploratory = True
    if exploratory:
        logger.warning("velocity bound probe outside the theorem window (e=%s, b=%s, a=%s, t=%s)",
                       e, b, a_or_c, t)
    op = velocity_bound_handle(grid, e, b, delta, a_or_c, t, direction, axis, threshold, width)
    nrm = operator_norm(op, iterations, seed)
    env = abs(t ** e + np.sqrt(a_or_c)) ** (-delta)
    return VelocityBound(nrm, env, nrm / env, delta, exploratory, direction, a_or_c, t)


def velocity_bound_sweep(grid: Grid, e: float, b: float, delta: float, a_values: Sequence[float],
                         t: float, direction: str = "outgoing_plus", **kw) -> ExponentFit:
    """Fit log-norm against log a; the envelope predicts slope -delta/2 once sqrt(a) >= t^e."""
    samples = [velocity_bound_probe(grid, e, b, delta, a, t, direction, seed=i, **kw)
               for i, a in enumerate(a_values)]
    fit = fit_exponent([(s.a, s.norm) for s in samples], -(0.5 * delta - 0.3), 0.0, "upper",
                       "lemma_tool1_" + direction)
    fit.extras.update({
        "ratios": [s.ratio for s in samples],
        "envelopes": [s.envelope for s in samples],
        "exploratory": any(s.exploratory for s in samples),
        "max_ratio": max(s.ratio for s in samples),
    })
    return fit
