"""Experiment configuration: JSON schema, defaults, validation and seeded initial data."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .grid import FieldState, Grid, make_grid
from .interactions import (MovingBump, NonlinearLocal, NonlinearPower, PotentialSpec, Profile,
                           SpecError, StaticLocalized, TimeModulated)
from .phase_space import window_violations


class ConfigError(ValueError):
    """Collects every validation problem, each tagged with its field path."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config:\n  " + "\n  ".join(self.problems))


DEFAULTS: dict = {
    "theorem": "none",
    "exploratory": False,
    "seed": 0,
    "threads": 1,
    "grid": {"dim": 1, "L": 200.0, "N": 1024},
    "initial_data": {"family": "gaussian", "amplitude": 1.0, "width": 1.0, "center": None,
                     "odd": False, "wavevector": None, "kmax": 2.0, "radius_sigmas": 4.0},
    "potential": {"terms": []},
    "cutoffs": {"alpha": 0.1, "beta": 0.05, "b": 0.1, "e": 0.55, "width": 1.0, "delta": 2.5},
    "run": {"dt": 0.05, "T_max": 64.0, "checkpoint_stride": None, "dyadic_start": 1.0,
            "blowup_factor": 1e3},
    "probes": [],
    "output": {"directory": "out", "formats": ["csv", "json"], "snapshots": False},
}

PROBE_KINDS = ("dispersive_decay", "commutator", "velocity_bound", "duhamel", "channel",
               "observables", "interaction_decay", "decomposition", "local_decay", "class_norms")
THEOREMS = ("none", "thm1", "thm2", "app1")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def child_seed(root: int, label: str) -> int:
    """Stable 63-bit seed for a labeled stochastic component."""
    h = hashlib.sha256(f"{int(root)}:{label}".encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


# ---------------------------------------------------------------- potential block

def _profile(d: dict, path: str, problems: list) -> Optional[Profile]:
    try:
        center = tuple(float(c) for c in d.get("center") or ())
        return Profile(d.get("kind", "gaussian"), float(d.get("amplitude", 1.0)),
                       float(d.get("sigma", 4.0)), float(d.get("rho", 1.0)), center)
    except (SpecError, TypeError, ValueError) as exc:
        problems.append(f"{path}: {exc}")
        return None


def build_potential(block: dict, problems: Optional[list] = None) -> PotentialSpec:
    own = problems is None
    problems = [] if own else problems
    terms = []
    for i, t in enumerate(block.get("terms", [])):
        path = f"potential.terms[{i}]"
        kind = t.get("kind")
        try:
            if kind == "static_localized":
                p = _profile(t.get("profile", {}), path + ".profile", problems)
                if p:
                    terms.append(StaticLocalized(p))
            elif kind == "moving_bump":
                p = _profile(t.get("profile", {}), path + ".profile", problems)
                if p:
                    terms.append(MovingBump(p, tuple(float(v) for v in t.get("velocity", ())),
                                            t.get("trajectory", "linear"), float(t.get("epsilon", 0.0)),
                                            float(t.get("frequency", 1.0))))
            elif kind == "time_modulated":
                p = _profile(t.get("profile", {}), path + ".profile", problems)
                if p:
                    terms.append(TimeModulated(p, t.get("modulation", "constant"),
                                               float(t.get("frequency", 1.0)), float(t.get("epsilon", 0.0))))
            elif kind == "nonlinear_local":
                a = _profile(t["a"], path + ".a", problems) if t.get("a") else None
                b = _profile(t["b"], path + ".b", problems) if t.get("b") else None
                terms.append(NonlinearLocal(a, b, float(t.get("delta", 2.5))))
            elif kind == "nonlinear_power":
                terms.append(NonlinearPower(float(t.get("coefficient", 1.0)), float(t.get("power", 3.0))))
            else:
                problems.append(f"{path}.kind: unknown interaction kind {kind!r}")
        except (SpecError, TypeError, ValueError, KeyError) as exc:
            problems.append(f"{path}: {exc}")
    if own and problems:
        raise ConfigError(problems)
    return PotentialSpec(terms)


# ---------------------------------------------------------------- initial data

def _center(d: dict, dim: int) -> np.ndarray:
    c = d.get("center")
    return np.zeros(dim) if c is None else np.asarray(c, dtype=float)


def data_radius(d: dict, dim: int) -> float:
    c = float(np.linalg.norm(_center(d, dim)))
    return c + float(d.get("radius_sigmas", 4.0)) * float(d.get("width", 1.0))


def build_initial_data(d: dict, grid: Grid, seed: int) -> FieldState:
    """Named data families; all real-valued and localized by a Gaussian envelope."""
    fam = d.get("family", "gaussian")
    amp = float(d.get("amplitude", 1.0))
    w = float(d.get("width", 1.0))
    c = _center(d, grid.dim)
    xs = [x - ci for x, ci in zip(grid.coords, c)]
    r2 = np.broadcast_to(sum(x ** 2 for x in xs), grid.shape)
    env = np.exp(-0.5 * r2 / w ** 2)
    if fam == "gaussian":
        u = amp * env
        if d.get("odd"):
            u = u * (xs[0] / w)
        return FieldState.from_arrays(grid, u)
    if fam == "plane_wave_packet":
        k0 = np.asarray(d.get("wavevector") or [1.0] + [0.0] * (grid.dim - 1), dtype=float)
        phase = sum(k * x for k, x in zip(k0, xs))
        w0 = float(np.sqrt(k0 @ k0 + 1.0))
        # right-moving packet: u = A g cos(k.x), u_dot = A w0 g sin(k.x)
        return FieldState.from_arrays(grid, amp * env * np.cos(phase), amp * w0 * env * np.sin(phase))
    if fam == "random_band_limited":
        rng = np.random.default_rng(child_seed(seed, "initial_data"))
        kmax = float(d.get("kmax", 2.0))
        coeffs = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
        coeffs[grid.k_abs > kmax] = 0.0
        raw = grid.ifft(coeffs).real
        peak = np.max(np.abs(raw))
        u = amp * env * (raw / peak if peak > 0 else raw)
        return FieldState.from_arrays(grid, u)
    raise ConfigError([f"initial_data.family: unknown family {fam!r}"])


# ---------------------------------------------------------------- config object

@dataclass
class ExperimentConfig:
    raw: dict

    def __getitem__(self, k):
        return self.raw[k]

    @property
    def grid(self) -> Grid:
        g = self.raw["grid"]
        return make_grid(int(g["dim"]), float(g["L"]), int(g["N"]), int(self.raw.get("threads", 1)))

    @property
    def potential(self) -> PotentialSpec:
        return build_potential(self.raw["potential"])

    def initial_state(self, grid: Optional[Grid] = None) -> FieldState:
        return build_initial_data(self.raw["initial_data"], grid or self.grid, int(self.raw["seed"]))

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def probe_seed(self, label: str) -> int:
        return child_seed(self.seed, label) % (2 ** 31)

    def to_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, indent=2)


def resolve(user: dict) -> dict:
    """Materialize defaults; probes keep their own order."""
    if not isinstance(user, dict):
        raise ConfigError(["<root>: config must be a JSON object"])
    return _merge(DEFAULTS, user)


def validate(raw: dict) -> list[str]:
    problems: list[str] = []
    unknown = set(raw) - set(DEFAULTS)
    for k in sorted(unknown):
        problems.append(f"{k}: unknown top-level key")
    g = raw["grid"]
    if g.get("dim") not in (1, 2, 3):
        problems.append(f"grid.dim: must be 1, 2 or 3, got {g.get('dim')!r}")
    try:
        if not float(g.get("L", 0)) > 0:
            problems.append("grid.L: must be positive")
    except (TypeError, ValueError):
        problems.append("grid.L: must be a number")
    n = g.get("N")
    if not isinstance(n, int) or n < 8 or n % 2:
        problems.append(f"grid.N: must be an even integer >= 8, got {n!r}")
    elif g.get("dim") in (1, 2, 3) and n ** g["dim"] > 2 ** 24:
        problems.append(f"grid.N: {n}^{g['dim']} sites exceeds the memory bound")
    if raw["theorem"] not in THEOREMS:
        problems.append(f"theorem: must be one of {THEOREMS}")
    run = raw["run"]
    if not float(run.get("dt", 0)) > 0:
        problems.append("run.dt: must be positive")
    if not float(run.get("T_max", 0)) > 0:
        problems.append("run.T_max: must be positive")
    st = run.get("checkpoint_stride")
    if st is not None and (not isinstance(st, int) or st < 1):
        problems.append("run.checkpoint_stride: must be a positive integer or null")
    if float(run.get("dyadic_start", 1.0)) < 1:
        problems.append("run.dyadic_start: must be >= 1")
    fam = raw["initial_data"].get("family")
    if fam not in ("gaussian", "plane_wave_packet", "random_band_limited"):
        problems.append(f"initial_data.family: unknown family {fam!r}")
    if not float(raw["initial_data"].get("width", 1.0)) > 0:
        problems.append("initial_data.width: must be positive")
    spec = build_potential(raw["potential"], problems)
    if g.get("dim") in (1, 2, 3):
        try:
            spec.validate_for_dim(g["dim"])
        except SpecError as exc:
            problems.append(f"potential: {exc}")
        if not problems:
            reach = max(data_radius(raw["initial_data"], g["dim"]), spec.data_radius(float(run["T_max"])))
            if float(run["T_max"]) + reach >= 0.5 * float(g["L"]):
                problems.append(
                    f"run.T_max: T_max + data_radius = {float(run['T_max']) + reach:g} is not below "
                    f"L/2 = {0.5 * float(g['L']):g} (validity window)")
    cut = raw["cutoffs"]
    if raw["theorem"] in ("thm1", "thm2", "app1") and g.get("dim") in (1, 2, 3):
        viol = window_violations(cut, raw["theorem"], g["dim"], float(cut.get("delta", 0.0)))
        if viol and not raw["exploratory"]:
            problems.extend(f"cutoffs: {v} (set exploratory: true to override)" for v in viol)
    names = []
    for i, p in enumerate(raw["probes"]):
        if not isinstance(p, dict) or p.get("kind") not in PROBE_KINDS:
            problems.append(f"probes[{i}].kind: must be one of {PROBE_KINDS}")
            continue
        name = p.get("name", p["kind"])
        if name in names:
            problems.append(f"probes[{i}].name: duplicate probe name {name!r}")
        names.append(name)
    return problems


def load_config(text_or_dict, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Parse, materialize defaults and validate; raises ConfigError with field diagnostics."""
    if isinstance(text_or_dict, str):
        try:
            user = json.loads(text_or_dict)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from None
    else:
        user = text_or_dict
    raw = resolve(user)
    if overrides:
        raw = _merge(raw, overrides)
    problems = validate(raw)
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(raw)


def load_config_file(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    with open(path) as fh:
        return load_config(fh.read(), overrides)
