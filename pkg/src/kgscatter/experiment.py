"""Run one configured experiment: evolve, run the probe block, write CSV/JSON/snapshots."""
from __future__ import annotations

import json
import logging
import math
import os
from typing import Callable, Optional

import numpy as np

from .config import ExperimentConfig, data_radius
from .fitting import ExponentFit, FitError
from .grid import FieldState, Field, s_norm
from .interactions import class_norm_report, interaction_decay_probe
from .phase_space import commutator_norm_probe, velocity_bound_sweep
from .propagators import dispersive_decay_probe
from .scattering import (BlowUpError, asymptotic_decomposition, causal_decomposition, channel_cutoffs,
                         channel_wave_operator, duhamel_residual, evolve, local_decay_probe,
                         propagation_observables, weak_localization_probe)
from .snapshots import atomic_write, encode_snapshot

logger = logging.getLogger(__name__)

# probe kinds run by each CLI subcommand; None runs the whole probe block
SUBCOMMAND_PROBES = {
    "simulate": {"class_norms", "duhamel"},
    "wave-op": {"channel", "observables", "interaction_decay", "class_norms", "duhamel"},
    "decay-check": {"dispersive_decay", "local_decay", "interaction_decay"},
    "commutator-check": {"commutator", "velocity_bound"},
    "decompose": {"channel", "decomposition", "observables"},
}
NEEDS_TRAJECTORY = {"duhamel", "channel", "observables", "interaction_decay", "decomposition",
                    "class_norms"}
OK_STATUS = ("pass", "converged")


def dyadic_times(start: float, t_max: float) -> list[float]:
    out, t = [], float(start)
    while t <= t_max * (1 + 1e-12):
        out.append(t)
        t *= 2
    return out


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items() if not isinstance(v, (FieldState, Field))}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, complex):
        return [_jsonable(x.real), _jsonable(x.imag)]
    return x


def _fmt(x) -> str:
    if x is None:
        return "nan"
    return "%.17g" % float(x)


def render_csv(anchor: str, rows) -> str:
    lines = [f"# anchor: {anchor}", "time,value,fitted_model_value"]
    lines += [f"{_fmt(t)},{_fmt(v)},{_fmt(m)}" for t, v, m in rows]
    return "\n".join(lines) + "\n"


def _fit_rows(fit: ExponentFit):
    fitted = fit.r2 > 0 and fit.verdict not in ("vanishing", "weak part negligible")
    return [(t, v, fit.model(t) if fitted else None) for t, v in zip(fit.times, fit.values)]


def _fit_status(fit: ExponentFit) -> str:
    if fit.verdict in ("pass", "vanishing"):
        return "pass"
    return fit.verdict if fit.verdict in ("fail", "inconclusive") else "inconclusive"


class ProbeResult:
    def __init__(self, status: str, anchor: str, rows, payload: dict):
        self.status = status
        self.anchor = anchor
        self.rows = rows
        self.payload = payload


# ---------------------------------------------------------------- probe runners

class _Context:
    def __init__(self, cfg: ExperimentConfig, traj=None):
        self.cfg = cfg
        self.grid = cfg.grid
        self.spec = cfg.potential
        self.initial = cfg.initial_state(self.grid)
        self.traj = traj
        self.reports: dict = {}
        run = cfg["run"]
        self.t_max = float(run["T_max"])
        self.dyadic = dyadic_times(float(run["dyadic_start"]), self.t_max)
        self.cut = cfg["cutoffs"]
        self.radius = max(data_radius(cfg["initial_data"], self.grid.dim),
                          self.spec.data_radius(self.t_max))


def _times(ctx: _Context, p: dict) -> list[float]:
    return [float(t) for t in p.get("times", ctx.dyadic)]


def _probe_dispersive(ctx, name, p):
    fit = dispersive_decay_probe(Field(ctx.grid, ctx.initial.u.values), _times(ctx, p),
                                 int(p.get("sign", 1)), float(p.get("tolerance", 0.1)),
                                 float(p.get("data_radius", ctx.radius)))
    status = "pass" if fit.extras["conforming"] else _fit_status(fit)
    return ProbeResult(status, fit.anchor, _fit_rows(fit), fit.to_dict())


def _probe_commutator(ctx, name, p):
    alpha = float(p.get("alpha", ctx.cut["alpha"]))
    kw = dict(width=float(p.get("width", ctx.cut["width"])),
              constant_space=bool(p.get("constant_space", False)),
              iterations=int(p.get("iterations", 200)), seed=ctx.cfg.probe_seed(name),
              tolerance=p.get("tolerance"))
    if p.get("beta") is not None:
        kw["beta"] = float(p["beta"])
    else:
        kw["b"] = float(p.get("b", ctx.cut["b"]))
    fit = commutator_norm_probe(ctx.grid, alpha, _times(ctx, p), **kw)
    return ProbeResult(_fit_status(fit), fit.anchor, _fit_rows(fit), fit.to_dict())


def _probe_velocity(ctx, name, p):
    fit = velocity_bound_sweep(ctx.grid, float(p.get("e", ctx.cut["e"])), float(p.get("b", ctx.cut["b"])),
                               float(p.get("delta", ctx.cut["delta"])),
                               [float(a) for a in p.get("a_values", [1, 4, 16, 64])],
                               float(p.get("t", 8.0)), p.get("direction", "outgoing_plus"))
    return ProbeResult(_fit_status(fit), fit.anchor, _fit_rows(fit), fit.to_dict())


def _probe_duhamel(ctx, name, p):
    traj = ctx.traj
    every = int(p.get("every", 1))
    times = [t for t in _times(ctx, p) if traj.has(t)]
    coarse = [duhamel_residual(traj, t, 2 * every) for t in times]
    fine = [duhamel_residual(traj, t, every) for t in times]
    ratios = [c / f if f > 0 else math.inf for c, f in zip(coarse, fine)]
    scale = s_norm(ctx.initial)
    lo, hi = p.get("ratio_band", [3.0, 5.0])
    if ctx.spec.is_empty:
        ok = max(fine) < 1e-10 * max(scale, 1.0)
    else:
        ok = all(lo <= r <= hi for r in ratios)
    payload = {"anchor": "duhamel_formula_residual", "times": times, "residual_fine": fine,
               "residual_coarse": coarse, "ratios": ratios, "every": every, "ratio_band": [lo, hi]}
    return ProbeResult("pass" if ok else "fail", payload["anchor"],
                       list(zip(times, fine, [None] * len(times))), payload)


def _channel(ctx, p, name):
    variant = p.get("variant", "thm1" if ctx.cfg["theorem"] in ("none", "thm1") else "thm2")
    cuts = channel_cutoffs(variant, float(p.get("alpha", ctx.cut["alpha"])),
                           float(p.get("beta", ctx.cut["beta"])), float(p.get("b", ctx.cut["b"])),
                           float(p.get("width", ctx.cut["width"])))
    times = _times(ctx, p)
    key = (variant, cuts, tuple(times), p.get("tol_abs"), p.get("rho", 0.75))
    if key not in ctx.reports:
        rep = channel_wave_operator(ctx.traj, cuts, times, variant, p.get("tol_abs"),
                                    float(p.get("rho", 0.75)), float(p.get("delta", ctx.cut["delta"])))
        ctx.reports[key] = rep
    return ctx.reports[key], cuts, variant


def _probe_channel(ctx, name, p):
    rep, _, _ = _channel(ctx, p, name)
    if rep.exploratory and not ctx.cfg["exploratory"]:
        logger.warning("channel cutoffs outside the theorem window: %s", rep.window_notes)
    status = rep.verdict
    payload = rep.to_dict()
    if ctx.spec.is_empty and p.get("free_control", True):
        # V = 0: every iterate should sit on the initial data up to the cutoff tails
        dist = rep.extras["last_iterate_L2_distance_to_initial"] if rep.variant == "thm1" \
            else rep.extras["last_iterate_distance_to_initial"]
        payload["free_control_distance"] = dist
        payload["free_control_ok"] = bool(dist < rep.tol_abs)
        if status == "converged" and not payload["free_control_ok"]:
            status = "fail"
    rows = [(t, d, None) for t, d in zip(rep.times[1:], rep.increments)]
    anchor = "theorem_thm1_channel_limit" if rep.variant == "thm1" else "theorem_thm2_channel_limit"
    payload["anchor"] = anchor
    return ProbeResult(status, anchor, rows, payload)


def _probe_observables(ctx, name, p):
    _, cuts, variant = _channel(ctx, p, name)
    log = propagation_observables(ctx.traj, cuts, _times(ctx, p), variant, p.get("tol"))
    ok = log.min_a1_a4() >= -1e-10 and log.bound_ok()
    rows = [(r["time"], min(r["A1"], r["A4"]), None) for r in log.rows]
    payload = log.to_dict()
    payload["min_A1_A4"] = log.min_a1_a4()
    payload["bound_ok"] = log.bound_ok()
    payload["anchor"] = "propagation_observable_signs"
    return ProbeResult("pass" if ok else "fail", payload["anchor"], rows, payload)


def _probe_interaction_decay(ctx, name, p):
    variant = p.get("variant", "can2_a0")
    times = _times(ctx, p)
    kw = dict(alpha=float(p.get("alpha", ctx.cut["alpha"])), beta=float(p.get("beta", ctx.cut["beta"])),
              b=float(p.get("b", ctx.cut["b"])), variant=variant, delta=float(p.get("delta", ctx.cut["delta"])),
              width=float(p.get("width", ctx.cut["width"])), tolerance=float(p.get("tolerance", 0.2)))
    fit_from = float(p.get("fit_from", times[0]))
    fit = interaction_decay_probe(ctx.traj, [t for t in times if t >= fit_from], **kw)
    payload = fit.to_dict()
    if fit_from > times[0]:
        full = interaction_decay_probe(ctx.traj, times, **kw)
        payload["full_range"] = full.to_dict()
    return ProbeResult(_fit_status(fit), fit.anchor, _fit_rows(fit), payload)


def _probe_decomposition(ctx, name, p):
    mode = p.get("mode", "causal")
    pp = dict(p)
    pp.setdefault("variant", "thm2")
    rep, cuts, _ = _channel(ctx, pp, name)
    times = _times(ctx, p)
    if mode == "causal":
        decs = [causal_decomposition(ctx.traj, cuts, t) for t in times]
    elif mode == "final":
        lim = None if rep.verdict == "converged" else rep.extras["last_iterate"]
        decs = [asymptotic_decomposition(ctx.traj, rep, t, lim) for t in times]
    else:
        raise ValueError(f"unknown decomposition mode {mode!r}")
    e = float(p.get("e", ctx.cut["e"]))
    fit = weak_localization_probe(decs, e, float(p.get("slack", 0.2)))
    floor = float(p.get("min_final_moment", 1e-3))
    payload = fit.to_dict()
    payload.update({"decomposition_mode": mode, "channel_verdict": rep.verdict, "min_final_moment": floor,
                    "final_moment": decs[-1].moment_u})
    status = _fit_status(fit)
    if status == "pass" and decs[-1].moment_u <= floor:
        status = "fail"
        payload["note"] = "weak part negligible at the final time"
    return ProbeResult(status, fit.anchor, _fit_rows(fit), payload)


def _probe_local_decay(ctx, name, p):
    anchor = float(p.get("anchor", -0.5 * ctx.t_max))
    second = p.get("second_anchor", 0.5 * anchor)
    fit = local_decay_probe(ctx.initial, ctx.spec, _times(ctx, p), float(p.get("dt", ctx.cfg["run"]["dt"])),
                            anchor, None if second is None else float(second),
                            float(p.get("alpha", ctx.cut["alpha"])), float(p.get("beta", ctx.cut["beta"])),
                            float(p.get("slack", 0.3)), float(p.get("data_radius", ctx.radius)))
    return ProbeResult(_fit_status(fit), fit.anchor, _fit_rows(fit), fit.to_dict())


def _probe_class_norms(ctx, name, p):
    rep = class_norm_report(ctx.spec, ctx.traj, float(p.get("delta", 1.5)))
    rows = [(t, v, None) for t, v in zip(rep["times"], rep["interaction_L2"])]
    rep["anchor"] = "interaction_class_norms"
    return ProbeResult("pass" if rep["verdict"] == "conforming" else "fail", rep["anchor"], rows, rep)


RUNNERS: dict[str, Callable] = {
    "dispersive_decay": _probe_dispersive,
    "commutator": _probe_commutator,
    "velocity_bound": _probe_velocity,
    "duhamel": _probe_duhamel,
    "channel": _probe_channel,
    "observables": _probe_observables,
    "interaction_decay": _probe_interaction_decay,
    "decomposition": _probe_decomposition,
    "local_decay": _probe_local_decay,
    "class_norms": _probe_class_norms,
}


# ---------------------------------------------------------------- pipeline

def _checkpoints(ctx: _Context, probes) -> list[float]:
    want = set(ctx.dyadic)
    for p in probes:
        for t in p.get("params", {}).get("times", []):
            if float(t) <= ctx.t_max:
                want.add(float(t))
    return sorted(want)


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[str] = None,
                   subcommand: Optional[str] = None) -> tuple[int, dict]:
    """Execute the pipeline and write ``report.json``, ``<probe>.csv`` and snapshots.

    Returns (exit status, report).  The status is 0 iff every required probe
    reports pass or converged.
    """
    out = out_dir or cfg["output"]["directory"]
    allowed = SUBCOMMAND_PROBES.get(subcommand) if subcommand else None
    probes = [p for p in cfg["probes"] if allowed is None or p["kind"] in allowed]
    ctx = _Context(cfg)
    run = cfg["run"]
    report = {"config": cfg.raw, "subcommand": subcommand or "run", "probes": {}, "abort": None}
    need_traj = subcommand == "simulate" or any(p["kind"] in NEEDS_TRAJECTORY for p in probes)
    if need_traj:
        try:
            ctx.traj = evolve(ctx.initial, ctx.spec, ctx.t_max, float(run["dt"]),
                              checkpoint_times=_checkpoints(ctx, probes), stride=run["checkpoint_stride"],
                              data_radius=ctx.radius, blowup_factor=float(run["blowup_factor"]))
        except BlowUpError as exc:
            ctx.traj = None
            report["abort"] = {"reason": str(exc),
                               "last_time": exc.trajectory.times[-1] if exc.trajectory else None}
            if exc.trajectory is not None:
                _write_monitors(out, exc.trajectory)
                _write_snapshots(out, exc.trajectory, cfg)
        if ctx.traj is not None:
            report["monitors"] = _monitor_summary(ctx.traj)
            _write_monitors(out, ctx.traj)
            if cfg["output"]["snapshots"] or subcommand == "simulate":
                _write_snapshots(out, ctx.traj, cfg)

    failed = []
    for p in probes:
        name = p.get("name", p["kind"])
        required = bool(p.get("required", True))
        if p["kind"] in NEEDS_TRAJECTORY and ctx.traj is None:
            res = ProbeResult("aborted", "", [], {"reason": "evolution aborted"})
        else:
            try:
                res = RUNNERS[p["kind"]](ctx, name, p.get("params", {}))
            except (ValueError, FitError) as exc:
                res = ProbeResult("error", "", [], {"error": str(exc)})
        report["probes"][name] = {"kind": p["kind"], "required": required, "status": res.status,
                                  "result": res.payload}
        if "csv" in cfg["output"]["formats"] and res.rows:
            atomic_write(os.path.join(out, f"{name}.csv"), render_csv(res.anchor, res.rows))
        if required and res.status not in OK_STATUS:
            failed.append(name)
    report["failed_required"] = failed
    report["exit_status"] = 1 if failed else 0
    report = _jsonable(report)
    if "json" in cfg["output"]["formats"]:
        atomic_write(os.path.join(out, "report.json"), dump_report(report))
    return report["exit_status"], report


def dump_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _monitor_summary(traj) -> dict:
    _, s = traj.monitor_series("s_norm")
    _, e = traj.monitor_series("energy")
    return {"steps": len(s) - 1, "s_norm_max": float(np.max(s)), "s_norm_final": float(s[-1]),
            "energy_initial": float(e[0]), "energy_final": float(e[-1]),
            "energy_relative_drift": float(abs(e[-1] - e[0]) / abs(e[0])) if e[0] else 0.0}


def _write_monitors(out: str, traj) -> None:
    t, s = traj.monitor_series("s_norm")
    lines = ["# anchor: s_norm_monitor", "time,value,fitted_model_value"]
    lines += [f"{_fmt(a)},{_fmt(b)},nan" for a, b in zip(t, s)]
    atomic_write(os.path.join(out, "s_norm_monitor.csv"), "\n".join(lines) + "\n")


def _write_snapshots(out: str, traj, cfg: ExperimentConfig) -> None:
    for t in traj.times:
        atomic_write(os.path.join(out, "snapshots", f"t_{t:012.6f}.bin"), encode_snapshot(traj.state(t), t))
