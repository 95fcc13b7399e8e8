"""Plain-text rendering of report.json."""
from __future__ import annotations

import json


def _num(x) -> str:
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        return f"{x:.4g}"
    return str(x)


def _summary(kind: str, res: dict) -> str:
    if "slope" in res:
        s = f"slope {_num(res['slope'])} (target {_num(res.get('target_slope'))}, {res.get('mode')}" \
            f" tol {_num(res.get('tolerance'))}), R^2 {_num(res.get('r2'))}"
        if "final_moment" in res:
            s += f", final moment {_num(res['final_moment'])}"
        return s
    if kind == "channel":
        inc = ", ".join(_num(x) for x in res.get("increments", [])[-3:])
        rat = ", ".join(_num(x) for x in res.get("ratios", [])[-3:])
        return f"{res.get('verdict')}: last increments [{inc}], ratios [{rat}], tol_abs {_num(res.get('tol_abs'))}"
    if kind == "duhamel":
        return "ratios " + ", ".join(_num(r) for r in res.get("ratios", []))
    if kind == "observables":
        return f"min A1/A4 {_num(res.get('min_A1_A4'))}, |<B1>| bound {'ok' if res.get('bound_ok') else 'violated'}"
    if kind == "class_norms":
        return f"{res.get('verdict')}, sup ||(V+N)u|| {_num(res.get('sup_interaction_L2'))}"
    if "error" in res:
        return "error: " + res["error"]
    return ""


def render_report(report: dict) -> str:
    cfg = report.get("config", {})
    g = cfg.get("grid", {})
    lines = [f"experiment: {report.get('subcommand')}  theorem={cfg.get('theorem')}  "
             f"dim={g.get('dim')} L={g.get('L')} N={g.get('N')}  seed={cfg.get('seed')}"]
    if report.get("abort"):
        lines.append(f"ABORTED: {report['abort'].get('reason')}")
    mon = report.get("monitors")
    if mon:
        lines.append(f"steps {mon['steps']}, max S-norm {_num(mon['s_norm_max'])}, "
                     f"energy drift {_num(mon['energy_relative_drift'])}")
    for name in sorted(report.get("probes", {})):
        p = report["probes"][name]
        flag = "required" if p.get("required") else "optional"
        lines.append(f"  [{p['status']:>12}] {name} ({p['kind']}, {flag}) {_summary(p['kind'], p['result'])}")
    lines.append(f"exit status {report.get('exit_status')}")
    return "\n".join(lines) + "\n"


def render_report_file(path) -> str:
    with open(path) as fh:
        return render_report(json.load(fh))
