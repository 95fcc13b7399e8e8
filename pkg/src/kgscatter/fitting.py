"""Log-log power-law fits for the decay and growth laws."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

MIN_R2 = 0.9


class FitError(ValueError):
    pass


@dataclass
class ExponentFit:
    times: list[float]
    values: list[float]
    slope: float
    intercept: float
    r2: float
    target_slope: Optional[float] = None
    tolerance: Optional[float] = None
    # "upper" means pass iff slope <= target + tolerance; "band" means |slope - target| <= tolerance
    mode: str = "band"
    anchor: str = ""
    verdict: str = "unjudged"
    extras: dict = field(default_factory=dict)

    def model(self, t: float) -> float:
        return float(np.exp(self.intercept) * t ** self.slope)

    def to_dict(self) -> dict:
        return {
            "anchor": self.anchor,
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
            "target_slope": self.target_slope,
            "tolerance": self.tolerance,
            "mode": self.mode,
            "verdict": self.verdict,
            "samples": [[t, v] for t, v in zip(self.times, self.values)],
            "extras": self.extras,
        }


def _judge(fit: ExponentFit) -> str:
    if fit.target_slope is None:
        return "unjudged"
    if fit.r2 < MIN_R2:
        return "inconclusive"
    tol = fit.tolerance or 0.0
    if fit.mode == "upper":
        ok = fit.slope <= fit.target_slope + tol
    else:
        ok = abs(fit.slope - fit.target_slope) <= tol
    return "pass" if ok else "fail"


def fit_exponent(samples: Sequence[tuple[float, float]], target_slope: Optional[float] = None,
                 tolerance: Optional[float] = None, mode: str = "band",
                 anchor: str = "") -> ExponentFit:
    """Least squares of log(value) against log(t).

    Needs at least four samples with t >= 1 and positive values.  A response
    with zero variance is a perfect fit (R^2 = 1).  When ``target_slope`` is
    given the fit is judged; an R^2 below 0.9 is "inconclusive", never a pass.
    """
    if len(samples) < 4:
        raise FitError(f"need at least 4 samples, got {len(samples)}")
    t = np.array([s[0] for s in samples], dtype=float)
    v = np.array([s[1] for s in samples], dtype=float)
    if np.any(t < 1):
        raise FitError("sample times must be >= 1")
    if np.any(~np.isfinite(v)) or np.any(v <= 0):
        raise FitError("sample values must be finite and positive")
    x, y = np.log(t), np.log(v)
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx == 0:
        raise FitError("sample times must not all coincide")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    ss_tot = float(np.sum((y - ym) ** 2))
    ss_res = float(np.sum((y - (intercept + slope * x)) ** 2))
    r2 = 1.0 if ss_tot <= 1e-28 * max(1.0, float(np.sum(y ** 2))) else 1.0 - ss_res / ss_tot
    fit = ExponentFit(list(map(float, t)), list(map(float, v)), slope, intercept, float(r2),
                      target_slope, tolerance, mode, anchor)
    fit.verdict = _judge(fit)
    return fit
