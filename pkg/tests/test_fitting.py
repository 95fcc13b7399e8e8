import numpy as np
import pytest
from hypothesis import given, strategies as st

from kgscatter.fitting import FitError, fit_exponent


def test_exact_power_law():
    t = [1, 2, 4, 8, 16]
    f = fit_exponent([(s, s ** -2.0) for s in t])
    assert f.slope == pytest.approx(-2.0, abs=1e-10)
    assert f.r2 == pytest.approx(1.0)


def test_constant_values_have_unit_r2():
    f = fit_exponent([(s, 3.0) for s in (1, 2, 3, 4)])
    assert f.slope == pytest.approx(0.0, abs=1e-14)
    assert f.r2 == 1.0


def test_log_periodic_perturbation():
    t = np.geomspace(1, 64, 13)
    f = fit_exponent([(s, s ** -1 * (1 + 0.1 * np.sin(np.log(s)))) for s in t], -1.0, 0.1)
    assert abs(f.slope + 1) <= 0.1
    assert f.r2 >= 0.9
    assert f.verdict == "pass"


@pytest.mark.parametrize("samples", [
    [(1, 1), (2, 1), (3, 1)],
    [(0.5, 1), (2, 1), (3, 1), (4, 1)],
    [(1, 1), (2, 0), (3, 1), (4, 1)],
    [(1, 1), (2, -1), (3, 1), (4, 1)],
])
def test_rejects_bad_samples(samples):
    with pytest.raises(FitError):
        fit_exponent(samples)


def test_low_r2_is_inconclusive():
    f = fit_exponent([(1, 1), (2, 10), (4, 0.1), (8, 5)], -1.0, 5.0)
    assert f.r2 < 0.9
    assert f.verdict == "inconclusive"


def test_upper_mode():
    s = [(t, t ** -3.0) for t in (1, 2, 4, 8)]
    assert fit_exponent(s, -1.0, 0.0, "upper").verdict == "pass"
    assert fit_exponent(s, -4.0, 0.5, "upper").verdict == "fail"


@given(st.floats(-4, 4), st.floats(0.1, 10))
def test_recovers_slope_and_amplitude(p, c):
    t = [1, 2, 4, 8, 16, 32]
    f = fit_exponent([(s, c * s ** p) for s in t])
    assert f.slope == pytest.approx(p, abs=1e-9)
    assert f.model(5.0) == pytest.approx(c * 5.0 ** p, rel=1e-8)


@given(st.floats(-3, 3))
def test_fit_is_invariant_under_scaling_time(p):
    base = [(t, t ** p) for t in (1, 2, 4, 8)]
    shifted = [(3 * t, (3 * t) ** p) for t in (1, 2, 4, 8)]
    assert fit_exponent(base).slope == pytest.approx(fit_exponent(shifted).slope, abs=1e-9)
