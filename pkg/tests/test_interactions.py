import numpy as np
import pytest
from hypothesis import given, strategies as st

from kgscatter.grid import FieldState, make_grid
from kgscatter.interactions import (MovingBump, NonlinearLocal, NonlinearPower, PotentialSpec, Profile, SpecError,
                                    StaticLocalized, TimeModulated, can1_exponent, evaluate_interaction,
                                    interaction_class, potential_field)

G = make_grid(1, 40.0, 128)
X = G.coords[0]


def _state(u):
    return FieldState.from_arrays(G, u)


def test_static_gaussian_values():
    spec = PotentialSpec([StaticLocalized(Profile("gaussian", 0.7, rho=2.0))])
    assert np.allclose(potential_field(spec, G, 3.0), 0.7 * np.exp(-X ** 2 / 4))


def test_moving_bump_tracks_center():
    spec = PotentialSpec([MovingBump(Profile("gaussian", 1.0), (0.5,))])
    v = potential_field(spec, G, 10.0)
    assert X[np.argmax(v)] == pytest.approx(5.0, abs=G.spacing)


def test_sin_modulated_trajectory():
    mb = MovingBump(Profile("gaussian", 1.0), (0.5,), "sin_modulated", 0.3, 2.0)
    assert mb.g(1.0) == pytest.approx(1.0 + 0.3 * np.sin(2.0))


def test_time_modulation():
    tm = TimeModulated(Profile("bracket", 1.0, sigma=3.0), "one_plus_eps_cos", 2.0, 0.5)
    assert tm.factor(0.0) == 1.5
    assert TimeModulated(Profile(), "cos", 1.0).factor(np.pi) == pytest.approx(-1.0)


@pytest.mark.parametrize("make", [
    lambda: MovingBump(Profile(), (1.0,)),
    lambda: NonlinearLocal(Profile("bracket", sigma=2.0), None, 2.5),
    lambda: NonlinearLocal(None, None, 1.5),
    lambda: NonlinearPower(1.0, 0.5),
    lambda: Profile("square"),
    lambda: Profile("gaussian", rho=0.0),
])
def test_invalid_terms(make):
    with pytest.raises(SpecError):
        make()


def test_power_bound_in_3d():
    with pytest.raises(SpecError):
        PotentialSpec([NonlinearPower(1.0, 3.5)]).validate_for_dim(3)
    PotentialSpec([NonlinearPower(1.0, 3.0)]).validate_for_dim(3)


def test_empty_spec_gives_zero():
    out = evaluate_interaction(PotentialSpec(), _state(np.exp(-X ** 2)), 0.0)
    assert np.all(out.values == 0)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_linear_terms_are_linear(a, b):
    spec = PotentialSpec([StaticLocalized(Profile("gaussian", 0.5)), TimeModulated(Profile("bracket", 1, 3.0), "cos")])
    f, h = np.exp(-X ** 2), np.sin(X) * np.exp(-X ** 2 / 4)
    lhs = evaluate_interaction(spec, _state(a * f + b * h), 1.3).values
    rhs = a * evaluate_interaction(spec, _state(f), 1.3).values + b * evaluate_interaction(spec, _state(h), 1.3).values
    assert np.allclose(lhs, rhs, atol=1e-12)


@given(st.floats(0.1, 4.0))
def test_cubic_power_homogeneity(lam):
    spec = PotentialSpec([NonlinearPower(1.0, 3.0)])
    f = np.exp(-X ** 2)
    a = evaluate_interaction(spec, _state(lam * f), 0.0).values
    assert np.allclose(a, lam ** 3 * evaluate_interaction(spec, _state(f), 0.0).values, rtol=1e-12, atol=1e-14)


@given(st.floats(0.1, 4.0))
def test_local_quadratic_cubic_scaling(lam):
    spec = PotentialSpec([NonlinearLocal(Profile("bracket", 1.0, 3.0), None, 2.5)])
    f = np.exp(-X ** 2)
    a = evaluate_interaction(spec, _state(lam * f), 0.0).values
    assert np.allclose(a, lam ** 2 * evaluate_interaction(spec, _state(f), 0.0).values, rtol=1e-12, atol=1e-14)


def test_class_membership():
    static = PotentialSpec([StaticLocalized(Profile("bracket", 1.0, sigma=4.0))])
    assert interaction_class(static, 3, 1.5) == {"class1": True, "class2": True, "delta": 1.5}
    moving = PotentialSpec([MovingBump(Profile("gaussian"), (0.3, 0, 0))])
    assert interaction_class(moving, 3)["class1"] is False
    slow = PotentialSpec([StaticLocalized(Profile("bracket", 1.0, sigma=1.0))])
    assert interaction_class(slow, 3)["class2"] is False


def test_can1_exponent():
    assert can1_exponent(0.3, 2.5, 1) == pytest.approx(0.225)
    assert can1_exponent(0.1, 2.5, 3) == pytest.approx(0.75)
