import numpy as np
import pytest
from hypothesis import given, strategies as st

from kgscatter.grid import Field, FieldState, make_grid, s_norm
from kgscatter.propagators import (dispersive_decay_probe, evolve_via_half_waves, free_energy, free_evolve,
                                   half_wave_evolve, max_group_velocity)


def test_plane_wave_is_exact():
    # a single lattice mode e^{ikx} evolves by cos/sin of w t exactly
    g = make_grid(1, 2 * np.pi * 4, 32)
    x = g.coords[0]
    k = 3 * g.dk
    w = np.sqrt(k * k + 1)
    st_ = FieldState.from_arrays(g, np.exp(1j * k * x))
    out = free_evolve(st_, 2.7)
    assert np.allclose(out.u.values, np.cos(w * 2.7) * np.exp(1j * k * x), atol=1e-12)
    assert np.allclose(out.udot.values, -w * np.sin(w * 2.7) * np.exp(1j * k * x), atol=1e-12)


def test_zero_time_is_identity(gaussian1):
    out = free_evolve(gaussian1, 0.0)
    assert np.array_equal(out.u.values, gaussian1.u.values)


def test_nan_rejected(grid1):
    bad = FieldState.from_arrays(grid1, np.full(grid1.shape, np.nan))
    with pytest.raises(ValueError):
        free_evolve(bad, 1.0)
    with pytest.raises(ValueError):
        half_wave_evolve(Field(grid1, np.full(grid1.shape, np.nan + 0j)), 1.0)


def test_half_wave_route_matches(gaussian1):
    a = free_evolve(gaussian1, 3.3)
    b = evolve_via_half_waves(gaussian1, 3.3)
    assert s_norm(a - b) < 1e-12 * s_norm(a)


def test_half_wave_group_is_unitary(grid1, gaussian1):
    f = gaussian1.u
    g = half_wave_evolve(f, 5.0, -1)
    assert np.linalg.norm(g.values) == pytest.approx(np.linalg.norm(f.values), rel=1e-13)
    back = half_wave_evolve(g, 5.0, +1)
    assert np.allclose(back.values, f.values, atol=1e-13)
    with pytest.raises(ValueError):
        half_wave_evolve(f, 1.0, 2)


@given(st.floats(-20, 20), st.floats(-20, 20))
def test_group_law(s, t):
    g = make_grid(1, 40.0, 128)
    x = g.coords[0]
    st_ = FieldState.from_arrays(g, np.exp(-x ** 2), np.exp(-(x - 1) ** 2))
    a = free_evolve(free_evolve(st_, s), t)
    b = free_evolve(st_, s + t)
    assert s_norm(a - b) <= 1e-10 * s_norm(st_)


@given(st.floats(-50, 50))
def test_energy_conserved(t):
    g = make_grid(1, 40.0, 128)
    x = g.coords[0]
    st_ = FieldState.from_arrays(g, np.exp(-x ** 2), np.sin(x) * np.exp(-x ** 2))
    assert free_energy(free_evolve(st_, t)) == pytest.approx(free_energy(st_), rel=1e-12)


def test_group_velocity_below_one():
    assert 0 < max_group_velocity(make_grid(1, 10.0, 1024)) < 1


def test_dispersive_probe_window_and_inputs(grid1, gaussian1):
    with pytest.raises(ValueError):
        dispersive_decay_probe(gaussian1.u, [1, 2, 4], 1)
    with pytest.raises(ValueError):
        dispersive_decay_probe(gaussian1.u, [1, 2, 4, 32], 1)
    with pytest.raises(ValueError):
        dispersive_decay_probe(gaussian1.u, [0.5, 2, 4, 8], 1)


def test_dispersive_decay_1d_short():
    g = make_grid(1, 200.0, 2048)
    x = g.coords[0]
    fit = dispersive_decay_probe(Field(g, np.exp(-x ** 2 / 2) + 0j), [4, 8, 16, 32, 64], data_radius=4)
    assert fit.slope == pytest.approx(-0.5, abs=0.1)
    assert fit.extras["conforming"]
