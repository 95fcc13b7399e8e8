import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from kgscatter.grid import FieldState, make_grid, s_norm
from kgscatter.interactions import NonlinearLocal, PotentialSpec, Profile, StaticLocalized
from kgscatter.propagators import free_evolve
from kgscatter.scattering import (BlowUpError, CheckpointError, Decomposition, causal_decomposition, certify, channel_cutoffs,
                                  channel_wave_operator, dense_generator, duhamel_residual, evolve,
                                  local_decay_probe, omega_star, omega_star_duhamel, potential_on_grid,
                                  propagate, propagation_observables, weak_localization_probe)

G = make_grid(1, 40.0, 256)
X = G.coords[0]
U0 = FieldState.from_arrays(G, np.exp(-X ** 2 / 2))
BUMP = PotentialSpec([StaticLocalized(Profile("gaussian", 1.0))])


def test_free_evolution_matches_exact_flow():
    tr = evolve(U0, PotentialSpec(), 5.0, 0.1)
    assert s_norm(tr.state(5.0) - free_evolve(U0, 5.0)) < 1e-12


def test_strang_against_matrix_exponential():
    g = make_grid(1, 16.0, 32)
    x = g.coords[0]
    spec = PotentialSpec([StaticLocalized(Profile("gaussian", 0.5))])
    st_ = FieldState.from_arrays(g, np.exp(-x ** 2))
    gen = dense_generator(g, potential_on_grid(spec, g))
    ref = expm(gen) @ np.concatenate([st_.u.values, st_.udot.values])
    errs = []
    for dt in (0.02, 0.01):
        out = evolve(st_, spec, 1.0, dt).state(1.0)
        errs.append(s_norm(out - FieldState.from_arrays(g, ref[:32], ref[32:])))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_backward_propagation_inverts_forward():
    st_ = propagate(U0, BUMP, 0.0, 2.0, 0.01)
    back = propagate(st_, BUMP, 2.0, 0.0, 0.01)
    assert s_norm(back - U0) < 1e-10


def test_checkpoint_handling():
    tr = evolve(U0, BUMP, 2.0, 0.1, checkpoint_times=[0.5, 1.3])
    assert tr.times == [0.0, 0.5, 1.3, 2.0]
    with pytest.raises(CheckpointError):
        tr.state(0.7)
    with pytest.raises(ValueError):
        evolve(U0, BUMP, 2.0, 0.3)
    with pytest.raises(ValueError):
        evolve(U0, BUMP, 2.0, 0.1, checkpoint_times=[3.0])


def test_validity_window_guard():
    with pytest.raises(ValueError):
        evolve(U0, BUMP, 18.0, 0.1, data_radius=4.0)


def test_blowup_guard_keeps_partial_trajectory():
    # a deep well has a growing mode
    well = PotentialSpec([StaticLocalized(Profile("gaussian", -40.0))])
    with pytest.raises(BlowUpError) as info:
        evolve(U0, well, 20.0, 0.01, stride=10, blowup_factor=10.0)
    assert info.value.trajectory is not None
    assert len(info.value.trajectory.times) > 1


def test_energy_monitor_for_static_potential():
    tr = evolve(U0, BUMP, 4.0, 0.01)
    _, e = tr.monitor_series("energy")
    assert np.max(np.abs(e - e[0])) / e[0] < 1e-3


def test_two_omega_star_forms_agree():
    tr = evolve(U0, BUMP, 2.0, 0.01, stride=1)
    a = omega_star(tr, 2.0)
    b = omega_star_duhamel(tr, 2.0)
    assert s_norm(a - b) < 1e-10


def test_duhamel_residual_second_order():
    tr = evolve(U0, BUMP, 2.0, 0.01, stride=1)
    ratio = duhamel_residual(tr, 2.0, 10) / duhamel_residual(tr, 2.0, 5)
    assert 3.0 <= ratio <= 5.0
    assert duhamel_residual(tr, 2.0, 1) < 1e-10
    with pytest.raises(CheckpointError):
        duhamel_residual(evolve(U0, BUMP, 1.0, 0.1), 1.0)


def test_certify_verdicts():
    assert certify([1e-2, 5e-3, 2e-3, 1e-3], 1e-2)[0] == "converged"
    assert certify([1e-2, 2e-2, 4e-2, 8e-2], 1e-3)[0] == "diverging"
    assert certify([1e-2, 9e-3, 8.5e-3, 8e-3], 1e-1)[0] == "inconclusive"
    # increments at roundoff are converged even when their ratios wobble
    assert certify([1e-3, 1e-16, 3e-16, 2e-16], 1e-2, scale=1.0)[0] == "converged"


def test_channel_free_control_converges():
    g = make_grid(1, 80.0, 64)
    x = g.coords[0]
    u0 = FieldState.from_arrays(g, np.exp(-x ** 2 / 2))
    tr = evolve(u0, PotentialSpec(), 32.0, 0.5, checkpoint_times=[4, 8, 16, 32])
    rep = channel_wave_operator(tr, channel_cutoffs("thm1", 1.0, 1.0), [4, 8, 16, 32])
    assert rep.verdict == "converged"
    assert rep.exploratory
    assert rep.extras["last_iterate_L2_distance_to_initial"] < rep.tol_abs
    with pytest.raises(ValueError):
        channel_wave_operator(tr, channel_cutoffs("thm1", 1.0, 1.0), [4, 8, 32, 64])


def test_propagation_observable_signs():
    tr = evolve(U0, BUMP, 16.0, 0.05, checkpoint_times=[1, 2, 4, 8, 16])
    for variant, cuts in (("thm1", channel_cutoffs("thm1", 0.5, beta=0.3)),
                          ("thm2", channel_cutoffs("thm2", 0.5, b=0.3))):
        log = propagation_observables(tr, cuts, [1, 2, 4, 8, 16], variant)
        assert log.min_a1_a4() >= -1e-10
        assert log.bound_ok()


@given(st.sampled_from([1.0, 2.0, 4.0]))
def test_causal_split_reassembles_state(t):
    tr = _small_nonlinear_traj()
    d = causal_decomposition(tr, channel_cutoffs("thm2", 0.5, b=0.48), t)
    assert s_norm(d.free_part + d.weak_part - tr.state(t)) < 1e-12
    assert d.moment_u >= 0 and d.moment_v >= 0


_CACHE = {}


def _small_nonlinear_traj():
    if "tr" not in _CACHE:
        spec = PotentialSpec([StaticLocalized(Profile("gaussian", 0.5)),
                              NonlinearLocal(Profile("odd_bracket", 0.5, 3.0), Profile("bracket", 0.5, 3.0))])
        _CACHE["tr"] = evolve(FieldState.from_arrays(G, X * np.exp(-X ** 2 / 2)), spec, 4.0, 0.02,
                              checkpoint_times=[1, 2, 4])
    return _CACHE["tr"]


def test_weak_localization_negligible_case():
    z = FieldState.from_arrays(G, np.zeros(G.shape))
    decs = [Decomposition(t, z, z, 0.0, 0.0, 0.0, 0.0, 0.0) for t in (1.0, 2.0, 4.0, 8.0)]
    fit = weak_localization_probe(decs, 0.55)
    assert fit.verdict == "weak part negligible"
    with pytest.raises(ValueError):
        weak_localization_probe(decs[:3], 0.55)


def test_weak_localization_fits_moment_growth():
    z = FieldState.from_arrays(G, np.zeros(G.shape))
    decs = [Decomposition(t, z, z, 0.1 * t ** 0.5, 0.0, 0.0, 0.0, 0.0) for t in (1.0, 2.0, 4.0, 8.0)]
    fit = weak_localization_probe(decs, 0.55)
    assert fit.slope == pytest.approx(0.5) and fit.verdict == "pass"


def test_local_decay_probe_requires_three_dimensions():
    with pytest.raises(ValueError):
        local_decay_probe(U0, PotentialSpec(), [1, 2, 4, 8], 0.1, -4.0)
