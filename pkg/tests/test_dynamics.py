import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIG3, FIG4, random_density_matrix, random_params
from thermalep.dynamics import (
    Damping,
    InitialKind,
    Provenance,
    Trajectory,
    check_density_matrix,
    classify_damping,
    count_crossings,
    default_step,
    default_time_grid,
    fig2_initial_states,
    first_extremum_index,
    initial_state,
    max_positive_scale,
    overlap_coefficients,
    propagate,
    propagate_expm,
    propagate_ode,
    propagate_spectral,
    propagate_spectral_ep,
    ratio_R,
    steady_state,
    trace_distance,
)
from thermalep.errors import (
    ClassificationError,
    DefectiveSpectrumError,
    IntegrationError,
    InvalidStateError,
    NotAnEPError,
    SubspaceError,
)
from thermalep.model import Regime, build_liouvillian, build_reduced_liouvillian, derived_rates
from thermalep.observables import concurrence
from thermalep.spectral import analytic_steady_state, jordan_chain, numeric_spectral_data


def at_gbar(p):
    return p.replace(g=derived_rates(p).g_bar)


# trace distance --------------------------------------------------------------
def test_trace_distance_basic():
    g = initial_state("ground", FIG3)
    e = np.diag([1, 0, 0, 0]).astype(complex)
    assert trace_distance(g, g) == 0
    assert trace_distance(g, e) == pytest.approx(1)


def test_trace_distance_metric(rng):
    for _ in range(100):
        a, b, c = (random_density_matrix(rng) for _ in range(3))
        dab = trace_distance(a, b)
        assert 0 <= dab <= 1 + 1e-12
        assert dab == pytest.approx(trace_distance(b, a), abs=1e-14)
        assert dab <= trace_distance(a, c) + trace_distance(c, b) + 1e-12


# initial states --------------------------------------------------------------
def test_named_initial_states():
    np.testing.assert_array_equal(initial_state("ground", FIG3), np.diag([0, 0, 0, 1]))
    singlet = initial_state(InitialKind.SINGLET, FIG3)
    assert concurrence(singlet) == pytest.approx(1, abs=1e-12)
    hot = initial_state("thermal_product", FIG3.replace(T1=1e6, T2=1e6))
    np.testing.assert_allclose(hot, np.eye(4) / 4, atol=1e-6)
    for kind in InitialKind:
        check_density_matrix(initial_state(kind, FIG3))


def test_ep_subspace_states_are_valid():
    states = fig2_initial_states(FIG3)
    assert len(states) == 3
    jd = jordan_chain(at_gbar(FIG3))
    for rho in states:
        check_density_matrix(rho)
        c = overlap_coefficients(jd, rho)
        # only the steady state and the generalized vectors are populated
        assert np.abs(c.values[1 : jd.mode_right.shape[1]]).max() < 1e-12
        assert abs(c["rho4"]) < 1e-12


def test_max_positive_scale():
    base = np.eye(4) / 4
    direction = np.diag([1.0, -1.0, 0, 0])
    assert max_positive_scale(base, direction) == pytest.approx(0.25, rel=1e-10)
    with pytest.raises(InvalidStateError):
        max_positive_scale(-base, direction)


def test_check_density_matrix_rejects():
    with pytest.raises(InvalidStateError):
        check_density_matrix(np.diag([1.2, -0.2, 0, 0]))
    with pytest.raises(InvalidStateError):
        check_density_matrix(np.eye(4) / 2)


# overlaps --------------------------------------------------------------------
def test_overlaps_of_steady_state_vanish():
    sd = numeric_spectral_data(build_reduced_liouvillian(FIG3, 6))
    c = overlap_coefficients(sd, analytic_steady_state(FIG3))
    assert c[0] == pytest.approx(1, abs=1e-12)
    assert np.abs(c.values[1:]).max() < 1e-12


def test_overlap_picks_single_mode():
    sd = numeric_spectral_data(build_reduced_liouvillian(FIG3, 6))
    k = 4
    rho = analytic_steady_state(FIG3) + 0.1 * sd.right[k]
    c = overlap_coefficients(sd, rho).values
    assert c[k] == pytest.approx(0.1, abs=1e-12)
    assert np.abs(np.delete(c, [0, k])).max() < 1e-12


def test_overlap_matches_direct_inner_product(rng):
    L = build_liouvillian(FIG3, 16)
    sd = numeric_spectral_data(L)
    rho = random_density_matrix(rng)
    c = overlap_coefficients(sd, rho).values
    direct = [np.trace(s.conj().T @ rho) for s in sd.left]
    np.testing.assert_allclose(c, direct, atol=1e-12)


def test_ground_state_has_rho_pp_component():
    c = overlap_coefficients(jordan_chain(at_gbar(FIG3)), initial_state("ground", FIG3))
    assert abs(c["rho_pp"]) > 1e-6


def test_subspace_violation():
    sd = numeric_spectral_data(build_reduced_liouvillian(FIG3, 6))
    rho = np.eye(4, dtype=complex) / 4
    rho[0, 3] = rho[3, 0] = 0.1
    with pytest.raises(SubspaceError):
        overlap_coefficients(sd, rho)


# propagation -----------------------------------------------------------------
def test_spectral_reconstructs_at_t0_and_relaxes(rng):
    p = random_params(rng)
    rho0 = random_density_matrix(rng)
    sd = numeric_spectral_data(build_liouvillian(p, 16))
    G = derived_rates(p).Gamma
    traj = propagate_spectral(rho0, [0.0, 50 / G], sd)
    np.testing.assert_allclose(traj.states[0], rho0, atol=1e-10)
    assert trace_distance(traj.states[1], steady_state(p)) < 1e-8
    assert traj.provenance is Provenance.SPECTRAL


def test_spectral_refuses_defective():
    sd = numeric_spectral_data(build_reduced_liouvillian(at_gbar(FIG3), 6))
    with pytest.raises(DefectiveSpectrumError):
        propagate_spectral(initial_state("ground", FIG3), [1.0], sd)


def test_ode_stationary_and_trace():
    L = build_liouvillian(FIG3, 16)
    rss = steady_state(FIG3)
    G = derived_rates(FIG3).Gamma
    t = np.linspace(0, 10 / G, 11)[1:]
    traj = propagate_ode(L, rss, t)
    assert max(trace_distance(r, rss) for r in traj.states) < 1e-10
    traj = propagate_ode(L, initial_state("ground", FIG3), t)
    assert max(abs(np.trace(r) - 1) for r in traj.states) < 1e-10


def test_ode_step_halving_and_loop_mode():
    L = build_reduced_liouvillian(FIG3, 6)
    rho0 = initial_state("singlet", FIG3)
    h = default_step(L)
    a = propagate_ode(L, rho0, [5.0], h=h).states[-1]
    b = propagate_ode(L, rho0, [5.0], h=h / 2).states[-1]
    c = propagate_ode(L, rho0, [5.0], h=h, mode="loop").states[-1]
    assert np.abs(a - b).max() < 1e-10
    assert np.abs(a - c).max() < 1e-13


def test_ode_errors():
    L = build_reduced_liouvillian(FIG3, 6)
    rho0 = initial_state("ground", FIG3)
    with pytest.raises(IntegrationError):
        propagate_ode(L, rho0, [1.0], h=0.0)
    with pytest.raises(IntegrationError):
        propagate_ode(L, rho0, [1e6], h=1e-3, max_steps=10)
    with pytest.raises(ValueError):
        propagate_ode(L, rho0, [2.0, 1.0])


def test_ep_path_matches_oracles():
    pe = at_gbar(FIG3)
    jd = jordan_chain(pe, 16)
    rho0 = initial_state("singlet", FIG3)
    G = derived_rates(pe).Gamma
    t = np.linspace(0, 5 / G, 21)[1:]
    ep = propagate_spectral_ep(rho0, t, jd)
    ode = propagate_ode(jd.liouvillian, rho0, t)
    ex = propagate_expm(jd.liouvillian, rho0, t)
    assert ep.provenance is Provenance.SPECTRAL_EP
    for other in (ode, ex):
        assert max(trace_distance(a, b) for a, b in zip(ep.states, other.states)) < 1e-10


def test_ep_path_pure_exponential_without_generalized_components():
    jd = jordan_chain(at_gbar(FIG3))
    rss = jd.steady_state
    rho0 = rss + 0.05 * jd.liouvillian.unvec(jd.rho4)
    G = derived_rates(jd.params).Gamma
    t = np.linspace(0.5, 3 / G, 25)
    d = propagate_spectral_ep(rho0, t, jd).distances_to(rss)
    np.testing.assert_allclose(d * np.exp(G * t / 2), d[0] * np.exp(G * t[0] / 2), rtol=1e-10)


def test_ep_path_rejects_foreign_params():
    jd = jordan_chain(at_gbar(FIG3))
    with pytest.raises(NotAnEPError):
        propagate_spectral_ep(initial_state("ground", FIG3), [1.0], jd, params=FIG3)


def test_dispatcher_routes(rng):
    rho0 = initial_state("ground", FIG3)
    assert propagate(FIG3, rho0, [1.0, 2.0]).provenance is Provenance.SPECTRAL
    assert propagate(at_gbar(FIG3), rho0, [1.0]).provenance is Provenance.SPECTRAL_EP
    near = FIG3.replace(g=derived_rates(FIG3).g_bar - 1e-8)
    assert propagate(near, rho0, [1.0]).provenance is Provenance.EXPM
    assert propagate(FIG3, rho0, [1.0], method="ode").provenance is Provenance.ODE
    with pytest.raises(NotAnEPError):
        propagate(FIG3, rho0, [1.0], method="jordan")
    with pytest.raises(DefectiveSpectrumError):
        propagate(at_gbar(FIG3), rho0, [1.0], method="spectral")
    glob = random_params(rng, regime=Regime.GLOBAL)
    assert propagate(glob, rho0, [1.0]).provenance is Provenance.SPECTRAL


def test_switch_band_accuracy():
    # both sides of the eta switch agree with the ODE oracle
    gbar = derived_rates(FIG3).g_bar
    rho0 = initial_state("ground", FIG3)
    G = derived_rates(FIG3).Gamma
    t = np.linspace(0, 5 / G, 11)[1:]
    for dg in (1e-4, 1e-7, 1e-9, 1e-11):
        p = FIG3.replace(g=gbar - dg)
        a = propagate(p, rho0, t, dim=6)
        b = propagate_ode(build_reduced_liouvillian(p, 6), rho0, t)
        assert max(trace_distance(x, y) for x, y in zip(a.states, b.states)) < 1e-8


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_propagation_preserves_states(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng)
    rho0 = random_density_matrix(rng)
    traj = propagate(p, rho0, default_time_grid(p, 40))
    traj.validate()


def test_trajectory_rejects_bad_grid():
    with pytest.raises(ValueError):
        Trajectory(np.array([1.0, 1.0]), np.zeros((2, 4, 4)), Provenance.ODE)


# regimes and ratio -----------------------------------------------------------
def test_classify_damping():
    assert classify_damping(FIG4) is Damping.UNDERDAMPED
    assert classify_damping(FIG4.replace(g=0.001)) is Damping.OVERDAMPED
    assert classify_damping(at_gbar(FIG4)) is Damping.CRITICAL
    with pytest.raises(ClassificationError):
        classify_damping(FIG4.replace(g=0.0))


def test_ratio_long_time_slope():
    pe = at_gbar(FIG3)
    over = FIG3.replace(g=0.003)
    t = np.linspace(500, 1500, 11)
    R = ratio_R(pe, over, initial_state("ground", FIG3), t)
    # R ~ t^2 exp(-eta t) once the slow comparator mode dominates
    slope = np.polyfit(t, np.log(R.values / t**2), 1)[0]
    eta = derived_rates(over).eta.real
    assert slope == pytest.approx(-eta, rel=0.01)
    assert R.crossing_guaranteed


def test_ratio_without_rho_pp_component():
    pe = at_gbar(FIG3)
    jd = jordan_chain(pe)
    rho0 = jd.steady_state + 0.05 * jd.liouvillian.unvec(jd.rho4)
    R = ratio_R(pe, FIG3, rho0, np.linspace(1, 500, 50))
    assert not R.crossing_guaranteed


def test_ratio_requires_ep():
    with pytest.raises(NotAnEPError):
        ratio_R(FIG3, FIG3, initial_state("ground", FIG3), [1.0])


def test_ratio_critical_damping_tail():
    # R(t) < 1 for all t > t*, and R(10 t*) < 0.05, for generic states
    pe = at_gbar(FIG3)
    for kind in ("ground", "thermal_product"):
        t = np.arange(1.0, 3000.0, 1.0)
        R = ratio_R(pe, FIG3, initial_state(kind, FIG3), t)
        t_star = R.crossing_time()
        assert t_star is not None
        assert R.values[np.searchsorted(t, 10 * t_star)] < 0.05


def test_population_aperiodicity_fig4():
    grid = default_time_grid(FIG4)
    for g, expect_osc in ((0.005, True), (derived_rates(FIG4).g_bar, False), (0.001, False)):
        p = FIG4.replace(g=g)
        traj = propagate(p, initial_state("thermal_product", p), grid)
        rss = steady_state(p)
        counts = []
        for k in range(4):
            pop = traj.states[:, k, k].real
            i = first_extremum_index(pop)
            counts.append(count_crossings(pop[i:], float(rss[k, k].real)))
        if expect_osc:
            # the exchange coupling makes the single-excitation populations ring
            assert min(counts[1], counts[2]) >= 2
        else:
            assert counts == [0, 0, 0, 0]


def test_count_crossings_dead_band():
    assert count_crossings(np.array([1.0, 1.0 + 1e-14, 1.0 - 1e-14, 2.0, 0.5]), 1.0) == 1
    assert first_extremum_index(np.array([0.0, 1.0, 2.0])) == 0
    assert first_extremum_index(np.array([0.0, 2.0, 1.0])) == 1
