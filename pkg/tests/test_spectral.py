import numpy as np
import pytest

from conftest import FIG3, random_params
from thermalep.errors import NotAnEPError, ParameterError
from thermalep.model import (
    MachineParams,
    Regime,
    Statistics,
    build_liouvillian,
    build_local_liouvillian,
    build_reduced_liouvillian,
    derived_rates,
)
from thermalep.spectral import (
    EP_ORDER,
    EPKind,
    analytic_eigenmatrices_reduced,
    analytic_spectrum,
    analytic_spectrum_global,
    analytic_spectrum_local,
    analytic_spectrum_reduced,
    analytic_steady_state,
    coalescence_diagnostics,
    ep_flags,
    find_eps,
    hs_inner,
    hs_norm,
    jordan_chain,
    match_spectra,
    numeric_spectral_data,
)


def at_gbar(p):
    return p.replace(g=derived_rates(p).g_bar)


def rho_distance_up_to_sign(a, b):
    return min(hs_norm(a - b), hs_norm(a + b))


# closed-form spectra ---------------------------------------------------------
def test_reduced_spectrum_order_and_zero():
    lam = analytic_spectrum_reduced(FIG3)
    r = derived_rates(FIG3)
    G, eta = r.Gamma, r.eta
    np.testing.assert_allclose(lam, [0, -G, -G / 2, -G / 2, -G / 2 - eta, -G / 2 + eta], atol=1e-16)


def test_reduced_spectrum_triple_at_eta_zero():
    # Gamma1 = 0.06, Gamma2 = 0.016 with bosonic rates; g = DeltaGamma/2
    p = at_gbar(MachineParams(epsilon=1, T1=3, T2=0.7, gamma1=0.01, gamma2=0.01, g=0.0))
    lam = analytic_spectrum_reduced(p)
    assert np.ptp(lam[3:].real) < 1e-12 and np.abs(lam[3:].imag).max() < 1e-12


def test_reduced_spectrum_decoupled():
    p = MachineParams(epsilon=1, T1=3, T2=0.7, gamma1=0.01, gamma2=0.01, g=0.0)
    r = derived_rates(p)
    lam = analytic_spectrum_reduced(p)
    assert sorted([lam[4].real, lam[5].real]) == pytest.approx(sorted([-r.Gamma1, -r.Gamma2]), abs=1e-15)


def test_local_spectrum_structure(rng):
    for _ in range(20):
        p = random_params(rng)
        lam = analytic_spectrum_local(p)
        np.testing.assert_allclose(lam[:6], analytic_spectrum_reduced(p), atol=1e-15)
        assert lam[6] - lam[7] == pytest.approx(4j * p.epsilon, abs=1e-14) or lam[7] - lam[6] == pytest.approx(
            4j * p.epsilon, abs=1e-14
        )
        assert match_spectra(lam, lam.conj())[0] < 1e-12


def test_global_spectrum_structure(rng):
    for _ in range(20):
        p = random_params(rng, regime=Regime.GLOBAL)
        lam = analytic_spectrum_global(p)
        assert lam[0] == 0
        assert abs(abs(lam[4] - lam[5]) - 4 * p.g) < 1e-14
        assert match_spectra(lam, lam.conj())[0] < 1e-12


@pytest.mark.parametrize("regime,dim", [(Regime.LOCAL, 6), (Regime.LOCAL, 8), (Regime.LOCAL, 16), (Regime.GLOBAL, 16)])
def test_analytic_matches_numeric(rng, regime, dim):
    for _ in range(30):
        p = random_params(rng, regime=regime)
        num = np.linalg.eigvals(build_liouvillian(p, dim).matrix)
        assert match_spectra(analytic_spectrum(p, dim), num)[0] < 1e-10


def test_eta_gap_closed_form(rng):
    for _ in range(20):
        p = random_params(rng)
        lam = analytic_spectrum_reduced(p)
        r = derived_rates(p)
        assert abs(lam[4] - lam[5]) == pytest.approx(2 * abs(np.sqrt(complex(r.DeltaGamma**2 - 4 * p.g**2))), abs=1e-14)


# numeric spectral data -------------------------------------------------------
def test_spectral_data_invariants(rng):
    for _ in range(20):
        p = random_params(rng)
        for dim in (6, 8, 16):
            L = build_liouvillian(p, dim)
            sd = numeric_spectral_data(L)
            assert not sd.defective_flag
            assert abs(sd.eigenvalues[0]) == 0
            np.testing.assert_allclose(sd.gram(), np.eye(dim), atol=1e-10)
            np.testing.assert_allclose(sd.left[0], np.diag(np.diag(L.unvec(L.identity_vector))), atol=1e-10)
            assert np.trace(sd.steady_state).real == pytest.approx(1, abs=1e-12)
            M = L.matrix
            for k, lam in enumerate(sd.eigenvalues):
                v, w = sd.right_vectors[:, k], sd.left_vectors[:, k]
                assert np.linalg.norm(M @ v - lam * v) < 1e-10
                assert np.linalg.norm(w.conj() @ M - lam * w.conj()) < 1e-10
                if k:
                    assert np.linalg.norm(v) == pytest.approx(1, abs=1e-12)
                if lam.imag == 0:
                    rho = L.unvec(v)
                    assert np.abs(rho - rho.conj().T).max() < 1e-12
            re = sd.eigenvalues.real
            assert np.all(np.diff(re) <= 1e-12)


def test_completeness_reconstruction(rng):
    p = random_params(rng)
    sd = numeric_spectral_data(build_local_liouvillian(p))
    for _ in range(20):
        a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        h = a + a.conj().T
        np.testing.assert_allclose(sd.reconstruct(h), h, atol=1e-9)


def test_eigenmatrices_match_closed_forms():
    L = build_reduced_liouvillian(FIG3, 6)
    sd = numeric_spectral_data(L)
    ana = analytic_eigenmatrices_reduced(FIG3)
    lam = analytic_spectrum_reduced(FIG3)
    for k in (4, 5):
        num = sd.right[sd.index_of(lam[k])]
        assert rho_distance_up_to_sign(num, ana[k]) < 1e-8


def test_printed_constant_eigenmatrices():
    rhos = analytic_eigenmatrices_reduced(FIG3)
    np.testing.assert_allclose(rhos[1], np.diag([1, -1, -1, 1]) / 2, atol=1e-15)
    expect = np.zeros((4, 4), complex)
    expect[1, 2] = expect[2, 1] = 1 / np.sqrt(2)
    assert rho_distance_up_to_sign(rhos[2], expect) < 1e-15


def test_eigenmatrices_coalesce_near_ep():
    gbar = derived_rates(FIG3).g_bar
    prev = np.inf
    for dg in (1e-3, 1e-5, 1e-7):
        r = analytic_eigenmatrices_reduced(FIG3.replace(g=gbar - dg))
        d = max(rho_distance_up_to_sign(r[3], r[4]), rho_distance_up_to_sign(r[3], r[5]))
        assert d < prev
        prev = d
    assert prev < 1e-2
    # rho3 stays apart
    assert rho_distance_up_to_sign(r[2], r[3]) > 0.1


def test_closed_forms_raise_at_ep():
    with pytest.raises(NotAnEPError):
        analytic_eigenmatrices_reduced(at_gbar(FIG3))


# steady state ----------------------------------------------------------------
def test_steady_state_properties(rng):
    for _ in range(30):
        p = random_params(rng)
        rho = analytic_steady_state(p)
        L = build_local_liouvillian(p)
        assert np.linalg.norm(L.matrix @ L.vec(rho)) < 1e-12
        assert np.trace(rho).real == pytest.approx(1, abs=1e-12)
        assert np.linalg.eigvalsh(rho).min() > -1e-12
        assert abs(rho[1, 2].real) < 1e-15 and rho[2, 1] == np.conj(rho[1, 2])


def test_steady_state_decoupled_product():
    p = FIG3.replace(g=0.0)
    r = derived_rates(p)
    rho = analytic_steady_state(p)
    assert np.count_nonzero(rho - np.diag(np.diag(rho))) == 0
    (g1p, g2p) = r.gamma_plus
    assert rho[0, 0].real == pytest.approx(g1p * g2p / (r.Gamma1 * r.Gamma2), rel=1e-12)


# Jordan chain ----------------------------------------------------------------
@pytest.mark.parametrize("dim", [6, 8, 16])
def test_jordan_chain_residuals(dim):
    jd = jordan_chain(at_gbar(FIG3), dim)
    assert max(jd.residuals().values()) < 1e-9
    assert (jd.geometric_multiplicity, jd.algebraic_multiplicity) == (2, 4)
    n = jd.liouvillian.dim
    R, W = jd.basis_right, jd.basis_left
    np.testing.assert_allclose(W.conj().T @ R, np.eye(n), atol=1e-9)
    for v in (jd.rho4, jd.rho_p, jd.rho_pp):
        rho = jd.liouvillian.unvec(v)
        assert np.abs(rho - rho.conj().T).max() < 1e-12
        assert np.linalg.norm(v) == pytest.approx(1, abs=1e-6)


def test_jordan_chain_small_gamma():
    # Gamma/|L| ~ 1e-3: the lambda_bar cluster must still be isolated cleanly
    p = at_gbar(MachineParams(epsilon=1.8, T1=2.0, T2=0.4, gamma1=1e-4, gamma2=4e-4, g=0.0,
                              statistics=Statistics.FERMIONIC))
    jd = jordan_chain(p, 16)
    assert max(jd.residuals().values()) < 1e-12


def test_rho4_is_limit_of_closed_form():
    jd = jordan_chain(at_gbar(FIG3), 6)
    gbar = derived_rates(FIG3).g_bar
    near = analytic_eigenmatrices_reduced(FIG3.replace(g=gbar * (1 - 1e-8)))  # |eta| ~ 3e-6
    rho4 = jd.liouvillian.unvec(jd.rho4)
    assert rho_distance_up_to_sign(rho4, near[3] / hs_norm(near[3])) < 1e-8


def test_jordan_chain_rejects_non_ep():
    with pytest.raises(NotAnEPError):
        jordan_chain(FIG3)


# coalescence diagnostics -----------------------------------------------------
def test_condition_number_far_and_near():
    r = derived_rates(FIG3)
    far = coalescence_diagnostics(build_reduced_liouvillian(FIG3.replace(g=abs(r.DeltaGamma)), 6), -r.Gamma / 2, r.Gamma / 2)
    assert far["condition_number"] < 1e2
    conds = []
    for dg in (1e-4, 1e-6, 1e-8):
        L = build_reduced_liouvillian(FIG3.replace(g=r.g_bar - dg), 6)
        conds.append(numeric_spectral_data(L).diagnostics["condition_number"])
    assert conds[0] < conds[1] < conds[2] and conds[2] > 1e6


def test_defective_flag_at_ep():
    sd = numeric_spectral_data(build_reduced_liouvillian(at_gbar(FIG3), 6))
    assert sd.defective_flag


def test_coalescence_needs_cluster():
    with pytest.raises(ValueError):
        coalescence_diagnostics(build_reduced_liouvillian(FIG3, 6), 5.0, 1e-3)


# EP search -------------------------------------------------------------------
def test_find_eps_fig3():
    reps = find_eps(FIG3, "g")
    eta = [r for r in reps if r.kind is EPKind.ETA_ZERO]
    assert len(eta) == 1 and eta[0].order == 3
    assert eta[0].value == pytest.approx(derived_rates(FIG3).g_bar, rel=1e-12)
    for rep in reps:
        assert rep.order == EP_ORDER[rep.kind]


@pytest.mark.parametrize("free", ["gamma1", "gamma2", "T1", "T2"])
def test_no_eps_when_decoupled(free):
    assert find_eps(FIG3.replace(g=0.0), free) == []


def test_flags():
    assert not any(ep_flags(FIG3.replace(g=0.0)).values())
    assert ep_flags(at_gbar(FIG3))[EPKind.ETA_ZERO.value]


def test_find_eps_rejects_unknown_parameter():
    with pytest.raises(ParameterError):
        find_eps(FIG3, "epsilon")


def test_hs_inner_conjugates_first():
    a = np.eye(4) * 1j
    assert hs_inner(a, np.eye(4)) == pytest.approx(-4j)
