"""Spectral analysis of the machine Liouvillians.

Closed-form spectra and eigenmatrices, a numerical bi-orthonormal
eigendecomposition with Hermitian right eigenmatrices, the Jordan chain at
the third-order exceptional point, and a catalogue search for exceptional
points along one free parameter.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, optimize

from .errors import NotAnEPError, ParameterError, UnsupportedCombinationError
from .model import (
    BathRates,
    Liouvillian,
    MachineParams,
    Regime,
    Statistics,
    build_global_liouvillian,
    build_local_liouvillian,
    build_reduced_liouvillian,
    derived_rates,
    global_rates,
)

ETA_SWITCH_FACTOR = 1e-6
COND_MAX = 1e8


def eta_switch(rates: BathRates) -> float:
    """|eta| below which the eigenbasis is treated as defective."""
    return ETA_SWITCH_FACTOR * rates.Gamma


# ---------------------------------------------------------------------------
# closed-form spectra
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SpectralAux:
    alpha_s: complex
    beta_s: complex
    delta: float
    beta_s_squared: float


def spectral_aux(rates: BathRates) -> SpectralAux:
    g1p, g2p = rates.gamma_plus
    g1m, g2m = rates.gamma_minus
    G1, G2, g = rates.Gamma1, rates.Gamma2, rates.g
    delta = G1**2 + G2**2 + 2 * g1m * (g2m - 3 * g2p) + 2 * g1p * (g2p - 3 * g2m)
    alpha = -(g**2) + (G1**2 + G2**2) / 8
    beta_sq = (4 * (rates.DeltaGamma * rates.Gamma) ** 2 - 16 * g**2 * delta) / 64
    beta = complex(np.sqrt(complex(beta_sq)))
    return SpectralAux(complex(alpha), beta, float(delta), float(beta_sq))


@dataclass(frozen=True)
class GlobalSpectralAux:
    X: float
    Y: float
    eps_minus: float
    eps_plus: float
    Gamma_minus: float  # Gamma_1(eps-) + Gamma_2(eps-)
    Gamma_plus: float

    @property
    def Gamma(self) -> float:
        return self.Gamma_minus + self.Gamma_plus


def global_spectral_aux(params: MachineParams) -> GlobalSpectralAux:
    gr = global_rates(params)

    def quad(branch):
        g1m, g2m = gr.gamma_minus[(0, branch)], gr.gamma_minus[(1, branch)]
        g1p, g2p = gr.gamma_plus[(0, branch)], gr.gamma_plus[(1, branch)]
        return (
            gr.Gamma_j(0, branch) ** 2
            + 2 * g1m * (g2m - 3 * g2p)
            + 2 * g1p * (g2p - 3 * g2m)
            + gr.Gamma_j(1, branch) ** 2
        )

    return GlobalSpectralAux(
        X=quad("-"),
        Y=quad("+"),
        eps_minus=gr.eps_minus,
        eps_plus=gr.eps_plus,
        Gamma_minus=gr.Gamma_j(0, "-") + gr.Gamma_j(1, "-"),
        Gamma_plus=gr.Gamma_j(0, "+") + gr.Gamma_j(1, "+"),
    )


def _require_local(params: MachineParams):
    if params.regime is not Regime.LOCAL:
        raise UnsupportedCombinationError("closed form requested for the wrong regime")


def analytic_spectrum_reduced(params: MachineParams) -> np.ndarray:
    """(0, -G, -G/2, -G/2, -G/2 - eta, -G/2 + eta)."""
    _require_local(params)
    r = derived_rates(params)
    G, eta = r.Gamma, r.eta
    return np.array([0, -G, -G / 2, -G / 2, -G / 2 - eta, -G / 2 + eta], dtype=complex)


def analytic_spectrum_x8(params: MachineParams) -> np.ndarray:
    r = derived_rates(params)
    extra = np.array([2j * params.epsilon - r.Gamma / 2, -2j * params.epsilon - r.Gamma / 2])
    return np.concatenate([analytic_spectrum_reduced(params), extra])


def analytic_spectrum_local(params: MachineParams) -> np.ndarray:
    """All sixteen eigenvalues of the local Liouvillian in closed form."""
    _require_local(params)
    r = derived_rates(params)
    aux = spectral_aux(r)
    half, ie = r.Gamma / 2, 1j * params.epsilon
    root_m = np.sqrt(aux.alpha_s - aux.beta_s)
    root_p = np.sqrt(aux.alpha_s + aux.beta_s)
    tail = [
        ie - half - root_m, -ie - half - root_m,
        ie - half + root_m, -ie - half + root_m,
        ie - half - root_p, -ie - half - root_p,
        ie - half + root_p, -ie - half + root_p,
    ]
    return np.concatenate([analytic_spectrum_x8(params), np.array(tail)])


def analytic_spectrum_global(params: MachineParams) -> np.ndarray:
    """Sixteen eigenvalues of the global Liouvillian in closed form."""
    if params.regime is not Regime.GLOBAL or params.statistics is not Statistics.BOSONIC:
        raise UnsupportedCombinationError("global closed form needs a bosonic global-regime parameter set")
    aux = global_spectral_aux(params)
    G, g, e = aux.Gamma, params.g, params.epsilon
    sx, sy = np.sqrt(complex(aux.X)), np.sqrt(complex(aux.Y))
    lam = [
        0,
        -aux.Gamma_minus / 2,
        -aux.Gamma_plus / 2,
        -G / 2,
        2j * g - G / 4, -2j * g - G / 4,
        2j * e - G / 4, -2j * e - G / 4,
        1j * (g + e) - (G + sx) / 4, -1j * (g + e) - (G + sx) / 4,
        1j * (g + e) - (G - sx) / 4, -1j * (g + e) - (G - sx) / 4,
        1j * (g - e) - (G + sy) / 4, -1j * (g - e) - (G + sy) / 4,
        1j * (g - e) - (G - sy) / 4, -1j * (g - e) - (G - sy) / 4,
    ]
    return np.array(lam, dtype=complex)


def analytic_spectrum(params: MachineParams, dim: int = 16) -> np.ndarray:
    if params.regime is Regime.GLOBAL:
        return analytic_spectrum_global(params)
    return {6: analytic_spectrum_reduced, 8: analytic_spectrum_x8, 16: analytic_spectrum_local}[dim](params)


def sort_key_order(values: np.ndarray, decimals: int = 12) -> np.ndarray:
    """Indices sorting by descending real part, then ascending imaginary part."""
    values = np.asarray(values)
    scale = max(np.max(np.abs(values), initial=0.0), 1e-300)
    re = np.round(values.real / scale, decimals)
    im = np.round(values.imag / scale, decimals)
    return np.lexsort((im, -re))


def match_spectra(a: Sequence[complex], b: Sequence[complex]) -> Tuple[float, np.ndarray]:
    """Minimal-total-distance pairing of two eigenvalue lists.

    Returns the largest pairwise deviation and, for each entry of ``a``, the
    index of its partner in ``b``.
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        raise ValueError("spectra of different length")
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = optimize.linear_sum_assignment(cost)
    perm = np.empty(len(a), dtype=int)
    perm[rows] = cols
    return float(cost[rows, cols].max(initial=0.0)), perm


# ---------------------------------------------------------------------------
# eigenmatrix helpers
# ---------------------------------------------------------------------------
def hs_inner(a: np.ndarray, b: np.ndarray) -> complex:
    """Hilbert-Schmidt product Tr(a^+ b)."""
    return complex(np.vdot(np.asarray(a).ravel(), np.asarray(b).ravel()))


def hs_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a).ravel()))


def _fix_sign(L: Liouvillian, v: np.ndarray, hermitian: bool) -> np.ndarray:
    """Deterministic phase: first dominant entry (row-major 4x4) real-positive."""
    flat = L.unvec(v).ravel()
    mags = np.abs(flat)
    k = int(np.argmax(mags >= (1 - 1e-9) * mags.max()))
    z = flat[k]
    if not hermitian:
        return v * (abs(z) / z)
    if abs(z.real) > 1e-9 * abs(z):
        return v * np.sign(z.real)
    return v * np.sign(z.imag)


def _hermitian_basis(L: Liouvillian, vectors: np.ndarray) -> np.ndarray:
    """Orthonormal Hermitian basis of a dagger-invariant subspace.

    ``vectors`` holds the subspace basis as columns (coordinates of L).
    """
    m = vectors.shape[1]
    cands = []
    for k in range(m):
        v = vectors[:, k]
        for w in (v, 1j * v):
            cands.append((w + L.dagger(w)) / 2)
    cands = np.array(cands)  # (2m, n) complex, each Hermitian
    realified = np.concatenate([cands.real, cands.imag], axis=1)
    _, _, vh = np.linalg.svd(realified, full_matrices=False)
    n = vectors.shape[0]
    basis = vh[:m, :n] + 1j * vh[:m, n:]
    return basis.T


def _cluster(values: np.ndarray, tol: float) -> List[np.ndarray]:
    """Single-linkage groups of eigenvalues closer than ``tol``."""
    n = len(values)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if abs(values[i] - values[j]) < tol:
                parent[find(i)] = find(j)
    groups: Dict[int, List[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return [np.array(v) for v in groups.values()]


@dataclass
class _Mode:
    value: complex
    vectors: np.ndarray  # columns
    deficit: float  # m-th smallest singular value of (L - value)


def _cluster_modes(L: Liouvillian, values: np.ndarray, tol: float) -> List[_Mode]:
    """Eigenvectors per eigenvalue cluster, Hermitian for real eigenvalues.

    Complex-conjugate clusters share daggered eigenmatrices.
    """
    M = L.matrix
    n = L.dim
    scale = np.linalg.norm(M, 2)
    real_tol = max(tol, 1e-12 * scale)
    modes: List[_Mode] = []
    pending: Dict[int, int] = {}
    groups = _cluster(values, tol)
    centers = [complex(np.mean(values[grp])) for grp in groups]
    for gi, (grp, mu) in enumerate(zip(groups, centers)):
        m = len(grp)
        is_real = abs(mu.imag) <= real_tol
        if is_real:
            mu = complex(mu.real)
        if mu.imag < 0 and not is_real:
            # partner of a cluster with positive imaginary part, filled later
            pending[gi] = len(modes)
            modes.append(_Mode(mu, np.zeros((n, m), dtype=complex), 0.0))
            continue
        _, s, vh = np.linalg.svd(M - mu * np.eye(n))
        vecs = vh[-m:].conj().T
        deficit = float(s[-m])
        if is_real:
            vecs = _hermitian_basis(L, vecs)
        modes.append(_Mode(mu, vecs, deficit))
    # conjugate partners: rho(lambda*) = rho(lambda)^+
    for gi, idx in pending.items():
        mu = modes[idx].value
        partner = None
        for mode in modes:
            if mode.value.imag > 0 and abs(mode.value - np.conj(mu)) < 10 * tol and mode.vectors.shape == modes[idx].vectors.shape:
                partner = mode
                break
        if partner is None:
            m = modes[idx].vectors.shape[1]
            _, s, vh = np.linalg.svd(M - mu * np.eye(n))
            modes[idx] = _Mode(mu, vh[-m:].conj().T, float(s[-m]))
        else:
            modes[idx] = _Mode(np.conj(partner.value), L.dagger(partner.vectors.T).T, partner.deficit)
    return modes


@dataclass
class SpectralData:
    """Bi-orthonormal eigen-decomposition of a Liouvillian.

    ``right[i]`` and ``left[i]`` are 4x4 matrices with Tr(left[i]^+ right[j])
    = delta_ij. ``right[0]`` is the steady state (unit trace) and ``left[0]``
    the identity on the active subspace.
    """

    liouvillian: Liouvillian
    eigenvalues: np.ndarray
    right_vectors: np.ndarray  # columns, coordinates of the Liouvillian
    left_vectors: np.ndarray  # columns; sigma_i coordinates
    defective_flag: bool
    diagnostics: Dict[str, float] = field(default_factory=dict)

    @property
    def right(self) -> List[np.ndarray]:
        return [self.liouvillian.unvec(v) for v in self.right_vectors.T]

    @property
    def left(self) -> List[np.ndarray]:
        return [self.liouvillian.unvec(v) for v in self.left_vectors.T]

    @property
    def steady_state(self) -> np.ndarray:
        return self.liouvillian.unvec(self.right_vectors[:, 0])

    def gram(self) -> np.ndarray:
        """Matrix of Tr(sigma_i^+ rho_j)."""
        return self.left_vectors.conj().T @ self.right_vectors

    def coefficients(self, rho: np.ndarray) -> np.ndarray:
        return self.left_vectors.conj().T @ self.liouvillian.vec(rho)

    def reconstruct(self, rho: np.ndarray) -> np.ndarray:
        return self.liouvillian.unvec(self.right_vectors @ self.coefficients(rho))

    def index_of(self, value: complex) -> int:
        """Position of the eigenvalue closest to ``value``."""
        return int(np.argmin(np.abs(self.eigenvalues - value)))


def numeric_spectral_data(
    L: Liouvillian,
    *,
    cluster_tol: Optional[float] = None,
    cond_max: float = COND_MAX,
) -> SpectralData:
    """Numerical eigen-decomposition with Hermitian, normalised eigenmatrices.

    Near-degenerate eigenvalues (within ``cluster_tol``, default 1e-9 ||L||)
    are treated as one eigenspace. When the eigenbasis is incomplete or its
    condition number exceeds ``cond_max`` the result carries
    ``defective_flag=True``; propagation then has to go through the Jordan
    chain instead.
    """
    M = L.matrix
    scale = float(np.linalg.norm(M, 2))
    tol = cluster_tol if cluster_tol is not None else 1e-9 * scale
    values = np.linalg.eigvals(M)
    modes = _cluster_modes(L, values, tol)

    lams, cols, hermitian = [], [], []
    for mode in modes:
        is_real = mode.value.imag == 0
        for k in range(mode.vectors.shape[1]):
            lams.append(mode.value)
            cols.append(mode.vectors[:, k])
            hermitian.append(is_real)
    lams = np.array(lams)
    order = sort_key_order(lams)
    lams = lams[order]
    R = np.array(cols, dtype=complex).T[:, order]
    hermitian = [hermitian[k] for k in order]

    zero_idx = int(np.argmin(np.abs(lams)))
    if abs(lams[zero_idx]) > 1e-10 * max(scale, 1.0):
        raise ArithmeticError(f"no zero eigenvalue found (smallest |lambda| = {abs(lams[zero_idx]):.3e})")
    if zero_idx != 0:
        # descending real part puts 0 first; guard against round-off ties
        perm = [zero_idx] + [k for k in range(len(lams)) if k != zero_idx]
        lams, R = lams[perm], R[:, perm]
        hermitian = [hermitian[k] for k in perm]
    lams[0] = 0.0

    ident = L.identity_vector
    for k in range(R.shape[1]):
        v = R[:, k]
        if k == 0:
            v = v / (ident @ v)
        else:
            v = v / np.linalg.norm(v)
            v = _fix_sign(L, v, hermitian[k])
        R[:, k] = v
    # same phase rule must hold on conjugate partners: re-dagger after fixing
    for k in range(1, R.shape[1]):
        if not hermitian[k] and lams[k].imag < 0:
            j = int(np.argmin(np.abs(lams - np.conj(lams[k]))))
            if j != k and not hermitian[j]:
                R[:, k] = L.dagger(R[:, j])

    cond = float(np.linalg.cond(R))
    deficit = max((mode.deficit for mode in modes), default=0.0)
    W = np.linalg.inv(R)
    left = W.conj().T
    residual = float(np.max(np.abs(M @ R - R * lams[None, :])))
    defective = bool(cond > cond_max or deficit > 1e-8 * scale)
    diagnostics = {
        "condition_number": cond,
        "null_space_deficit": deficit,
        "residual": residual,
        "norm": scale,
    }
    return SpectralData(L, lams, R, left, defective, diagnostics)


# ---------------------------------------------------------------------------
# closed-form eigenmatrices of the reduced Liouvillian
# ---------------------------------------------------------------------------
def analytic_steady_state(params: MachineParams) -> np.ndarray:
    """Steady state of the local master equation in closed form."""
    _require_local(params)
    r = derived_rates(params)
    g = params.g
    g1p, g2p = r.gamma_plus
    g1m, g2m = r.gamma_minus
    G1, G2, G = r.Gamma1, r.Gamma2, r.Gamma
    rho = np.zeros((4, 4), dtype=complex)
    rho[0, 0] = 4 * g**2 * (g1p + g2p) ** 2 + g1p * g2p * G**2
    rho[1, 1] = 4 * (g1m + g2m) * (g1p + g2p) * g**2 + g1p * g2m * G**2
    rho[2, 2] = 4 * (g1m + g2m) * (g1p + g2p) * g**2 + g1m * g2p * G**2
    rho[3, 3] = 4 * g**2 * (g1m + g2m) ** 2 + g1m * g2m * G**2
    rho[1, 2] = 2j * g * G * (g1p * g2m - g1m * g2p)
    rho[2, 1] = -rho[1, 2]
    return rho / (G**2 * (4 * g**2 + G1 * G2))


def _normalize_hermitian(rho: np.ndarray) -> np.ndarray:
    rho = rho / hs_norm(rho)
    flat = rho.ravel()
    mags = np.abs(flat)
    z = flat[int(np.argmax(mags >= (1 - 1e-9) * mags.max()))]
    if abs(z.real) > 1e-9 * abs(z):
        return rho * np.sign(z.real)
    return rho * np.sign(z.imag)


def _rho_eta_branch(r: BathRates, sign: int) -> np.ndarray:
    """Eigenmatrix of -Gamma/2 + sign * eta (unnormalised)."""
    g1p, g2p = r.gamma_plus
    g1m, g2m = r.gamma_minus
    G, DG, eta = r.Gamma, r.DeltaGamma, r.eta
    s = sign
    denom = (G + 2 * s * eta) * np.sqrt(complex(DG**2 - eta**2))
    rho = np.zeros((4, 4), dtype=complex)
    rho[0, 0] = (2 * DG * (g1p + g2p) + s * 2 * (g1p - g2p) * eta) / denom
    rho[1, 1] = ((g1m - g1p + g2m - g2p) * DG - 2 * eta**2 - s * 2 * (g1p + g2m) * eta) / denom
    rho[2, 2] = ((g1m - g1p + g2m - g2p) * DG + 2 * eta**2 + s * 2 * (g1m + g2p) * eta) / denom
    rho[3, 3] = (-2 * DG * (g1m + g2m) + s * 2 * (g2m - g1m) * eta) / denom
    rho[1, 2] = -1j
    rho[2, 1] = 1j
    return rho


def analytic_eigenmatrices_reduced(params: MachineParams) -> List[np.ndarray]:
    """Right eigenmatrices rho_1..rho_6 of the reduced Liouvillian.

    Ordering follows ``analytic_spectrum_reduced``; rho_1 has unit trace, the
    others unit Hilbert-Schmidt norm. rho_5 and rho_6 are singular at the
    exceptional point and raise there.
    """
    _require_local(params)
    r = derived_rates(params)
    if params.g == 0 or r.DeltaGamma == 0:
        raise ParameterError("closed-form rho_4..rho_6 need g > 0 and DeltaGamma != 0")
    if abs(r.eta) < eta_switch(r):
        raise NotAnEPError(
            "closed-form eigenmatrices are singular at the exceptional point; use jordan_chain"
        )
    rho1 = analytic_steady_state(params)
    rho2 = np.diag([1.0, -1.0, -1.0, 1.0]).astype(complex) / 2
    rho3 = np.zeros((4, 4), dtype=complex)
    rho3[1, 2] = rho3[2, 1] = 1 / np.sqrt(2)
    G, DG, eta = r.Gamma, r.DeltaGamma, r.eta
    root = np.sqrt(complex(DG**2 - eta**2))  # equals 2g
    g1p, g2p = r.gamma_plus
    g1m, g2m = r.gamma_minus
    rho4 = np.zeros((4, 4), dtype=complex)
    rho4[0, 0] = 2 * (g1p + g2p) * root / (G * DG)
    rho4[1, 1] = rho4[2, 2] = (g1m - g1p + g2m - g2p) * root / (G * DG)
    rho4[3, 3] = -2 * (g1m + g2m) * root / (G * DG)
    rho4[1, 2] = -1j
    rho4[2, 1] = 1j
    rho5 = _rho_eta_branch(r, -1)
    rho6 = _rho_eta_branch(r, +1)
    out = [rho1, rho2, rho3, _normalize_hermitian(rho4)]
    for rho in (rho5, rho6):
        if abs(eta.imag) > 0:
            # underdamped: complex eigenvalues, eigenmatrices are not Hermitian
            rho = rho / hs_norm(rho)
            flat = rho.ravel()
            mags = np.abs(flat)
            z = flat[int(np.argmax(mags >= (1 - 1e-9) * mags.max()))]
            rho = rho * (abs(z) / z)
        else:
            rho = _normalize_hermitian(rho)
        out.append(rho)
    return out


# ---------------------------------------------------------------------------
# Jordan chain at the eta = 0 exceptional point
# ---------------------------------------------------------------------------
@dataclass
class JordanBlockData:
    """Generalised eigenbasis at the third-order exceptional point.

    The chain obeys (L - lambda_bar) rho4 = 0, (L - lambda_bar) rho_p =
    alpha rho4, (L - lambda_bar) rho_pp = beta rho_p. ``modes`` lists the
    remaining (non-chain) eigenvalues with their right and left eigenmatrices,
    starting with the steady state.
    """

    params: MachineParams
    liouvillian: Liouvillian
    lambda_bar: float
    rho4: np.ndarray
    rho_p: np.ndarray
    rho_pp: np.ndarray
    sigma4: np.ndarray
    sigma_p: np.ndarray
    sigma_pp: np.ndarray
    alpha: complex
    beta: complex
    mode_values: np.ndarray
    mode_right: np.ndarray  # columns
    mode_left: np.ndarray  # columns
    geometric_multiplicity: int
    algebraic_multiplicity: int
    diagnostics: Dict[str, float] = field(default_factory=dict)

    @property
    def chain_right(self) -> np.ndarray:
        return np.stack([self.rho4, self.rho_p, self.rho_pp], axis=1)

    @property
    def chain_left(self) -> np.ndarray:
        return np.stack([self.sigma4, self.sigma_p, self.sigma_pp], axis=1)

    @property
    def basis_right(self) -> np.ndarray:
        return np.concatenate([self.mode_right, self.chain_right], axis=1)

    @property
    def basis_left(self) -> np.ndarray:
        return np.concatenate([self.mode_left, self.chain_left], axis=1)

    @property
    def steady_state(self) -> np.ndarray:
        return self.liouvillian.unvec(self.mode_right[:, 0])

    def as_matrices(self) -> Dict[str, np.ndarray]:
        u = self.liouvillian.unvec
        return {
            "rho4": u(self.rho4), "rho_p": u(self.rho_p), "rho_pp": u(self.rho_pp),
            "sigma4": u(self.sigma4), "sigma_p": u(self.sigma_p), "sigma_pp": u(self.sigma_pp),
        }

    def residuals(self) -> Dict[str, float]:
        A = self.liouvillian.matrix - self.lambda_bar * np.eye(self.liouvillian.dim)
        n = np.linalg.norm
        return {
            "eig": float(n(A @ self.rho4)),
            "first": float(n(A @ self.rho_p - self.alpha * self.rho4)),
            "second": float(n(A @ self.rho_pp - self.beta * self.rho_p)),
            "nilpotent": float(n(A @ (A @ (A @ self.rho_pp)))),
            "left_pp": float(n(self.sigma_pp.conj() @ A)),
            "left_p": float(n(self.sigma_p.conj() @ A - self.beta * self.sigma_pp.conj())),
            "left_4": float(n(self.sigma4.conj() @ A - self.alpha * self.sigma_p.conj())),
        }


def _null_basis(M: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    _, s, vh = np.linalg.svd(M)
    return vh[-k:].conj().T, s


def _numerical_nullity(M: np.ndarray, tol: float) -> int:
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s <= tol))


def _hermitian_coordinates(L: Liouvillian) -> np.ndarray:
    """Unitary H with H x Hermitian for every real x."""
    n = L.dim
    perm = L.dagger_permutation
    H = np.zeros((n, n), dtype=complex)
    col = 0
    for k in range(n):
        j = perm[k]
        if j == k:
            H[k, col] = 1.0
            col += 1
        elif k < j:
            H[k, col], H[j, col] = 1 / np.sqrt(2), 1 / np.sqrt(2)
            H[k, col + 1], H[j, col + 1] = 1j / np.sqrt(2), -1j / np.sqrt(2)
            col += 2
    return H


def _chain_solve(A: np.ndarray, b: np.ndarray, guess: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Solution of A x = b closest to ``guess``; A has the 2-dim null space ``kernel``."""
    u, sv, vh = np.linalg.svd(A)
    r = len(sv) - kernel.shape[1]
    x = vh[:r].T @ ((u[:, :r].T @ b) / sv[:r])
    return x + kernel @ (kernel.T @ (guess - x))


# eigenvalues within this multiple of Gamma of lambda_bar form the EP cluster
CLUSTER_RADIUS = 1e-2


def jordan_chain(params: MachineParams, dim: int = 6) -> JordanBlockData:
    """Jordan chain {rho4, rho', rho''} and its left partners at eta = 0.

    rho' and rho'' have unit Hilbert-Schmidt norm; alpha and beta carry the
    scale. rho'' is chosen Hermitian and orthogonal to ker (L - lambda_bar)^2.
    """
    _require_local(params)
    r = derived_rates(params)
    if params.g == 0 or abs(r.eta) >= eta_switch(r):
        raise NotAnEPError(f"|eta| = {abs(r.eta):.3e} is not below the switch {eta_switch(r):.3e}")
    L = build_local_liouvillian(params) if dim == 16 else build_reduced_liouvillian(params, dim)
    n = L.dim
    lam = -r.Gamma / 2
    A = L.matrix - lam * np.eye(n)
    normA = float(np.linalg.norm(A, 2))
    # isolate the invariant subspace of the lambda_bar cluster; rank tests on
    # powers of the full A cannot separate it from eigenvalues ~Gamma/2 away
    # once Gamma << |L|
    T, Z, sdim = linalg.schur(L.matrix.astype(complex), output="complex",
                              sort=lambda z: abs(z - lam) < CLUSTER_RADIUS * r.Gamma)
    if sdim != 4:
        raise NotAnEPError(f"{sdim} eigenvalues cluster at lambda_bar, expected 4")
    B = T[:4, :4] - lam * np.eye(4)
    normB = float(np.linalg.norm(B, 2))
    B2 = B @ B
    B3 = B2 @ B
    geo = _numerical_nullity(B, 1e-9 * normB)
    alg = _numerical_nullity(B3 @ B, 1e-9 * normB**4)
    if geo != 2 or alg != 4 or _numerical_nullity(B2, 1e-9 * normB**2) != 3:
        raise NotAnEPError(f"no third-order Jordan block at lambda_bar (geometric {geo}, algebraic {alg})")

    # chain in real coordinates of the Hermitian subspace, where L is real
    H = _hermitian_coordinates(L)
    Ar = (H.conj().T @ A @ H).real
    V1 = _null_basis(Ar, 2)[0]
    V2 = _null_basis(Ar @ Ar, 3)[0]
    V3 = _null_basis(Ar @ Ar @ Ar, 4)[0]
    # rho'' spans the part of ker A^3 orthogonal to ker A^2
    comp = V3 - V2 @ (V2.T @ V3)
    x_pp = np.linalg.svd(comp)[0][:, 0]
    x_pp = (H.conj().T @ _fix_sign(L, H @ x_pp, True)).real
    x_p = Ar @ x_pp
    beta = float(np.linalg.norm(x_p))
    x_p /= beta
    x4 = Ar @ x_p
    alpha = float(np.linalg.norm(x4))
    x4 /= alpha
    # Forward products divide round-off by alpha*beta ~ Gamma^2; re-anchor rho4
    # in the kernel and back-solve the chain so every link holds to round-off.
    x4 = V1 @ (V1.T @ x4)
    x4 /= np.linalg.norm(x4)
    alpha = float(x4 @ Ar @ x_p)
    x_p = _chain_solve(Ar, alpha * x4, x_p, V1)
    x_pp = _chain_solve(Ar, beta * x_p, x_pp, V1)
    rho4, rho_p, rho_pp = H @ x4, H @ x_p, H @ x_pp
    # rho3: the eigenmatrix of lambda_bar outside the chain
    c = V1.T @ x4
    x3 = V1 @ np.array([-c[1], c[0]])
    rho3 = _fix_sign(L, H @ (x3 / np.linalg.norm(x3)), True)

    # remaining eigenvalues: drop the four closest to lambda_bar
    values = np.linalg.eigvals(L.matrix)
    keep = np.argsort(np.abs(values - lam))[4:]
    others = _cluster_modes(L, values[keep], 1e-9 * float(np.linalg.norm(L.matrix, 2)))
    vals, cols = [], []
    for mode in others:
        for k in range(mode.vectors.shape[1]):
            vals.append(mode.value)
            cols.append(mode.vectors[:, k])
    vals.append(lam)
    cols.append(rho3)
    vals = np.array(vals, dtype=complex)
    order = sort_key_order(vals)
    vals = vals[order]
    Rm = np.array(cols).T[:, order]
    zero = int(np.argmin(np.abs(vals)))
    perm = [zero] + [k for k in range(len(vals)) if k != zero]
    vals, Rm = vals[perm], Rm[:, perm]
    vals[0] = 0.0
    ident = L.identity_vector
    for k in range(Rm.shape[1]):
        v = Rm[:, k]
        if k == 0:
            v = v / (ident @ v)
        else:
            v = _fix_sign(L, v / np.linalg.norm(v), vals[k].imag == 0)
        Rm[:, k] = v

    R = np.concatenate([Rm, np.stack([rho4, rho_p, rho_pp], axis=1)], axis=1)
    W = np.linalg.inv(R)
    left = W.conj().T
    m = Rm.shape[1]
    data = JordanBlockData(
        params=params,
        liouvillian=L,
        lambda_bar=lam,
        rho4=rho4,
        rho_p=rho_p,
        rho_pp=rho_pp,
        sigma4=left[:, m],
        sigma_p=left[:, m + 1],
        sigma_pp=left[:, m + 2],
        alpha=alpha,
        beta=beta,
        mode_values=vals,
        mode_right=Rm,
        mode_left=left[:, :m],
        geometric_multiplicity=geo,
        algebraic_multiplicity=alg,
    )
    data.diagnostics = {"condition_number": float(np.linalg.cond(R)), "norm": normA, **data.residuals()}
    return data


# ---------------------------------------------------------------------------
# exceptional point search
# ---------------------------------------------------------------------------
class EPKind(str, enum.Enum):
    ETA_ZERO = "eta_zero"
    BETA_ZERO = "beta_zero"
    ALPHA_MINUS_BETA = "alpha_minus_beta"
    ALPHA_PLUS_BETA = "alpha_plus_beta"
    ALPHA_AND_BETA = "alpha_and_beta"
    GLOBAL_X = "global_x"
    GLOBAL_Y = "global_y"


EP_ORDER = {
    EPKind.ETA_ZERO: 3,
    EPKind.BETA_ZERO: 2,
    EPKind.ALPHA_MINUS_BETA: 2,
    EPKind.ALPHA_PLUS_BETA: 2,
    EPKind.ALPHA_AND_BETA: 4,
    EPKind.GLOBAL_X: 2,
    EPKind.GLOBAL_Y: 2,
}

FREE_PARAMETERS = ("g", "gamma1", "gamma2", "T1", "T2")

# default search windows in units of epsilon
DEFAULT_BOUNDS = {
    "g": (1e-6, 0.5),
    "gamma1": (1e-6, 0.5),
    "gamma2": (1e-6, 0.5),
    "T1": (1e-3, 1e2),
    "T2": (1e-3, 1e2),
}


@dataclass
class EPReport:
    kind: EPKind
    order: int
    free_parameter: str
    value: Optional[float]
    params: Optional[MachineParams]
    merged_eigenvalues: List[complex] = field(default_factory=list)
    diagnostics: Dict[str, float] = field(default_factory=dict)
    reachable: bool = True

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "order": self.order,
            "free_parameter": self.free_parameter,
            "value": self.value,
            "reachable": self.reachable,
            "merged_eigenvalues": [[float(z.real), float(z.imag)] for z in self.merged_eigenvalues],
            "diagnostics": dict(self.diagnostics),
        }


def coalescence_diagnostics(L: Liouvillian, center: complex, radius: float) -> Dict[str, float]:
    """Eigenvalue gaps, eigenvector overlap and basis conditioning near ``center``.

    Eigenvectors come from per-eigenvalue null spaces, so exactly degenerate
    but non-defective eigenvalues do not inflate the condition number.
    """
    M = L.matrix
    values = np.linalg.eigvals(M)
    inside = np.flatnonzero(np.abs(values - center) <= radius)
    if len(inside) < 2:
        raise ValueError(f"cluster around {center} of radius {radius} holds {len(inside)} eigenvalue(s)")
    scale = float(np.linalg.norm(M, 2))
    # smaller merge tolerance than the spectral default: split near-EP eigenvalues stay separate
    modes = _cluster_modes(L, values, 1e-13 * scale)
    cols = np.concatenate([mode.vectors for mode in modes], axis=1)
    cols = cols / np.linalg.norm(cols, axis=0)
    lam_cols = np.concatenate([[mode.value] * mode.vectors.shape[1] for mode in modes])
    sel = np.flatnonzero(np.abs(lam_cols - center) <= radius)
    vecs = cols[:, sel]
    min_dist = math.inf
    for a in range(len(sel)):
        for b in range(a + 1, len(sel)):
            overlap = abs(np.vdot(vecs[:, a], vecs[:, b]))
            min_dist = min(min_dist, math.sqrt(max(0.0, 2 - 2 * overlap)))
    vals = values[inside]
    gaps = [abs(vals[a] - vals[b]) for a in range(len(vals)) for b in range(a + 1, len(vals))]
    return {
        "n_eigenvalues": int(len(inside)),
        "min_eigenvalue_gap": float(min(gaps)),
        "min_eigenvector_distance": float(min_dist),
        "condition_number": float(np.linalg.cond(cols)),
    }


def _with(params: MachineParams, name: str, value: float) -> MachineParams:
    return params.replace(**{name: value})


def _local_conditions(p: MachineParams) -> Dict[str, float]:
    r = derived_rates(p)
    aux = spectral_aux(r)
    alpha = aux.alpha_s.real
    return {"eta_sq": r.eta_squared, "beta_sq": aux.beta_s_squared, "q": alpha**2 - aux.beta_s_squared, "alpha": alpha}


def _scan_grid(lo: float, hi: float, per_decade: int = 200) -> np.ndarray:
    if lo <= 0:
        lo = hi * 1e-6
    n = max(int(math.ceil(per_decade * math.log10(hi / lo))), per_decade) + 1
    return np.logspace(math.log10(lo), math.log10(hi), n)


def _roots(func, grid: np.ndarray, rtol: float = 1e-12) -> List[float]:
    vals = np.array([func(x) for x in grid])
    out = []
    for k in range(len(grid) - 1):
        a, b = vals[k], vals[k + 1]
        if a == 0:
            out.append(float(grid[k]))
        elif a * b < 0:
            out.append(float(optimize.bisect(func, grid[k], grid[k + 1], xtol=1e-300, rtol=rtol)))
    if vals[-1] == 0:
        out.append(float(grid[-1]))
    return out


def _diagnose(p: MachineParams, kind: EPKind) -> Tuple[List[complex], Dict[str, float]]:
    if kind is EPKind.ETA_ZERO:
        r = derived_rates(p)
        L = build_reduced_liouvillian(p, 6)
        merged = [complex(-r.Gamma / 2)]
        radius = max(1e-3 * r.Gamma, 1e-9)
    elif kind in (EPKind.GLOBAL_X, EPKind.GLOBAL_Y):
        aux = global_spectral_aux(p)
        L = build_global_liouvillian(p)
        freq = p.g + p.epsilon if kind is EPKind.GLOBAL_X else p.g - p.epsilon
        merged = [1j * freq - aux.Gamma / 4, -1j * freq - aux.Gamma / 4]
        radius = max(1e-3 * aux.Gamma, 1e-9)
    else:
        r = derived_rates(p)
        aux = spectral_aux(r)
        L = build_local_liouvillian(p)
        half, ie = r.Gamma / 2, 1j * p.epsilon
        if kind is EPKind.BETA_ZERO:
            root = np.sqrt(aux.alpha_s)
            merged = [ie - half - root, ie - half + root, -ie - half - root, -ie - half + root]
        else:
            merged = [ie - half, -ie - half]
        radius = max(1e-3 * r.Gamma, 1e-9)
    try:
        diag = coalescence_diagnostics(L, merged[0], radius)
    except ValueError:
        diag = {}
    return [complex(z) for z in merged], diag


def find_eps(
    params: MachineParams,
    free_parameter: str,
    bounds: Optional[Tuple[float, float]] = None,
    *,
    include_unreachable: bool = False,
    per_decade: int = 200,
) -> List[EPReport]:
    """Exceptional points reached by varying ``free_parameter`` within ``bounds``.

    Local regime: eta = 0 (third order), beta = 0, alpha -/+ beta = 0 and
    alpha = beta = 0. Global regime: X = 0 and Y = 0. With ``g = 0`` held
    fixed no exceptional point exists and the result is empty.
    """
    if free_parameter not in FREE_PARAMETERS:
        raise ParameterError(f"free parameter must be one of {FREE_PARAMETERS}")
    if bounds is None:
        lo, hi = DEFAULT_BOUNDS[free_parameter]
        bounds = (lo * params.epsilon, hi * params.epsilon)
    lo, hi = map(float, bounds)
    if not 0 <= lo < hi:
        raise ParameterError(f"invalid bounds {bounds}")
    if free_parameter != "g" and params.g == 0:
        return []
    if params.regime is Regime.GLOBAL and free_parameter == "g":
        hi = min(hi, params.epsilon * (1 - 1e-9))
    grid = _scan_grid(lo, hi, per_decade)

    found: List[Tuple[EPKind, float]] = []
    if params.regime is Regime.LOCAL:
        if free_parameter == "g":
            gbar = derived_rates(params).g_bar
            if lo <= gbar <= hi and gbar > 0:
                found.append((EPKind.ETA_ZERO, gbar))
        else:
            for x in _roots(lambda x: _local_conditions(_with(params, free_parameter, x))["eta_sq"], grid):
                found.append((EPKind.ETA_ZERO, x))
        for x in _roots(lambda x: _local_conditions(_with(params, free_parameter, x))["beta_sq"], grid):
            c = _local_conditions(_with(params, free_parameter, x))
            kind = EPKind.ALPHA_AND_BETA if abs(c["alpha"]) < 1e-9 * abs(c["q"] + 1e-300) ** 0.5 else EPKind.BETA_ZERO
            found.append((kind, x))
        for x in _roots(lambda x: _local_conditions(_with(params, free_parameter, x))["q"], grid):
            c = _local_conditions(_with(params, free_parameter, x))
            scale = max(abs(c["alpha"]), 1e-300)
            if abs(c["beta_sq"]) <= 1e-9 * scale**2 and abs(c["alpha"]) <= 1e-6 * derived_rates(_with(params, free_parameter, x)).Gamma ** 2:
                kind = EPKind.ALPHA_AND_BETA
            elif c["alpha"] > 0:
                kind = EPKind.ALPHA_MINUS_BETA
            else:
                kind = EPKind.ALPHA_PLUS_BETA
            found.append((kind, x))
        kinds = [EPKind.ETA_ZERO, EPKind.BETA_ZERO, EPKind.ALPHA_MINUS_BETA, EPKind.ALPHA_PLUS_BETA, EPKind.ALPHA_AND_BETA]
    else:
        if params.statistics is not Statistics.BOSONIC:
            raise UnsupportedCombinationError("global regime requires bosonic baths")
        for x in _roots(lambda x: global_spectral_aux(_with(params, free_parameter, x)).X, grid):
            found.append((EPKind.GLOBAL_X, x))
        for x in _roots(lambda x: global_spectral_aux(_with(params, free_parameter, x)).Y, grid):
            found.append((EPKind.GLOBAL_Y, x))
        kinds = [EPKind.GLOBAL_X, EPKind.GLOBAL_Y]

    reports = []
    for kind, x in sorted(found, key=lambda kx: (kinds.index(kx[0]), kx[1])):
        p = _with(params, free_parameter, x)
        if p.g == 0:
            continue
        merged, diag = _diagnose(p, kind)
        reports.append(EPReport(kind, EP_ORDER[kind], free_parameter, x, p, merged, diag))
    if include_unreachable:
        seen = {rep.kind for rep in reports}
        for kind in kinds:
            if kind not in seen:
                reports.append(EPReport(kind, EP_ORDER[kind], free_parameter, None, None, reachable=False))
    return reports


def ep_flags(params: MachineParams, rel_tol: float = 1e-9) -> Dict[str, bool]:
    """Whether ``params`` sits on each EP condition (to relative ``rel_tol``)."""
    if params.g == 0:
        keys = [k.value for k in (EPKind.GLOBAL_X, EPKind.GLOBAL_Y)] if params.regime is Regime.GLOBAL else [
            k.value for k in EPKind if not k.value.startswith("global")
        ]
        return {k: False for k in keys}
    if params.regime is Regime.GLOBAL:
        aux = global_spectral_aux(params)
        s = aux.Gamma**2
        return {EPKind.GLOBAL_X.value: abs(aux.X) <= rel_tol * s, EPKind.GLOBAL_Y.value: abs(aux.Y) <= rel_tol * s}
    r = derived_rates(params)
    c = _local_conditions(params)
    s2 = r.Gamma**2
    beta_zero = abs(c["beta_sq"]) <= rel_tol * s2**2
    q_zero = abs(c["q"]) <= rel_tol * s2**2
    alpha_zero = abs(c["alpha"]) <= rel_tol * s2
    return {
        EPKind.ETA_ZERO.value: abs(r.eta) < eta_switch(r),
        EPKind.BETA_ZERO.value: beta_zero and not alpha_zero,
        EPKind.ALPHA_MINUS_BETA.value: q_zero and c["alpha"] > 0 and not beta_zero,
        EPKind.ALPHA_PLUS_BETA.value: q_zero and c["alpha"] < 0 and not beta_zero,
        EPKind.ALPHA_AND_BETA.value: beta_zero and alpha_zero,
    }


def ep_loci(
    base: MachineParams,
    axis: str,
    values: Sequence[float],
    g_bounds: Tuple[float, float] = (1e-6, 0.5),
    kinds: Sequence[EPKind] = (EPKind.ETA_ZERO, EPKind.BETA_ZERO),
    T_ratios: Optional[Tuple[float, float]] = None,
) -> List[Tuple[float, float, EPKind]]:
    """EP curves in the (axis, g) plane.

    ``axis="gamma"`` sets gamma1 = gamma2 = value; ``axis="epsilon"`` sets the
    qubit gap, keeping T_k / epsilon fixed at ``T_ratios`` (default: the
    ratios of ``base``).
    """
    if axis not in ("gamma", "epsilon"):
        raise ParameterError("axis must be 'gamma' or 'epsilon'")
    if T_ratios is None:
        T_ratios = (base.T1 / base.epsilon, base.T2 / base.epsilon)
    rows = []
    for x in values:
        if axis == "gamma":
            p = base.replace(gamma1=x, gamma2=x)
        else:
            p = base.replace(epsilon=x, T1=T_ratios[0] * x, T2=T_ratios[1] * x)
        lo, hi = g_bounds[0] * p.epsilon, g_bounds[1] * p.epsilon
        for rep in find_eps(p.replace(g=max(p.g, lo)), "g", (lo, hi)):
            if rep.kind in kinds:
                rows.append((float(x), float(rep.value), rep.kind))
    return rows
