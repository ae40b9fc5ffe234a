"""Time evolution of the two-qubit machine.

Three independent propagators are provided: the spectral decomposition
(weighted sum of right eigenmatrices), its Jordan-chain counterpart at the
eta = 0 exceptional point, and a fixed-step RK4 integrator used as an oracle.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from .errors import (
    ClassificationError,
    DefectiveSpectrumError,
    IntegrationError,
    InvalidStateError,
    NotAnEPError,
    SubspaceError,
)
from .model import (
    Liouvillian,
    MachineParams,
    Regime,
    bath_rates,
    build_liouvillian,
    derived_rates,
    global_eigenstates,
)
from .spectral import (
    JordanBlockData,
    SpectralData,
    eta_switch,
    jordan_chain,
    numeric_spectral_data,
)

log = logging.getLogger(__name__)

AUTO_COND_MAX = 1e6


class Provenance(str, enum.Enum):
    SPECTRAL = "spectral"
    SPECTRAL_EP = "spectral_ep"
    ODE = "ode"
    EXPM = "expm"


class Damping(str, enum.Enum):
    OVERDAMPED = "overdamped"
    UNDERDAMPED = "underdamped"
    CRITICAL = "critical"


class InitialKind(str, enum.Enum):
    THERMAL_PRODUCT = "thermal_product"
    GROUND = "ground"
    SINGLET = "singlet"
    EP_SUBSPACE = "ep_subspace"


# ---------------------------------------------------------------------------
# density matrices
# ---------------------------------------------------------------------------
def check_density_matrix(rho: np.ndarray, herm_tol=1e-12, trace_tol=1e-12, psd_tol=1e-10) -> None:
    rho = np.asarray(rho)
    if rho.shape != (4, 4):
        raise InvalidStateError(f"expected a 4x4 matrix, got shape {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > herm_tol:
        raise InvalidStateError("matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > trace_tol:
        raise InvalidStateError(f"trace {np.trace(rho).real:.15g} differs from 1")
    lo = float(np.linalg.eigvalsh(rho).min())
    if lo < -psd_tol:
        raise InvalidStateError(f"negative eigenvalue {lo:.3e}")


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Half the trace norm of rho - sigma."""
    diff = np.asarray(rho) - np.asarray(sigma)
    diff = (diff + diff.conj().T) / 2
    return float(0.5 * np.abs(np.linalg.eigvalsh(diff)).sum())


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_t, 4, 4)
    provenance: Provenance
    params: Optional[MachineParams] = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or len(t) != len(self.states):
            raise ValueError("times and states have inconsistent lengths")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        self.times = t

    def __len__(self) -> int:
        return len(self.times)

    def validate(self, psd_tol: float = 1e-10, tol: float = 1e-10) -> None:
        for rho in self.states:
            check_density_matrix(rho, herm_tol=tol, trace_tol=tol, psd_tol=psd_tol)

    def distances_to(self, sigma: np.ndarray) -> np.ndarray:
        return np.array([trace_distance(rho, sigma) for rho in self.states])


def _finish(states: np.ndarray) -> np.ndarray:
    # exact flows keep rho Hermitian; remove round-off antihermitian parts
    return (states + np.conj(np.swapaxes(states, 1, 2))) / 2


def _validated(times, states, provenance, params=None) -> Trajectory:
    traj = Trajectory(np.asarray(times, dtype=float), _finish(states), provenance, params)
    traj.validate()
    return traj


def default_time_grid(params: MachineParams, n: int = 400) -> np.ndarray:
    """Log-spaced grid on [1e-2/eps, 20/Gamma]."""
    G = derived_rates(params).Gamma
    return np.logspace(np.log10(1e-2 / params.epsilon), np.log10(20 / G), n)


# ---------------------------------------------------------------------------
# initial states
# ---------------------------------------------------------------------------
def _qubit_excited_population(params: MachineParams, T: float) -> float:
    gp, gm = bath_rates(params.statistics, params.epsilon, T, 1.0)
    return gp / (gp + gm)


def max_positive_scale(base: np.ndarray, direction: np.ndarray, tol: float = 1e-12, s_hi: float = 1e6) -> float:
    """Largest s with base + s * direction positive semi-definite (bisection)."""

    def ok(s):
        return np.linalg.eigvalsh(base + s * direction).min() >= -tol

    if not ok(0.0):
        raise InvalidStateError("base state is not positive")
    if ok(s_hi):
        return s_hi
    lo, hi = 0.0, s_hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * max(hi, 1e-300):
            break
    return lo


def initial_state(
    kind: Union[InitialKind, str],
    params: MachineParams,
    weights: Tuple[float, float] = (1.0, 1.0),
    *,
    jordan: Optional[JordanBlockData] = None,
    margin: float = 0.9,
) -> np.ndarray:
    """Named initial states in the {|11>, |10>, |01>, |00>} basis.

    ``EP_SUBSPACE`` builds rho_ss + w' rho' + w'' rho'' from the Jordan chain at
    g_bar. ``weights`` fix the direction in the (rho', rho'') plane; the
    magnitude is rescaled to ``margin`` times the largest positive scale
    whenever the requested weights would leave the state cone.
    """
    kind = InitialKind(kind)
    if kind is InitialKind.GROUND:
        return np.diag([0, 0, 0, 1]).astype(complex)
    if kind is InitialKind.SINGLET:
        v = global_eigenstates()["eps-"]
        return np.outer(v, v.conj()).astype(complex)
    if kind is InitialKind.THERMAL_PRODUCT:
        p1 = _qubit_excited_population(params, params.T1)
        p2 = _qubit_excited_population(params, params.T2)
        return np.kron(np.diag([p1, 1 - p1]), np.diag([p2, 1 - p2])).astype(complex)
    # EP subspace
    if jordan is None:
        r = derived_rates(params)
        jordan = jordan_chain(params.replace(g=r.g_bar)) if abs(r.eta) >= eta_switch(r) else jordan_chain(params)
    L = jordan.liouvillian
    rss = jordan.steady_state
    direction = weights[0] * L.unvec(jordan.rho_p) + weights[1] * L.unvec(jordan.rho_pp)
    direction = (direction + direction.conj().T) / 2
    s_max = max_positive_scale(rss, direction)
    scale = 1.0 if s_max >= 1.0 else margin * s_max
    rho = rss + scale * direction
    return (rho + rho.conj().T) / 2


def fig2_initial_states(params: MachineParams, margin: float = 0.9) -> list:
    """Three EP-subspace states with (w', w'') along (1,0), (0,1), (1,1), each at margin x max scale."""
    r = derived_rates(params)
    jd = jordan_chain(params.replace(g=r.g_bar))
    out = []
    for w in ((1.0, 0.0), (0.0, 1.0), (1.0, 1.0)):
        L = jd.liouvillian
        d = w[0] * L.unvec(jd.rho_p) + w[1] * L.unvec(jd.rho_pp)
        s = max_positive_scale(jd.steady_state, (d + d.conj().T) / 2)
        out.append(initial_state(InitialKind.EP_SUBSPACE, params, (margin * s * w[0], margin * s * w[1]), jordan=jd))
    return out


# ---------------------------------------------------------------------------
# overlaps and propagators
# ---------------------------------------------------------------------------
@dataclass
class OverlapCoefficients:
    """c_i = Tr(sigma_i^+ rho0); ``values[0]`` is 1 for any unit-trace state."""

    values: np.ndarray
    eigenvalues: np.ndarray
    at_ep: bool = False
    labels: Tuple[str, ...] = field(default_factory=tuple)

    def __getitem__(self, key):
        if isinstance(key, str):
            return self.values[self.labels.index(key)]
        return self.values[key]


def overlap_coefficients(data: Union[SpectralData, JordanBlockData], rho0: np.ndarray) -> OverlapCoefficients:
    L = data.liouvillian
    p0 = L.vec(rho0)  # raises SubspaceError outside a reduced subspace
    if isinstance(data, JordanBlockData):
        left = data.basis_left
        c = left.conj().T @ p0
        n_modes = data.mode_right.shape[1]
        lam = np.concatenate([data.mode_values, [data.lambda_bar] * 3])
        labels = tuple(f"mode{k}" for k in range(n_modes)) + ("rho4", "rho_p", "rho_pp")
        return OverlapCoefficients(c, lam, True, labels)
    c = data.left_vectors.conj().T @ p0
    labels = tuple(f"mode{k}" for k in range(len(c)))
    return OverlapCoefficients(c, data.eigenvalues.copy(), False, labels)


def propagate_spectral(rho0: np.ndarray, t_grid: Sequence[float], data: SpectralData, params=None) -> Trajectory:
    """rho(t) = sum_i c_i exp(lambda_i t) rho_i."""
    if data.defective_flag:
        raise DefectiveSpectrumError(
            "eigenbasis is ill-conditioned or incomplete; use the Jordan path (jordan_chain / propagate_spectral_ep)",
            data.diagnostics,
        )
    t = np.asarray(t_grid, dtype=float)
    c = overlap_coefficients(data, rho0).values
    P = (np.exp(np.outer(t, data.eigenvalues)) * c[None, :]) @ data.right_vectors.T
    L = data.liouvillian
    states = np.array([L.unvec(p) for p in P])
    return _validated(t, states, Provenance.SPECTRAL, params)


def propagate_spectral_ep(
    rho0: np.ndarray,
    t_grid: Sequence[float],
    jordan: JordanBlockData,
    spectral_data_rest=None,
    params: Optional[MachineParams] = None,
) -> Trajectory:
    """Evolution at the eta = 0 point from the generalised eigenbasis.

    The chain part contributes exp(lambda_bar t) times
    (c4 + alpha c5 t + alpha beta c6 t^2/2) rho4 + (c5 + beta c6 t) rho' + c6 rho''.
    The non-chain modes, including rho_3, are stored in ``jordan`` itself;
    ``spectral_data_rest`` is accepted for symmetry and ignored.
    """
    if params is not None and params != jordan.params:
        raise NotAnEPError("Jordan data was built for different parameters")
    t = np.asarray(t_grid, dtype=float)
    L = jordan.liouvillian
    oc = overlap_coefficients(jordan, rho0)
    m = jordan.mode_right.shape[1]
    c_modes = oc.values[:m]
    c4, c5, c6 = oc.values[m:]
    a, b, lam = jordan.alpha, jordan.beta, jordan.lambda_bar
    P = (np.exp(np.outer(t, jordan.mode_values)) * c_modes[None, :]) @ jordan.mode_right.T
    e = np.exp(lam * t)
    f4 = (c4 + a * c5 * t + a * b * c6 * t**2 / 2) * e
    fp = (c5 + b * c6 * t) * e
    fpp = c6 * e
    P = P + np.outer(f4, jordan.rho4) + np.outer(fp, jordan.rho_p) + np.outer(fpp, jordan.rho_pp)
    states = np.array([L.unvec(p) for p in P])
    return _validated(t, states, Provenance.SPECTRAL_EP, jordan.params)


def rk4_increment(M: np.ndarray, h: float) -> np.ndarray:
    """D such that one classical RK4 step of p' = M p is p -> p + D p."""
    hM = h * M
    eye = np.eye(M.shape[0])
    return hM @ (eye + hM @ (eye + hM @ (eye + hM / 4) / 3) / 2)


def _power_increment(D: np.ndarray, n: int) -> np.ndarray:
    """E with (I + D)^n = I + E, accumulated without forming I + D."""
    E = np.zeros_like(D)
    B = D
    while n:
        if n & 1:
            E = E + B + E @ B
        n >>= 1
        if n:
            B = 2 * B + B @ B
    return E


def default_step(L: Liouvillian, refine: int = 8) -> float:
    """RK4 step: 0.005 over the largest rate in L, refined ``refine`` times."""
    scale = float(np.linalg.norm(L.matrix, 2))
    return 0.005 / max(scale, 1e-300) / refine


def propagate_ode(
    L: Liouvillian,
    rho0: np.ndarray,
    t_grid: Sequence[float],
    *,
    h: Optional[float] = None,
    mode: str = "power",
    max_steps: float = 1e13,
    params: Optional[MachineParams] = None,
) -> Trajectory:
    """Fixed-step classical RK4 on the vectorised master equation, from t = 0.

    Each grid interval is split into an integer number of equal steps no
    longer than ``h``. ``mode="power"`` applies the n-step RK4 map as a
    matrix power (identical recurrence, cheaper for long intervals);
    ``mode="loop"`` steps explicitly.
    """
    t = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t) <= 0) or t[0] < 0:
        raise ValueError("time grid must be non-negative and strictly increasing")
    h = default_step(L) if h is None else float(h)
    if not h > 0:
        raise IntegrationError("step size must be positive")
    M = L.matrix
    p = L.vec(rho0).astype(complex)
    ident = L.identity_vector
    out = []
    t_prev = 0.0
    for tk in t:
        dt = tk - t_prev
        if dt > 0:
            n = int(np.ceil(dt / h * (1 - 1e-12)))
            if n > max_steps:
                raise IntegrationError(f"{n} RK4 steps needed for an interval of {dt:g}")
            D = rk4_increment(M, dt / n)
            if mode == "power":
                p = p + _power_increment(D, n) @ p
            elif mode == "loop":
                for _ in range(n):
                    p = p + D @ p
            else:
                raise ValueError(f"unknown mode {mode!r}")
        drift = abs(ident @ p - 1)
        if drift > 1e-12:
            log.info("renormalising trace (drift %.3e) at t=%g", drift, tk)
            p = p / (ident @ p)
        out.append(L.unvec(p))
        t_prev = tk
    return _validated(t, np.array(out), Provenance.ODE, params)


def propagate_expm(L: Liouvillian, rho0: np.ndarray, t_grid: Sequence[float], params=None) -> Trajectory:
    """Matrix-exponential evolution; well conditioned close to the EP."""
    t = np.asarray(t_grid, dtype=float)
    p0 = L.vec(rho0)
    states = np.array([L.unvec(linalg.expm(L.matrix * tk) @ p0) for tk in t])
    return _validated(t, states, Provenance.EXPM, params)


def smallest_liouvillian(params: MachineParams, rho0: np.ndarray) -> Liouvillian:
    """The lowest-dimensional Liouvillian whose subspace holds rho0."""
    if params.regime is Regime.GLOBAL:
        return build_liouvillian(params, 16)
    for dim in (6, 8):
        L = build_liouvillian(params, dim)
        try:
            L.vec(rho0)
        except SubspaceError:
            continue
        return L
    return build_liouvillian(params, 16)


def propagate(
    params: MachineParams,
    rho0: np.ndarray,
    t_grid: Sequence[float],
    method: str = "auto",
    dim: Optional[int] = None,
) -> Trajectory:
    """Dispatching propagator.

    ``auto`` uses the Jordan path when |eta| < eta_switch, the spectral
    decomposition when the eigenbasis condition number is below
    ``AUTO_COND_MAX`` and the matrix exponential in the narrow band in
    between, where round-off in the spectral sum grows like cond * 1e-16.
    """
    L = build_liouvillian(params, dim) if dim else smallest_liouvillian(params, rho0)
    if method == "ode":
        return propagate_ode(L, rho0, t_grid, params=params)
    if method == "expm":
        return propagate_expm(L, rho0, t_grid, params)
    if params.regime is Regime.LOCAL and params.g > 0:
        r = derived_rates(params)
        if abs(r.eta) < eta_switch(r):
            if method not in ("auto", "jordan"):
                raise DefectiveSpectrumError("parameters sit on the exceptional point; use the Jordan path")
            return propagate_spectral_ep(rho0, t_grid, jordan_chain(params, L.dim))
    if method == "jordan":
        raise NotAnEPError("Jordan path requested away from the exceptional point")
    sd = numeric_spectral_data(L)
    if method == "spectral":
        return propagate_spectral(rho0, t_grid, sd, params)
    if sd.defective_flag or sd.diagnostics["condition_number"] > AUTO_COND_MAX:
        return propagate_expm(L, rho0, t_grid, params)
    return propagate_spectral(rho0, t_grid, sd, params)


def steady_state(params: MachineParams) -> np.ndarray:
    """Stationary state of either regime."""
    if params.regime is Regime.LOCAL:
        from .spectral import analytic_steady_state

        return analytic_steady_state(params)
    sd = numeric_spectral_data(build_liouvillian(params, 16))
    rho = sd.steady_state
    return (rho + rho.conj().T) / 2


# ---------------------------------------------------------------------------
# damping regimes and the ratio R(t)
# ---------------------------------------------------------------------------
def classify_damping(params: MachineParams) -> Damping:
    if params.g == 0:
        raise ClassificationError("g = 0: decoupled qubits have no damping regime")
    r = derived_rates(params)
    if abs(r.eta) < eta_switch(r):
        return Damping.CRITICAL
    return Damping.OVERDAMPED if r.eta_squared > 0 else Damping.UNDERDAMPED


@dataclass
class RatioSeries:
    times: np.ndarray
    values: np.ndarray
    numerator: np.ndarray
    denominator: np.ndarray
    truncated: bool = False
    c6: complex = 0j

    def crossing_time(self) -> Optional[float]:
        """Earliest t* with R(t) < 1 for all grid points t >= t*."""
        above = np.flatnonzero(self.values >= 1)
        if len(self.values) == 0 or self.values[-1] >= 1:
            return None
        if len(above) == 0:
            return float(self.times[0])
        return float(self.times[above[-1] + 1])

    @property
    def crossing_guaranteed(self) -> bool:
        return abs(self.c6) > 1e-6


def _deviation_distances(L: Liouvillian, P: np.ndarray) -> np.ndarray:
    """Half trace norms of the deviations rho(t) - rho_ss stored as rows of P."""
    D = np.array([L.unvec(p) for p in P])
    D = (D + np.conj(np.swapaxes(D, 1, 2))) / 2
    return 0.5 * np.abs(np.linalg.eigvalsh(D)).sum(axis=1)


def _deviation_jordan(jd: JordanBlockData, rho0: np.ndarray, t: np.ndarray) -> np.ndarray:
    oc = overlap_coefficients(jd, rho0)
    m = jd.mode_right.shape[1]
    c_modes = oc.values[:m].copy()
    c_modes[np.argmin(np.abs(jd.mode_values))] = 0
    c4, c5, c6 = oc.values[m:]
    a, b = jd.alpha, jd.beta
    P = (np.exp(np.outer(t, jd.mode_values)) * c_modes[None, :]) @ jd.mode_right.T
    e = np.exp(jd.lambda_bar * t)
    P = P + np.outer((c4 + a * c5 * t + a * b * c6 * t**2 / 2) * e, jd.rho4)
    P = P + np.outer((c5 + b * c6 * t) * e, jd.rho_p) + np.outer(c6 * e, jd.rho_pp)
    return _deviation_distances(jd.liouvillian, P)


def _deviation_distances_to_steady(params: MachineParams, rho0: np.ndarray, t: np.ndarray, dim: int) -> np.ndarray:
    """T(rho(t), rho_ss) from the expansion without the stationary mode.

    Subtracting rho_ss from a propagated state leaves only round-off once the
    distance falls below ~1e-16; summing the decaying modes directly keeps
    full relative precision at late times.
    """
    L = build_liouvillian(params, dim)
    if params.regime is Regime.LOCAL and params.g > 0:
        r = derived_rates(params)
        if abs(r.eta) < eta_switch(r):
            return _deviation_jordan(jordan_chain(params, dim), rho0, t)
    sd = numeric_spectral_data(L)
    if sd.defective_flag or sd.diagnostics["condition_number"] > AUTO_COND_MAX:
        delta = L.vec(np.asarray(rho0, dtype=complex) - steady_state(params))
        P = np.array([linalg.expm(L.matrix * tk) @ delta for tk in t])
        return _deviation_distances(L, P)
    c = overlap_coefficients(sd, rho0).values.copy()
    c[np.argmin(np.abs(sd.eigenvalues))] = 0
    P = (np.exp(np.outer(t, sd.eigenvalues)) * c[None, :]) @ sd.right_vectors.T
    return _deviation_distances(L, P)


def ratio_R(
    params_ep: MachineParams,
    params_nonep: MachineParams,
    rho0: np.ndarray,
    t_grid: Sequence[float],
    dim: Optional[int] = None,
) -> RatioSeries:
    """T(rho_EP(t), rho_ss,EP) / T(rho(t), rho_ss).

    Both distances are summed mode by mode from the deviation to the
    stationary state, so the ratio stays meaningful after the individual
    distances drop below double-precision round-off of the states.
    """
    r = derived_rates(params_ep)
    if params_ep.g == 0 or abs(r.eta) >= eta_switch(r):
        raise NotAnEPError("params_ep must sit on the eta = 0 exceptional point")
    check_density_matrix(rho0)
    L = build_liouvillian(params_ep, dim) if dim else smallest_liouvillian(params_ep, rho0)
    jd = jordan_chain(params_ep, L.dim)
    t = np.asarray(t_grid, dtype=float)
    num = _deviation_jordan(jd, rho0, t)
    den = _deviation_distances_to_steady(params_nonep, rho0, t, L.dim)
    ok = den >= 1e-300
    truncated = not bool(ok.all())
    if truncated:
        stop = int(np.argmin(ok))
        t, num, den = t[:stop], num[:stop], den[:stop]
    c6 = overlap_coefficients(jd, rho0)["rho_pp"]
    return RatioSeries(t, num / den, num, den, truncated, complex(c6))


def count_crossings(values: np.ndarray, reference: float, dead_band: float = 1e-12) -> int:
    """Sign changes of values - reference, ignoring |deviation| below the dead band."""
    dev = np.asarray(values, dtype=float) - reference
    band = dead_band * max(abs(reference), 1e-300)
    signs = np.sign(dev[np.abs(dev) > band])
    return int(np.count_nonzero(signs[1:] != signs[:-1]))


def first_extremum_index(values: np.ndarray) -> int:
    """Index of the first interior local extremum (0 if the series is monotone)."""
    d = np.diff(np.asarray(values, dtype=float))
    idx = np.flatnonzero(np.sign(d[:-1]) * np.sign(d[1:]) < 0)
    return int(idx[0] + 1) if len(idx) else 0
