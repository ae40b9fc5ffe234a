"""Two-qubit thermal machine: parameters, bath rates and Liouvillian matrices.

Conventions used everywhere in the package:

* units hbar = k_B = 1, energies in units of the qubit gap when ``epsilon = 1``;
* two-qubit basis ordered ``|11>, |10>, |01>, |00>`` (qubit 1 is the left
  factor, ``|1>`` is the excited level);
* row-major vectorisation, ``p[4*i + j] = rho[i, j]``, so that
  ``vec(A rho B) = kron(A, B.T) @ vec(rho)``.

With this ordering the local Liouvillian coincides entry by entry with the
explicit 16x16 matrix of the weak-coupling model.
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ParameterError, UnsupportedCombinationError, WrongBuilderError

BASIS_CONVENTION = "basis=|11>,|10>,|01>,|00>;vec=row-major"
BASIS_LABELS = ("11", "10", "01", "00")


class Statistics(str, enum.Enum):
    FERMIONIC = "fermionic"
    BOSONIC = "bosonic"


class Regime(str, enum.Enum):
    LOCAL = "local"
    GLOBAL = "global"


class LiouvillianKind(str, enum.Enum):
    LOCAL_FULL = "local_full"
    LOCAL_REDUCED_X8 = "local_reduced_x8"
    LOCAL_REDUCED_6 = "local_reduced_6"
    GLOBAL_FULL = "global_full"


# ---------------------------------------------------------------------------
# single-qubit and two-qubit operators in the (|1>, |0>) ordering
# ---------------------------------------------------------------------------
_SP = np.array([[0, 1], [0, 0]], dtype=complex)  # |1><0|
_SM = _SP.T.copy()  # |0><1|
_I2 = np.eye(2, dtype=complex)

SIGMA_PLUS = (np.kron(_SP, _I2), np.kron(_I2, _SP))
SIGMA_MINUS = (np.kron(_SM, _I2), np.kron(_I2, _SM))

KET = {label: np.eye(4, dtype=complex)[:, k] for k, label in enumerate(BASIS_LABELS)}


def system_hamiltonian(epsilon: float) -> np.ndarray:
    """H_S = epsilon * sum_k sigma_+^(k) sigma_-^(k)."""
    return epsilon * sum(sp @ sm for sp, sm in zip(SIGMA_PLUS, SIGMA_MINUS))


def interaction_hamiltonian(g: float) -> np.ndarray:
    """Flip-flop coupling g (s+^(1) s-^(2) + s-^(1) s+^(2))."""
    sp1, sp2 = SIGMA_PLUS
    sm1, sm2 = SIGMA_MINUS
    return g * (sp1 @ sm2 + sm1 @ sp2)


def total_hamiltonian(params: "MachineParams") -> np.ndarray:
    return system_hamiltonian(params.epsilon) + interaction_hamiltonian(params.g)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class MachineParams:
    """Physical parameters {epsilon, T1, T2, gamma1, gamma2, g} of the machine."""

    epsilon: float = 1.0
    T1: float = 3.0
    T2: float = 0.7
    gamma1: float = 0.01
    gamma2: float = 0.01
    g: float = 0.005
    statistics: Statistics = Statistics.BOSONIC
    regime: Regime = Regime.LOCAL

    def __post_init__(self):
        object.__setattr__(self, "statistics", Statistics(self.statistics))
        object.__setattr__(self, "regime", Regime(self.regime))
        for name in ("epsilon", "T1", "T2", "gamma1", "gamma2", "g"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ParameterError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, float(value))
        if self.epsilon <= 0:
            raise ParameterError(f"epsilon must be > 0, got {self.epsilon}")
        if self.gamma1 <= 0 or self.gamma2 <= 0:
            raise ParameterError("gamma1 and gamma2 must be > 0")
        if self.T1 < 0 or self.T2 < 0:
            raise ParameterError("temperatures must be >= 0")
        if self.g < 0:
            raise ParameterError(f"g must be >= 0, got {self.g}")

    def replace(self, **changes) -> "MachineParams":
        return dataclasses.replace(self, **changes)

    @property
    def validity_warning(self) -> Optional[str]:
        """Non-fatal note when the local-regime hierarchy g <~ gamma << eps fails."""
        if self.regime is not Regime.LOCAL:
            return None
        gmax = max(self.gamma1, self.gamma2)
        notes = []
        if gmax > 0.1 * self.epsilon:
            notes.append("bath coupling not small compared to epsilon")
        if self.g > 0.1 * self.epsilon:
            notes.append("inter-qubit coupling not small compared to epsilon")
        if self.g > 10 * gmax:
            notes.append("inter-qubit coupling exceeds bath couplings")
        return "; ".join(notes) or None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["statistics"] = self.statistics.value
        d["regime"] = self.regime.value
        return d


def occupation(statistics: Statistics, energy: float, T: float) -> float:
    """Fermi or Bose occupation of a mode at ``energy`` for temperature ``T``."""
    if T == 0:
        return 0.0
    x = energy / T
    if Statistics(statistics) is Statistics.FERMIONIC:
        return float(np.exp(-x) / (1.0 + np.exp(-x)))
    return float(1.0 / np.expm1(x))


def bath_rates(statistics, epsilon: float, T: float, gamma: float) -> Tuple[float, float]:
    """Incoming and outgoing rates (gamma n, gamma (1 -/+ n)) of one bath.

    The ratio of the two is exp(-epsilon/T) for both statistics; at T = 0 the
    incoming rate is zero.
    """
    if epsilon <= 0:
        raise ParameterError(f"epsilon must be > 0, got {epsilon}")
    if gamma <= 0:
        raise ParameterError(f"gamma must be > 0, got {gamma}")
    if T < 0:
        raise ParameterError(f"T must be >= 0, got {T}")
    if T == 0:
        return 0.0, float(gamma)
    n = occupation(statistics, epsilon, T)
    if Statistics(statistics) is Statistics.FERMIONIC:
        return gamma * n, gamma * (1.0 - n)
    return gamma * n, gamma * (1.0 + n)


@dataclass(frozen=True)
class BathRates:
    gamma_plus: Tuple[float, float]
    gamma_minus: Tuple[float, float]
    g: float

    @property
    def Gamma1(self) -> float:
        return self.gamma_plus[0] + self.gamma_minus[0]

    @property
    def Gamma2(self) -> float:
        return self.gamma_plus[1] + self.gamma_minus[1]

    @property
    def Gamma(self) -> float:
        return self.Gamma1 + self.Gamma2

    @property
    def DeltaGamma(self) -> float:
        return (self.Gamma1 - self.Gamma2) / 2

    @property
    def eta_squared(self) -> float:
        # factored form keeps eta exactly zero when |DeltaGamma| == 2 g in floating point
        dg = abs(self.DeltaGamma)
        return (dg - 2 * self.g) * (dg + 2 * self.g)

    @property
    def eta(self) -> complex:
        """Principal square root of DeltaGamma^2 - 4 g^2."""
        return complex(np.sqrt(complex(self.eta_squared)))

    @property
    def zeta_tilde(self) -> Optional[float]:
        if self.g == 0:
            return None
        return self.DeltaGamma / (2 * self.g)

    @property
    def g_bar(self) -> float:
        """Coupling at which eta vanishes."""
        return abs(self.DeltaGamma) / 2


def rates_from_gammas(gamma_plus: Sequence[float], gamma_minus: Sequence[float], g: float) -> BathRates:
    return BathRates(tuple(map(float, gamma_plus)), tuple(map(float, gamma_minus)), float(g))


def derived_rates(params: MachineParams) -> BathRates:
    """Rates of both baths evaluated at the bare qubit gap."""
    r1 = bath_rates(params.statistics, params.epsilon, params.T1, params.gamma1)
    r2 = bath_rates(params.statistics, params.epsilon, params.T2, params.gamma2)
    return BathRates((r1[0], r2[0]), (r1[1], r2[1]), params.g)


def bath_total_rate(statistics, epsilon: float, T: float, gamma: float) -> float:
    """Gamma_k in closed form: gamma (fermions) or gamma coth(eps / 2T) (bosons)."""
    if Statistics(statistics) is Statistics.FERMIONIC or T == 0:
        return float(gamma)
    return float(gamma / np.tanh(epsilon / (2 * T)))


# ---------------------------------------------------------------------------
# Liouvillian container and superoperator helpers
# ---------------------------------------------------------------------------
FULL_ENTRIES = tuple((i, j) for i in range(4) for j in range(4))
REDUCED6_ENTRIES = ((0, 0), (1, 1), (2, 2), (3, 3), (1, 2), (2, 1))
REDUCED8_ENTRIES = REDUCED6_ENTRIES + ((0, 3), (3, 0))


@dataclass(frozen=True, eq=False)
class Liouvillian:
    """Dense Liouvillian acting on the entries ``entries`` of a 4x4 state."""

    matrix: np.ndarray
    kind: LiouvillianKind
    entries: Tuple[Tuple[int, int], ...]
    basis_convention: str = BASIS_CONVENTION

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def flat_indices(self) -> np.ndarray:
        return np.array([4 * i + j for i, j in self.entries])

    @property
    def dagger_permutation(self) -> np.ndarray:
        """Index map sending the (i, j) coordinate to the (j, i) coordinate."""
        pos = {e: k for k, e in enumerate(self.entries)}
        return np.array([pos[(j, i)] for i, j in self.entries])

    @property
    def diagonal_positions(self) -> np.ndarray:
        return np.array([k for k, (i, j) in enumerate(self.entries) if i == j])

    @property
    def identity_vector(self) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.diagonal_positions] = 1.0
        return v

    def vec(self, rho: np.ndarray, check: bool = True, atol: float = 1e-12) -> np.ndarray:
        """Coordinates of a 4x4 matrix; ``check`` rejects weight outside the subspace."""
        rho = np.asarray(rho, dtype=complex)
        flat = rho.reshape(16)
        p = flat[self.flat_indices].copy()
        if check and self.dim < 16:
            rest = np.delete(flat, self.flat_indices)
            if np.max(np.abs(rest), initial=0.0) > atol:
                from .errors import SubspaceError

                raise SubspaceError(
                    f"state has entries outside the {self.kind.value} subspace "
                    f"(max |entry| = {np.max(np.abs(rest)):.3e})"
                )
        return p

    def unvec(self, p: np.ndarray) -> np.ndarray:
        flat = np.zeros(16, dtype=complex)
        flat[self.flat_indices] = p
        return flat.reshape(4, 4)

    def dagger(self, p: np.ndarray) -> np.ndarray:
        """Coordinates of the adjoint matrix."""
        return np.conj(np.asarray(p)[..., self.dagger_permutation])

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return self.unvec(self.matrix @ self.vec(rho))


def commutator_superop(H: np.ndarray) -> np.ndarray:
    """Superoperator of rho -> -i [H, rho] in row-major vectorisation."""
    eye = np.eye(H.shape[0])
    return -1j * (np.kron(H, eye) - np.kron(eye, H.T))


def dissipator_superop(A: np.ndarray) -> np.ndarray:
    """Superoperator of D[A] rho = A rho A^+ - {A^+ A, rho}/2."""
    eye = np.eye(A.shape[0])
    AdA = A.conj().T @ A
    return np.kron(A, A.conj()) - 0.5 * np.kron(AdA, eye) - 0.5 * np.kron(eye, AdA.T)


def _check_local(params: MachineParams):
    if params.regime is not Regime.LOCAL:
        raise WrongBuilderError("local Liouvillian requested for a global-regime parameter set")


def local_dissipator(params: MachineParams, bath: int) -> np.ndarray:
    """Superoperator gamma_k^+ D[s+^(k)] + gamma_k^- D[s-^(k)] of bath ``bath`` (0 or 1)."""
    rates = derived_rates(params)
    k = bath
    return rates.gamma_plus[k] * dissipator_superop(SIGMA_PLUS[k]) + rates.gamma_minus[k] * dissipator_superop(
        SIGMA_MINUS[k]
    )


def build_local_liouvillian(params: MachineParams) -> Liouvillian:
    """16x16 local (weak inter-qubit coupling) Liouvillian."""
    _check_local(params)
    L = commutator_superop(total_hamiltonian(params))
    L = L + local_dissipator(params, 0) + local_dissipator(params, 1)
    return Liouvillian(L, LiouvillianKind.LOCAL_FULL, FULL_ENTRIES)


def build_reduced_liouvillian(params: MachineParams, dim: int = 6) -> Liouvillian:
    """Restriction of the local Liouvillian to the populations and |10><01| coherences.

    ``dim=6`` acts on (rho11, rho22, rho33, rho44, rho23, rho32); ``dim=8``
    additionally carries the (rho14, rho41) coherences of X-states.
    """
    if dim not in (6, 8):
        raise ParameterError(f"reduced dimension must be 6 or 8, got {dim}")
    full = build_local_liouvillian(params)
    entries = REDUCED6_ENTRIES if dim == 6 else REDUCED8_ENTRIES
    kind = LiouvillianKind.LOCAL_REDUCED_6 if dim == 6 else LiouvillianKind.LOCAL_REDUCED_X8
    idx = np.array([4 * i + j for i, j in entries])
    # the subspace is invariant, so the restriction is just the sub-block
    return Liouvillian(full.matrix[np.ix_(idx, idx)].copy(), kind, entries)


# ---------------------------------------------------------------------------
# global master equation
# ---------------------------------------------------------------------------
def global_eigenstates() -> dict:
    """Eigenstates |0>, |eps->, |eps+>, |2> of H_S + H_int (g > 0)."""
    return {
        "0": KET["00"],
        "eps-": (KET["10"] - KET["01"]) / np.sqrt(2),
        "eps+": (KET["10"] + KET["01"]) / np.sqrt(2),
        "2": KET["11"],
    }


def global_jump_operators() -> dict:
    """Transition-resolved lowering operators L_j(eps-) and L_j(eps+) for j = 0, 1."""
    st = global_eigenstates()

    def proj(a, b):
        return np.outer(st[a], st[b].conj())

    ops = {}
    for j, sm in enumerate(SIGMA_MINUS):
        ops[(j, "-")] = proj("0", "0") @ sm @ proj("eps-", "eps-") + proj("eps+", "eps+") @ sm @ proj("2", "2")
        ops[(j, "+")] = proj("0", "0") @ sm @ proj("eps+", "eps+") + proj("eps-", "eps-") @ sm @ proj("2", "2")
    return ops


@dataclass(frozen=True)
class GlobalRates:
    """Bose rates of bath j at the two transition energies eps -/+ g."""

    eps_minus: float
    eps_plus: float
    gamma_plus: dict  # (j, '-'|'+') -> rate
    gamma_minus: dict

    def Gamma_j(self, j: int, branch: str) -> float:
        return self.gamma_plus[(j, branch)] + self.gamma_minus[(j, branch)]


def global_rates(params: MachineParams) -> GlobalRates:
    eps_m = params.epsilon - params.g
    eps_p = params.epsilon + params.g
    if eps_m <= 0:
        raise ParameterError("global regime needs g < epsilon")
    gp, gm = {}, {}
    for j, (T, gam) in enumerate(((params.T1, params.gamma1), (params.T2, params.gamma2))):
        for branch, e in (("-", eps_m), ("+", eps_p)):
            gp[(j, branch)], gm[(j, branch)] = bath_rates(Statistics.BOSONIC, e, T, gam)
    return GlobalRates(eps_m, eps_p, gp, gm)


def build_global_liouvillian(params: MachineParams) -> Liouvillian:
    """16x16 Liouvillian of the global master equation (Bose baths only)."""
    if params.regime is not Regime.GLOBAL:
        raise WrongBuilderError("global Liouvillian requested for a local-regime parameter set")
    if params.statistics is not Statistics.BOSONIC:
        raise UnsupportedCombinationError("the global master equation is defined for bosonic baths only")
    rates = global_rates(params)
    L = commutator_superop(total_hamiltonian(params))
    for key, op in global_jump_operators().items():
        L = L + rates.gamma_minus[key] * dissipator_superop(op)
        L = L + rates.gamma_plus[key] * dissipator_superop(op.conj().T)
    return Liouvillian(L, LiouvillianKind.GLOBAL_FULL, FULL_ENTRIES)


def build_liouvillian(params: MachineParams, dim: int = 16) -> Liouvillian:
    """Dispatch on regime and dimension."""
    if params.regime is Regime.GLOBAL:
        if dim != 16:
            raise UnsupportedCombinationError("reduced Liouvillians exist for the local regime only")
        return build_global_liouvillian(params)
    if dim == 16:
        return build_local_liouvillian(params)
    return build_reduced_liouvillian(params, dim)
