"""Heat currents, concurrence and other series along trajectories."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional

import numpy as np

from .model import (
    MachineParams,
    Regime,
    dissipator_superop,
    global_jump_operators,
    global_rates,
    local_dissipator,
    total_hamiltonian,
)

# sigma_y x sigma_y in the {|11>, |10>, |01>, |00>} basis
SIGMA_YY = np.fliplr(np.diag([-1.0, 1.0, 1.0, -1.0])).astype(complex)

OBSERVABLES = ("J1", "J2", "C", "populations", "abs_rho23", "trace_distance")


def bath_dissipator(params: MachineParams, bath: int) -> np.ndarray:
    """16x16 superoperator of the dissipator attached to bath 0 or 1."""
    if bath not in (0, 1):
        raise ValueError("bath index must be 0 or 1")
    if params.regime is Regime.LOCAL:
        return local_dissipator(params, bath)
    rates = global_rates(params)
    out = np.zeros((16, 16), dtype=complex)
    for (j, branch), op in global_jump_operators().items():
        if j != bath:
            continue
        out += rates.gamma_minus[(j, branch)] * dissipator_superop(op)
        out += rates.gamma_plus[(j, branch)] * dissipator_superop(op.conj().T)
    return out


def heat_current(rho: np.ndarray, params: MachineParams, bath_index: int) -> float:
    """Tr[(H_S + H_int) D_k(rho)]; positive when energy enters the qubits from bath k."""
    D = bath_dissipator(params, bath_index)
    H = total_hamiltonian(params)
    drho = (D @ np.asarray(rho).reshape(16)).reshape(4, 4)
    return float(np.trace(H @ drho).real)


def heat_currents(states: np.ndarray, params: MachineParams, bath_index: int) -> np.ndarray:
    D = bath_dissipator(params, bath_index)
    H = total_hamiltonian(params)
    # Tr(H X) = vec(H^T) . vec(X) in row-major order
    w = H.T.reshape(16) @ D
    return (np.asarray(states).reshape(len(states), 16) @ w).real


def energy(rho: np.ndarray, params: MachineParams) -> float:
    return float(np.trace(total_hamiltonian(params) @ rho).real)


def concurrence(rho: np.ndarray) -> float:
    """Wootters concurrence of a two-qubit state."""
    rho = np.asarray(rho, dtype=complex)
    tilde = SIGMA_YY @ rho.conj() @ SIGMA_YY
    mu = np.linalg.eigvals(rho @ tilde).real
    roots = np.sqrt(np.sort(np.clip(mu, 0.0, None))[::-1])
    return float(min(1.0, max(0.0, roots[0] - roots[1:].sum())))


@dataclass
class ObservableSeries:
    name: str
    times: np.ndarray
    values: np.ndarray
    steady_value: float
    normalized: bool = False

    def normalize(self) -> "ObservableSeries":
        if self.steady_value == 0:
            raise ZeroDivisionError(f"steady value of {self.name} is zero")
        if self.normalized:
            return self
        return ObservableSeries(self.name, self.times, self.values / self.steady_value, self.steady_value, True)


def trajectory_observables(
    trajectory,
    params: MachineParams,
    which: Iterable[str] = OBSERVABLES,
    steady: Optional[np.ndarray] = None,
) -> List[ObservableSeries]:
    """Series of the requested observables; steady values from the stationary state."""
    from .dynamics import steady_state, trace_distance

    which = list(which)
    unknown = [w for w in which if w not in OBSERVABLES]
    if unknown:
        raise ValueError(f"unknown observable(s) {unknown}; choose from {OBSERVABLES}")
    rss = steady_state(params) if steady is None else steady
    t = trajectory.times
    states = trajectory.states
    out = []
    for name in which:
        if name in ("J1", "J2"):
            k = int(name[1]) - 1
            out.append(ObservableSeries(name, t, heat_currents(states, params, k), heat_current(rss, params, k)))
        elif name == "C":
            vals = np.array([concurrence(r) for r in states])
            out.append(ObservableSeries(name, t, vals, concurrence(rss)))
        elif name == "populations":
            for i, label in enumerate(("11", "10", "01", "00")):
                out.append(ObservableSeries(f"p{label}", t, states[:, i, i].real.copy(), float(rss[i, i].real)))
        elif name == "abs_rho23":
            out.append(ObservableSeries(name, t, np.abs(states[:, 1, 2]), float(abs(rss[1, 2]))))
        else:
            vals = np.array([trace_distance(r, rss) for r in states])
            out.append(ObservableSeries(name, t, vals, 0.0))
    return out
