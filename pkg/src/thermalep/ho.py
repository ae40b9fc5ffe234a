"""Damped harmonic oscillator in phase-space form, f = (p, x), f' = M f.

The default convention is m x'' + 2 gamma x' + k x = 0, whose exceptional
point (critical damping) sits at gamma^2 = m k. ``convention="main"`` uses
m x'' + gamma x' + k x = 0 instead (critical at gamma^2 = 4 m k).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ParameterError
from .model import MachineParams, derived_rates

EP_REL_TOL = 1e-12


class HORegime(str, enum.Enum):
    OVERDAMPED = "overdamped"
    UNDERDAMPED = "underdamped"
    CRITICAL = "critical"


@dataclass(frozen=True)
class HOParams:
    m: float = 1.0
    gamma: float = 1.0
    k: float = 1.0
    convention: str = "appendix"

    def __post_init__(self):
        if not self.m > 0 or not self.k > 0:
            raise ParameterError("mass and spring constant must be positive")
        if not self.gamma >= 0:
            raise ParameterError("damping must be non-negative")
        if self.convention not in ("appendix", "main"):
            raise ParameterError("convention must be 'appendix' or 'main'")

    @property
    def half_damping(self) -> float:
        """Coefficient c/2 of x' written as m x'' + c x' + k x = 0."""
        return self.gamma if self.convention == "appendix" else self.gamma / 2

    @property
    def discriminant(self) -> float:
        """(c/2)^2 - m k; zero at critical damping."""
        g = self.half_damping
        return g * g - self.m * self.k

    @property
    def zeta(self) -> float:
        return self.half_damping / np.sqrt(self.m * self.k)

    @property
    def at_ep(self) -> bool:
        return abs(self.discriminant) < EP_REL_TOL * self.m * self.k

    def regime(self) -> HORegime:
        if self.at_ep:
            return HORegime.CRITICAL
        return HORegime.OVERDAMPED if self.discriminant > 0 else HORegime.UNDERDAMPED


def ho_matrix(params: HOParams) -> np.ndarray:
    """Rows (-c/m, -k; 1/m, 0) acting on (p, x)."""
    c = 2 * params.half_damping
    return np.array([[-c / params.m, -params.k], [1 / params.m, 0.0]])


def ho_eigenvalues(params: HOParams) -> np.ndarray:
    g, m = params.half_damping, params.m
    root = np.sqrt(complex(params.discriminant))
    return np.array([-g / m + root / m, -g / m - root / m])


def ho_jordan_basis(params: HOParams):
    """S = (v1, v2) with (M - lambda) v2 = ((g^2 + 1)/m) v1 at the EP."""
    g, m = params.half_damping, params.m
    S = np.array([[-g, 1.0], [1.0, g]])
    return -g / m, S, (g * g + 1) / m


def ho_propagate(params: HOParams, f0: Sequence[float], t_grid: Sequence[float]) -> np.ndarray:
    """Rows (p(t), x(t)); Jordan form at the EP, eigen-expansion elsewhere."""
    t = np.asarray(t_grid, dtype=float)
    f0 = np.asarray(f0, dtype=float)
    if params.at_ep:
        lam, S, c = ho_jordan_basis(params)
        a1, a2 = np.linalg.solve(S, f0)
        e = np.exp(lam * t)
        coef1 = (a1 + c * a2 * t) * e
        coef2 = a2 * e
        return np.outer(coef1, S[:, 0]) + np.outer(coef2, S[:, 1])
    lam = ho_eigenvalues(params)
    m = params.m
    V = np.array([[lam[0] * m, lam[1] * m], [1.0, 1.0]], dtype=complex) / m  # (lambda, 1/m)
    alpha = np.linalg.solve(V, f0.astype(complex))
    out = (np.exp(np.outer(t, lam)) * alpha[None, :]) @ V.T
    return out.real


def ho_propagate_rk4(params: HOParams, f0: Sequence[float], t_grid: Sequence[float], h: float = None) -> np.ndarray:
    """Fixed-step RK4 oracle, stepping from t = 0."""
    from .dynamics import _power_increment, rk4_increment

    M = ho_matrix(params)
    if h is None:
        h = 1e-3 / max(np.abs(ho_eigenvalues(params)).max(), 1e-300)
    f = np.asarray(f0, dtype=float).copy()
    out = []
    t_prev = 0.0
    for tk in np.asarray(t_grid, dtype=float):
        dt = tk - t_prev
        if dt < 0:
            raise ValueError("time grid must be non-decreasing from 0")
        if dt > 0:
            n = int(np.ceil(dt / h * (1 - 1e-12)))
            f = f + _power_increment(rk4_increment(M, dt / n), n) @ f
        out.append(f.copy())
        t_prev = tk
    return np.array(out)


@dataclass
class HORatio:
    times: np.ndarray
    values: np.ndarray
    truncated: bool = False


def ho_ratio(params_ep: HOParams, params_nonep: HOParams, f0: Sequence[float], t_grid: Sequence[float]) -> HORatio:
    """|f_EP(t)| / |f(t)| with Euclidean norms."""
    if not params_ep.at_ep:
        raise ParameterError("params_ep must satisfy critical damping")
    if (params_ep.m, params_ep.k) != (params_nonep.m, params_nonep.k):
        raise ParameterError("comparator must share m and k")
    t = np.asarray(t_grid, dtype=float)
    num = np.linalg.norm(ho_propagate(params_ep, f0, t), axis=1)
    den = np.linalg.norm(ho_propagate(params_nonep, f0, t), axis=1)
    ok = den >= 1e-300
    if not ok.all():
        stop = int(np.argmin(ok))
        return HORatio(t[:stop], num[:stop] / den[:stop], True)
    return HORatio(t, num / den)


def ho_from_machine(params: MachineParams) -> HOParams:
    """Oscillator with m = 1, k = (2g)^2, gamma = |DeltaGamma|: its discriminant equals eta^2."""
    r = derived_rates(params)
    return HOParams(m=1.0, gamma=abs(r.DeltaGamma), k=(2 * params.g) ** 2)
