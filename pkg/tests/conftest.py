import numpy as np
import pytest

from thermalep.model import MachineParams, Regime, Statistics

FIG3 = MachineParams(epsilon=1.0, T1=3.0, T2=0.7, gamma1=0.01, gamma2=0.01, g=0.005)
FIG4 = MachineParams(epsilon=1.0, T1=1.0, T2=0.1, gamma1=0.001, gamma2=0.011, g=0.005)

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def random_params(rng, regime=Regime.LOCAL, statistics=None, g_max=0.1):
    """Draw from eps in [0.5, 2], T in [0.05, 5], gamma in [1e-4, 0.1] (log), g in [0, g_max]."""
    if statistics is None:
        statistics = Statistics.BOSONIC if rng.random() < 0.5 else Statistics.FERMIONIC
    if regime is Regime.GLOBAL:
        statistics = Statistics.BOSONIC
    return MachineParams(
        epsilon=float(rng.uniform(0.5, 2.0)),
        T1=float(rng.uniform(0.05, 5.0)),
        T2=float(rng.uniform(0.05, 5.0)),
        gamma1=float(10 ** rng.uniform(-4, -1)),
        gamma2=float(10 ** rng.uniform(-4, -1)),
        g=float(rng.uniform(0.0, g_max)),
        statistics=statistics,
        regime=regime,
    )


def random_density_matrix(rng, dim=4):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def fig3():
    return FIG3


@pytest.fixture(scope="session")
def fig4():
    return FIG4


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
