"""Thermal two-qubit machine: Liouvillian spectra, exceptional points and dynamics."""
from .model import MachineParams, Regime, Statistics

__version__ = "0.1.0"

__all__ = ["MachineParams", "Regime", "Statistics", "__version__"]
