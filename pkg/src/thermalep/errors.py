"""Exception types raised across the package."""


class ThermalEPError(Exception):
    """Base class for all package errors."""


class ParameterError(ThermalEPError, ValueError):
    """A physical parameter lies outside its domain."""


class WrongBuilderError(ThermalEPError, ValueError):
    """A Liouvillian builder was called for the wrong regime."""


class UnsupportedCombinationError(ThermalEPError, ValueError):
    """The requested combination of options is not modelled."""


class DefectiveSpectrumError(ThermalEPError, ArithmeticError):
    """The eigenbasis is (numerically) incomplete; use the Jordan path."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NotAnEPError(ThermalEPError, ValueError):
    """A Jordan chain was requested away from the exceptional point."""


class SubspaceError(ThermalEPError, ValueError):
    """A state has components outside the subspace of a reduced Liouvillian."""


class ClassificationError(ThermalEPError, ValueError):
    """A damping regime cannot be assigned (for example g = 0)."""


class InvalidStateError(ThermalEPError, ValueError):
    """A matrix fails the density-matrix checks (Hermitian, unit trace, PSD)."""


class IntegrationError(ThermalEPError, ArithmeticError):
    """The ODE oracle cannot integrate the requested interval."""
