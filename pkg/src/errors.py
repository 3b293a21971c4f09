"""
Exception hierarchy for the waveguide transport simulator.
"""
from typing import List, Optional

import numpy as np


class SimulationError(Exception):
    """Root of every error raised by the simulator."""

    exit_code = 3


class ModeIndexError(SimulationError, ValueError):
    """Invalid TE/TM transverse index pair."""


class SingularModeError(SimulationError):
    """Working wavenumber sits on a mode cutoff."""

    def __init__(self, message: str, mode=None):
        super().__init__(message)
        self.mode = mode


class ImageSumConvergenceError(SimulationError):
    def __init__(self, message: str, last_values: Optional[List[np.ndarray]] = None):
        super().__init__(message)
        self.last_values = last_values or []


class PreconditionError(SimulationError, ValueError):
    """Inputs violate an operation precondition."""


class SolverError(SimulationError):
    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class IntegrationError(SimulationError):
    """Time-domain integration failed."""


class MeasurementError(SimulationError):
    """Incident intensity vanished on the detector grid."""


class RealizationError(SimulationError):
    """Random placement could not satisfy the minimum separation."""

    exit_code = 2


class FitError(SimulationError):
    """Scaling fit cannot be performed on the supplied curve."""


class ConfigError(SimulationError, ValueError):
    exit_code = 2

    def __init__(self, message: str, key: Optional[str] = None, suggestion: Optional[str] = None):
        if suggestion:
            message = f"{message} (did you mean '{suggestion}'?)"
        super().__init__(message)
        self.key = key
        self.suggestion = suggestion


class OutputError(SimulationError):
    exit_code = 4
