"""
Exception types raised by the simulation backend.

Library code raises these; the run layer turns them into error records.
"""

from typing import Any, Optional


class AhsimError(Exception):
    """Base class for all simulation errors."""


class ConfigError(AhsimError, ValueError):
    """Invalid run configuration. `path` is the dotted field path."""

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class BasisError(AhsimError, ValueError):
    """Invalid ladder basis request or non-finite overlap."""


class BathError(AhsimError, ValueError):
    """Invalid bath description or coefficient request."""


class GeneratorError(AhsimError, ValueError):
    """Generator assembly failed (dimension mismatch, bad weights, size guard)."""


class GridError(AhsimError, ValueError):
    """Phase-space grid too small or too coarse for the requested fields."""


class IntegralError(AhsimError, RuntimeError):
    """A quadrature did not converge."""


class PropagationError(AhsimError, RuntimeError):
    """Time propagation aborted. Keeps the last good state for diagnostics."""

    def __init__(self, message: str, time: float = 0.0, last_state: Any = None):
        self.time = time
        self.last_state = last_state
        super().__init__(f"{message} (t={time:.6g})")
