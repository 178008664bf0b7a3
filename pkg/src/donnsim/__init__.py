"""Desk-scale simulator of a digital optical neural network (DONN).

Optical links distribute activation and weight bits to a grid of electronic
multiply-accumulate units.  The package models the interconnect energy of
that fan-out, the bit-level optical channel (crosstalk, shot noise, kT/C
noise), and runs quantized MNIST inference through it.
"""

__version__ = "0.1.0"


class ConfigError(ValueError):
    """Raised when a configuration object violates its invariants."""


class UsageError(ValueError):
    """Raised for invalid call arguments (shapes, empty inputs, ranges)."""


class SimulationError(RuntimeError):
    """Raised when a simulation reaches an invalid state."""


class CalibrationError(SimulationError):
    """Raised when calibration frames cannot normalize a received frame."""
