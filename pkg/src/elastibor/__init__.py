"""Solver for time-harmonic elastic scattering from rigid axisymmetric bodies."""

__version__ = "0.1.0"
