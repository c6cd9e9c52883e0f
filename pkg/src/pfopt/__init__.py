"""Phase-field shape optimization of obstacles in stationary Navier-Stokes flow."""

__version__ = "0.1.0"
