"""mdplab: simulation and statistical verification for distribution-dependent SDEs."""

__version__ = "0.1.0"
