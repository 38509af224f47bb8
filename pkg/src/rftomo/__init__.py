"""Random-field quantum-state tomography: simulate, reconstruct and analyze single-observable records."""

__version__ = "0.1.0"
