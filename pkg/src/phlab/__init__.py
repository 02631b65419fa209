"""Simulation and analysis of heralded photon-pair experiments with frequency conversion."""

__version__ = "0.1.0"
