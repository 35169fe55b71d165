"""Stochastic transport equations with divergence-free noise on the torus and the sphere."""

__version__ = "0.1.0"
