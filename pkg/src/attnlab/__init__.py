"""Numerical laboratory for self-attention particle dynamics under low-rank perturbations."""

__version__ = "0.1.0"
