"""Numerical laboratory for Hermitian-Yang-Mills flows, Chern-Weil
invariants, and curvature diagnostics on discretized compact Hermitian
surfaces."""

__version__ = "0.1.0"
