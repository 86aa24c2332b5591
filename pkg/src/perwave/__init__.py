"""Spectral and nonlinear stability laboratory for periodic viscous waves."""
