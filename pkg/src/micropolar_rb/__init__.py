"""Spectral Galerkin simulator for micropolar Rayleigh-Benard convection."""

__version__ = "0.1.0"
