"""Harmonic measure and flatness diagnostics on self-similar fractal boundaries."""
