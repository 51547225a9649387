"""Predictor feedback for nonlinear systems with input/measurement delays and a compact absorbing set."""
__version__ = "0.1.0"
