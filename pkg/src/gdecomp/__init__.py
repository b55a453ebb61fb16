"""Numerical toolkit for G-expectations, G-BSDEs and the nonlinear
Doob-Meyer decomposition of g-supermartingales under volatility uncertainty."""

__version__ = "0.1.0"
