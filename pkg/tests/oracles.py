"""Independent reference values used across the tests."""

import math

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import integrate


def normal_expectation(phi, sigma, x0=0.0, t=1.0, n=80):
    """E[phi(x0 + sigma sqrt(t) N)] by Gauss-Hermite quadrature."""
    nodes, weights = hermegauss(n)
    return float(np.dot(weights, phi(x0 + sigma * math.sqrt(t) * nodes)) / math.sqrt(2 * math.pi))


def penalized_linear_gap(c, n, tau):
    """u(t) - v^n(t) for u = c (T - t) and g = 0, by quadrature of the
    explicit solution y^n_t = int_t^T n e^{n (t - s)} c (T - s) ds, tau = T - t."""
    val, _ = integrate.quad(lambda r: n * math.exp(-n * r) * c * (tau - r), 0.0, tau, limit=200)
    return c * tau - val
