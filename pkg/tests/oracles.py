"""Independent reference implementations used to freeze expected test values.

Everything here is deliberately naive (sorting, dense linear algebra, scalar
bisection, finite differences) so that test expectations never share code
with the library under test.
"""

import math
from statistics import NormalDist

import numpy as np


def left_quantile(values, q):
    """Lower (left-continuous) empirical q-quantile by explicit sorting:
    the ceil(n*q)-th order statistic, with the minimum for q = 0."""
    s = sorted(float(v) for v in values)
    k = math.ceil(len(s) * q)
    return s[max(k, 1) - 1]


def ls_normal_equations(P, y):
    """Dense least-squares coefficients via the normal equations."""
    P = np.asarray(P, dtype=float)
    return np.linalg.solve(P.T @ P, P.T @ np.asarray(y, dtype=float))


def logistic_cell_mle(y, lo=-30.0, hi=30.0, tol=1e-13):
    """Scalar logistic MLE by bisection on mean(sigmoid(b)) = mean(y)."""
    ybar = float(np.mean(y))
    f = lambda b: 1.0 / (1.0 + math.exp(-b)) - ybar
    a, b = lo, hi
    while b - a > tol:
        mid = 0.5 * (a + b)
        if f(a) * f(mid) <= 0:
            b = mid
        else:
            a = mid
    return 0.5 * (a + b)


def fd(f, t, h=1e-6):
    """Central finite difference of a scalar function."""
    return (f(t + h) - f(t - h)) / (2.0 * h)


def bspline_count(cells, m):
    """Dimension of the degree-(m-1) spline space on `cells` uniform cells
    with simple interior knots: cells + m - 1."""
    return cells + m - 1


def hat_gram(h):
    """Exact Gram matrix of the two linear hat functions restricted to one
    cell of width h: integrals of t^2, t(1-t) over [0,1] scaled by h."""
    return h * np.array([[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]])


def tridiag_toeplitz_inverse(diag, off, K):
    """Dense inverse of the K x K symmetric tridiagonal Toeplitz matrix via
    the classical theta/phi two-term recurrences (exact in float)."""
    theta = np.empty(K + 1)
    theta[0], theta[1] = 1.0, diag
    for i in range(2, K + 1):
        theta[i] = diag * theta[i - 1] - off * off * theta[i - 2]
    phi = np.empty(K + 2)
    phi[K + 1], phi[K] = 1.0, diag
    for i in range(K - 1, 0, -1):
        phi[i] = diag * phi[i + 1] - off * off * phi[i + 2]
    inv = np.empty((K, K))
    for i in range(1, K + 1):
        for j in range(i, K + 1):
            val = ((-off) ** (j - i)) * theta[i - 1] * phi[j + 1] / theta[K]
            inv[i - 1, j - 1] = val
            inv[j - 1, i - 1] = val
    return inv


def tridiag_decay_ratio(diag, off):
    """Asymptotic per-step decay of the inverse of a symmetric tridiagonal
    Toeplitz matrix: the smaller-magnitude root of off*x^2 + diag*x + off."""
    disc = math.sqrt(diag * diag - 4.0 * off * off)
    return abs((-diag + disc) / (2.0 * off))


def normal_quantile(p):
    return NormalDist().inv_cdf(p)


def max_abs_normal_quantile(level, k=1):
    """The level-quantile of the max of k independent |N(0,1)| variables:
    solve (2*Phi(c) - 1)^k = level."""
    return NormalDist().inv_cdf(0.5 * (1.0 + level ** (1.0 / k)))


def empirical_t3_quantile(q, scale=1.0, n=1_000_000, seed=2024):
    """Monte Carlo location-scale t(3) quantile, the cross-check for the
    closed-form conditional quantile of the heavy-tailed designs."""
    draws = np.random.default_rng(seed).standard_t(3, n) * scale
    return left_quantile(draws, q)
