"""Sandwich variance objects built on banded linear algebra.

For a fitted coefficient process this module assembles, per loss index q,

* the curvature Gram matrix ``Qhat = E_n[p p' Psi1_hat deta(mu_hat)^2]``,
* the score covariance ``Sigmahat(q, qt) = E_n[S_hat p p' deta deta]``,
* the pointwise variance ``Omega = p^(v)' Qhat^{-1} Sigmahat Qhat^{-1} p^(v)``,
* the Bahadur linear term ``L(x, q) = -p^(v)(x)' Qhat^{-1} E_n[p deta psi]``.

Locally supported bases make all these matrices banded in the basis index;
factorizations and solves use banded Cholesky throughout (a dense inverse is
never formed).  The inverse of such a Gram matrix decays exponentially off
the band, which ``banded_decay_report`` makes measurable.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded, eig_banded

from .exceptions import SingularQ
from .solver import FitResult, Dataset, accumulate_banded, accumulate_grad

#: diagonal ridge factor applied before factorization
RIDGE = 1e-10
#: smallest admissible regularized eigenvalue
MIN_EIG = 1e-12


class BandedMatrix:
    """Symmetric banded matrix in scipy upper-packed storage.

    ``ab[bw + i - j, j]`` holds entry (i, j) for ``j - bw <= i <= j``.
    """

    def __init__(self, ab, bw):
        self.ab = np.asarray(ab, dtype=float)
        self.bw = int(bw)
        self.K = self.ab.shape[1]

    def to_dense(self):
        A = np.zeros((self.K, self.K))
        for off in range(self.bw + 1):
            diag = self.ab[self.bw - off, off:]
            idx = np.arange(self.K - off)
            A[idx, idx + off] = diag
            A[idx + off, idx] = diag
        return A

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for off in range(self.bw + 1):
            diag = self.ab[self.bw - off, off:]
            if x.ndim == 1:
                out[: self.K - off] += diag * x[off:]
                if off:
                    out[off:] += diag * x[: self.K - off]
            else:
                out[: self.K - off] += diag[:, None] * x[off:]
                if off:
                    out[off:] += diag[:, None] * x[: self.K - off]
        return out

    def quad_form(self, z):
        """z' A z for a vector, or per-column for a matrix."""
        Az = self.matvec(z)
        return float(z @ Az) if z.ndim == 1 else (z * Az).sum(axis=0)

    def diagonal(self):
        return self.ab[self.bw].copy()

    def add_ridge(self, amount):
        self.ab[self.bw] += amount

    def with_ridge(self, amount):
        out = BandedMatrix(self.ab.copy(), self.bw)
        out.add_ridge(amount)
        return out

    def eig_range(self):
        """(min, max) eigenvalue via banded symmetric eigensolver."""
        lower = eig_banded(self.ab, lower=False, eigvals_only=True,
                           select="i", select_range=(0, 0))
        upper = eig_banded(self.ab, lower=False, eigvals_only=True,
                           select="i", select_range=(self.K - 1, self.K - 1))
        return float(lower[0]), float(upper[0])


class CholBanded:
    """Banded Cholesky factor with triangular-solve helpers."""

    def __init__(self, banded: BandedMatrix):
        try:
            self.c = cholesky_banded(banded.ab, lower=False)
        except np.linalg.LinAlgError as e:
            raise SingularQ(f"banded Cholesky failed: {e}") from None
        self.bw = banded.bw
        self.K = banded.K

    def solve(self, b):
        """A^{-1} b through the two banded triangular solves."""
        return cho_solve_banded((self.c, False), b)

    def upper_factor_dense(self):
        """Dense upper factor U with U'U = A (used as a matrix square root)."""
        U = np.zeros((self.K, self.K))
        for off in range(self.bw + 1):
            idx = np.arange(self.K - off)
            U[idx, idx + off] = self.c[self.bw - off, off:]
        return U


class FitContext:
    """Read-only view of a fit handed to the loss plug-in hooks."""

    def __init__(self, fit: FitResult):
        self.fit = fit
        self.y = fit.y
        self.n = fit.n
        self.q_grid = fit.q_grid
        self._theta_cache = {}

    def theta_at(self, q):
        """Fitted index mu_hat(x_i, q) at the observations (interpolated)."""
        key = float(q)
        if key not in self._theta_cache:
            beta = self.fit.beta_at(key)
            d = self.fit.design
            self._theta_cache[key] = (d.vals * beta[d.cols]).sum(axis=1)
        return self._theta_cache[key]

    def eta_at(self, q):
        return self.fit.loss.link.eta(self.theta_at(q))

    def deta_at(self, q):
        return self.fit.loss.link.deta(self.theta_at(q))


def compute_Qhat(fit: FitResult, q, ctx: FitContext | None = None) -> BandedMatrix:
    """Plug-in curvature matrix ``E_n[p p' Psi1_hat deta^2]`` with ridge.

    Raises SingularQ when the regularized matrix is not numerically positive
    definite.
    """
    ctx = ctx or FitContext(fit)
    d = fit.design
    w = fit.loss.psi1_hat(ctx, q) * ctx.deta_at(q) ** 2
    Q = BandedMatrix(
        accumulate_banded(d.cols, d.vals, w, fit.n, fit.basis.K, fit.basis.bandwidth),
        fit.basis.bandwidth,
    )
    Q.add_ridge(RIDGE * Q.diagonal().sum() / Q.K)
    lo, _ = Q.eig_range()
    if lo < MIN_EIG:
        raise SingularQ(f"Qhat({q}) smallest eigenvalue {lo:.3e} below {MIN_EIG}")
    return Q


def compute_Sigmahat(fit: FitResult, q, qt, ctx: FitContext | None = None) -> BandedMatrix:
    """Plug-in score covariance ``E_n[S_hat(x_i) deta_q deta_qt p p']``."""
    ctx = ctx or FitContext(fit)
    d = fit.design
    s = fit.loss.s_hat(ctx, q, qt)
    w = np.broadcast_to(np.asarray(s, dtype=float), (fit.n,)) \
        * ctx.deta_at(q) * ctx.deta_at(qt)
    return BandedMatrix(
        accumulate_banded(d.cols, d.vals, w, fit.n, fit.basis.K, fit.basis.bandwidth),
        fit.basis.bandwidth,
    )


class SandwichSet:
    """Per-q curvature factorizations plus the score covariance map."""

    def __init__(self, fit: FitResult, q_points=None):
        self.fit = fit
        self.ctx = FitContext(fit)
        qs = fit.q_grid if q_points is None else np.atleast_1d(q_points)
        self.q_points = np.asarray(qs, dtype=float)
        self.Qhat = {}
        self.chol = {}
        self.min_eig = {}
        for q in self.q_points:
            Q = compute_Qhat(fit, q, self.ctx)
            self.Qhat[float(q)] = Q
            self.chol[float(q)] = CholBanded(Q)
            self.min_eig[float(q)] = Q.eig_range()[0]
        self._sigma = {}

    def Sigma(self, q, qt) -> BandedMatrix:
        key = (min(float(q), float(qt)), max(float(q), float(qt)))
        if key not in self._sigma:
            self._sigma[key] = compute_Sigmahat(self.fit, key[0], key[1], self.ctx)
        return self._sigma[key]

    def solve(self, q, B):
        return self.chol[float(q)].solve(B)

    def ell_raw(self, x_points, v, q):
        """(nx, K) rows ``p^(v)(x)' Qhat(q)^{-1}`` via banded solves."""
        cols, vals, _ = self.fit.basis.eval_many(x_points, v)
        P = np.zeros((len(cols), self.fit.basis.K))
        np.put_along_axis(P, cols, vals, axis=1)
        return self.solve(q, P.T).T

    def omega(self, x_points, v, q):
        """Variance quadratic form at each row of x_points."""
        ell = self.ell_raw(x_points, v, q)
        om = self.Sigma(q, q).quad_form(ell.T)
        om = np.atleast_1d(om)
        if (om <= 0).any():
            raise SingularQ(f"nonpositive variance at q={q}")
        return om


def build_sandwich(fit: FitResult, q_points=None) -> SandwichSet:
    return SandwichSet(fit, q_points)


def compute_Omega(sand: SandwichSet, x, v, q):
    """Omega_hat at a single point (see SandwichSet.omega for grids)."""
    return float(sand.omega(np.atleast_2d(x), v, q)[0])


def bahadur_linearization(sand: SandwichSet, data: Dataset, x_grid, v, q,
                          mu0_fn=None):
    """Bahadur linear term ``L(x, q)`` on a grid of x points.

    Scores use the fitted index by default; passing ``mu0_fn(X, q)`` (the
    true index function of a simulation design) switches to the diagnostic
    mode that evaluates scores at the truth.
    """
    fit = sand.fit
    if mu0_fn is None:
        th = sand.ctx.theta_at(q)
    else:
        th = np.asarray(mu0_fn(data.X, q), dtype=float)
    link = fit.loss.link
    s = fit.loss.psi(data.y, link.eta(th), q) * link.deta(th)
    rhs = accumulate_grad(fit.design.cols, fit.design.vals, s, fit.n, fit.basis.K)
    sol = sand.solve(q, rhs)
    cols, vals, _ = fit.basis.eval_many(x_grid, v)
    return -(vals * sol[cols]).sum(axis=1)


def inverse_band_maxima(banded: BandedMatrix):
    """Max |[A^{-1}]_{ij}| per band distance |i - j|, via banded solves."""
    chol = CholBanded(banded)
    inv = chol.solve(np.eye(banded.K))
    out = np.empty(banded.K)
    for t in range(banded.K):
        out[t] = np.abs(np.diagonal(inv, offset=t)).max()
    return out


def banded_decay_report(sand_or_matrix, q=None):
    """Table of max |[Qhat^{-1}]_{jk}| by band distance.

    Accepts either a SandwichSet (with q) or a BandedMatrix directly.
    Returns a dict with "distance" and "max_abs" arrays.
    """
    if isinstance(sand_or_matrix, BandedMatrix):
        banded = sand_or_matrix
    else:
        banded = sand_or_matrix.Qhat[float(q)]
    maxima = inverse_band_maxima(banded)
    return {"distance": np.arange(banded.K), "max_abs": maxima}
