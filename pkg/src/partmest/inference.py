"""Uniform inference: t-process, Gaussian-simulation critical values,
confidence bands and transformed bands.

The feasible approximating process is simulated conditionally on the data:
draw a Gaussian vector process G(q) on the fitted q-grid with block
covariance Sigmahat(q, qt), then evaluate

    Z(x, q) = p^(v)(x)' Qhat_q^{-1} G(q) / sqrt(Omega_hat(x, q)),

which has unit variance at every grid point by construction.  The critical
value is the conservative empirical (1 - alpha)-quantile of sup |Z| over the
evaluation grid, and the band is ``mu_hat +- crit * sqrt(Omega_hat / n)``.

For the check loss with identity link the same law is available through a
K-dimensional Brownian bridge path (``simulate_band_brownian_bridge``),
avoiding the full cross-q covariance factorization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import BasisMismatch, CovarianceNotPSD, DerivativeOrderTooHigh, WrongModel
from .sandwich import SandwichSet
from .solver import FitResult
from .streams import philox_stream

#: draws are generated and reduced in fixed-size blocks (determinism does not
#: depend on scheduling because each block owns a counter substream)
CHUNK = 4096

#: substream lanes
_LANE_BAND = 1
_LANE_BAND_B = 2


@dataclass(frozen=True)
class EvalGrid:
    """Evaluation grid: x points, a subset of the fitted q grid, and the
    derivative multi-index v."""

    x_points: np.ndarray
    q_points: np.ndarray
    v: tuple = (0,)

    def __post_init__(self):
        object.__setattr__(self, "x_points",
                           np.atleast_2d(np.asarray(self.x_points, dtype=float)))
        object.__setattr__(self, "q_points",
                           np.atleast_1d(np.asarray(self.q_points, dtype=float)))
        v = self.v
        if np.isscalar(v):
            v = (int(v),)
        object.__setattr__(self, "v", tuple(int(a) for a in v))
        if self.x_points.size == 0 or self.q_points.size == 0:
            raise ValueError("evaluation grid must be nonempty")


@dataclass
class BandResult:
    grid: EvalGrid
    mu_hat: np.ndarray        # (nx, nq) index-scale point estimates
    omega_hat: np.ndarray     # (nx, nq)
    crit: float
    alpha: float
    n_draws: int
    center: np.ndarray        # what the band is centered on (transform scale)
    band_lo: np.ndarray
    band_hi: np.ndarray
    sup_draws_summary: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def default_x_grid(partition, per_cell=10):
    """Equispaced in-cell points, ``per_cell`` per cell per dimension, kept
    off the knots."""
    axes = []
    for j in range(partition.d):
        k = partition.knots[j]
        offs = (np.arange(per_cell) + 0.5) / per_cell
        axes.append((k[:-1, None] + np.diff(k)[:, None] * offs[None, :]).ravel())
    grids = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in grids])


def _check_grid(fit: FitResult, grid: EvalGrid):
    for q in grid.q_points:
        if not np.isclose(fit.q_grid, q).any():
            raise ValueError(f"q={q} not on the fitted grid")
    if sum(grid.v) > fit.basis.spec.varsigma:
        raise DerivativeOrderTooHigh(
            f"|v|={sum(grid.v)} exceeds cap {fit.basis.spec.varsigma}")


def _grid_cov_factor(sand: SandwichSet, qs):
    """Factor F with F F' equal to the stacked q-grid covariance.

    Tries banded-assembled dense Cholesky with escalating jitter, then an
    eigenvalue clip; raises CovarianceNotPSD if the negative mass exceeds
    the repair budget.
    """
    K = sand.fit.basis.K
    R = len(qs)
    C = np.empty((R * K, R * K))
    for a, qa in enumerate(qs):
        for b in range(a, R):
            blk = sand.Sigma(qa, qs[b]).to_dense()
            C[a * K:(a + 1) * K, b * K:(b + 1) * K] = blk
            if b != a:
                C[b * K:(b + 1) * K, a * K:(a + 1) * K] = blk.T
    scale = np.trace(C) / C.shape[0]
    for jit in (0.0, 1e-12, 1e-8):
        try:
            return np.linalg.cholesky(C + jit * scale * np.eye(C.shape[0]))
        except np.linalg.LinAlgError:
            continue
    # eigen-clip repair
    w, V = np.linalg.eigh(0.5 * (C + C.T))
    if w[0] < -1e-3 * max(scale, 1e-300):
        raise CovarianceNotPSD(
            f"grid covariance eigenvalue {w[0]:.3e} beyond repair budget")
    return V * np.sqrt(np.clip(w, 0.0, None))


def _prepare(fit, sand, grid):
    """Scaled representer rows and variance surface per q."""
    _check_grid(fit, grid)
    nx = grid.x_points.shape[0]
    nq = grid.q_points.size
    mu = np.empty((nx, nq))
    omega = np.empty((nx, nq))
    ell = []
    for b, q in enumerate(grid.q_points):
        raw = sand.ell_raw(grid.x_points, grid.v, q)
        om = sand.omega(grid.x_points, grid.v, q)
        ell.append(raw / np.sqrt(om)[:, None])
        omega[:, b] = om
        mu[:, b] = fit.index_values(grid.x_points, q, grid.v)
    return mu, omega, ell


def _sup_quantile(sup_draws, alpha):
    """Conservative empirical quantile: the ceil((1-alpha) n)-th order stat."""
    k = int(np.ceil((1.0 - alpha) * sup_draws.size)) - 1
    return float(np.sort(sup_draws)[min(max(k, 0), sup_draws.size - 1)])


def _simulate_sup(ell, draw_G, n_draws, collect=None):
    """sup |Z| per draw; draw_G(block_index, size) -> (RK, size) Gaussians."""
    sup_draws = np.empty(n_draws)
    K = ell[0].shape[1]
    done = 0
    block = 0
    while done < n_draws:
        size = min(CHUNK, n_draws - done)
        G = draw_G(block, size)
        sup = np.zeros(size)
        for b, ell_b in enumerate(ell):
            Z = ell_b @ G[b * K:(b + 1) * K]
            np.maximum(sup, np.abs(Z).max(axis=0), out=sup)
            if collect is not None:
                collect(b, Z, done)
        sup_draws[done:done + size] = sup
        done += size
        block += 1
    return sup_draws


def _band_from_sup(fit, grid, mu, omega, sup_draws, alpha, n_draws, meta):
    crit = _sup_quantile(sup_draws, alpha)
    half = crit * np.sqrt(omega / fit.n)
    qs = np.quantile(sup_draws, [0.5, 0.9, 0.95, 0.99])
    summary = {"mean": float(sup_draws.mean()), "sd": float(sup_draws.std()),
               "q50": float(qs[0]), "q90": float(qs[1]), "q95": float(qs[2]),
               "q99": float(qs[3])}
    return BandResult(grid, mu, omega, crit, alpha, n_draws, mu,
                      mu - half, mu + half, summary, meta)


def simulate_band(fit: FitResult, sand: SandwichSet, grid: EvalGrid,
                  alpha=0.05, n_draws=20000, seed=0, method="generic",
                  stream=0) -> BandResult:
    """Uniform confidence band for mu^(v) via plug-in Gaussian simulation.

    ``method`` is "generic" (full cross-q covariance factor) or "bridge"
    (Brownian-bridge fast path, check loss with identity link only) or
    "auto" (bridge when admissible).  ``stream`` separates replicates that
    share a master seed (Monte Carlo harness).
    """
    if n_draws < 1000:
        raise ValueError("n_draws >= 1000 required")
    if not 0.0 < alpha <= 0.5:
        raise ValueError("alpha must be in (0, 0.5]")
    if method == "auto":
        method = "bridge" if _bridge_admissible(fit) else "generic"
    if method == "bridge":
        return simulate_band_brownian_bridge(fit, sand, grid, alpha, n_draws,
                                             seed, stream)

    mu, omega, ell = _prepare(fit, sand, grid)
    F = _grid_cov_factor(sand, grid.q_points)

    def draw_G(block, size):
        rng = philox_stream(seed, _LANE_BAND, block, rep=stream)
        return F @ rng.standard_normal((F.shape[1], size))

    sup_draws = _simulate_sup(ell, draw_G, n_draws)
    return _band_from_sup(fit, grid, mu, omega, sup_draws, alpha, n_draws,
                          {"method": "generic", "seed": seed})


def _bridge_admissible(fit):
    return fit.loss.name == "quantile" and fit.loss.link.name == "identity"


def simulate_band_brownian_bridge(fit: FitResult, sand: SandwichSet,
                                  grid: EvalGrid, alpha=0.05, n_draws=20000,
                                  seed=0, stream=0) -> BandResult:
    """Quantile fast path: G(q) = U' B(q) with B a K-vector of independent
    Brownian bridges on the q grid and U'U = E_n[p p'].

    Cov(G(q), G(qt)) = (min(q,qt) - q qt) E_n[p p'], exactly the plug-in
    covariance of the generic path, so the two simulations agree in law.
    """
    if not _bridge_admissible(fit):
        raise WrongModel("Brownian-bridge path needs the check loss with identity link")
    from .sandwich import BandedMatrix, CholBanded
    from .solver import accumulate_banded

    mu, omega, ell = _prepare(fit, sand, grid)
    d = fit.design
    gram = BandedMatrix(
        accumulate_banded(d.cols, d.vals, np.ones(fit.n), fit.n, fit.basis.K,
                          fit.basis.bandwidth),
        fit.basis.bandwidth)
    gram.add_ridge(1e-12 * max(gram.diagonal().max(), 1.0))
    U = CholBanded(gram).upper_factor_dense()
    qs = grid.q_points
    K = fit.basis.K

    def draw_G(block, size):
        rng = philox_stream(seed, _LANE_BAND_B, block, rep=stream)
        G = np.empty((qs.size * K, size))
        B = np.sqrt(qs[0] * (1.0 - qs[0])) * rng.standard_normal((K, size))
        G[:K] = U.T @ B
        for j in range(1, qs.size):
            s, t = qs[j - 1], qs[j]
            mean = B * ((1.0 - t) / (1.0 - s))
            sd = np.sqrt((t - s) * (1.0 - t) / (1.0 - s))
            B = mean + sd * rng.standard_normal((K, size))
            G[j * K:(j + 1) * K] = U.T @ B
        return G

    sup_draws = _simulate_sup(ell, draw_G, n_draws)
    return _band_from_sup(fit, grid, mu, omega, sup_draws, alpha, n_draws,
                          {"method": "bridge", "seed": seed})


def t_process(fit: FitResult, sand: SandwichSet, grid: EvalGrid, mu0=None):
    """Studentized process (mu_hat^(v) - mu0^(v)) / sqrt(Omega_hat / n).

    Without mu0 the studentized estimate itself is returned.
    """
    mu, omega, _ = _prepare(fit, sand, grid)
    if mu0 is None:
        target = np.zeros_like(mu)
    elif callable(mu0):
        target = np.column_stack([np.asarray(mu0(grid.x_points, q), dtype=float)
                                  for q in grid.q_points])
    else:
        target = np.asarray(mu0, dtype=float).reshape(mu.shape)
    return (mu - target) / np.sqrt(omega / fit.n)


# ---------------------------------------------------------------------------
# transformed bands
# ---------------------------------------------------------------------------

def level_band(fit, sand, grid, alpha=0.05, n_draws=20000, seed=0,
               method="auto", stream=0) -> BandResult:
    """Band for the level eta(mu(x, q)).

    The index band's endpoints are mapped through the (strictly monotone)
    link, so the level band covers eta(mu0) exactly when the index band
    covers mu0; to first order the halfwidth is c |eta'(mu_hat)| sqrt(Omega/n)
    but no linearization error is incurred at curved links."""
    if sum(grid.v) != 0:
        raise ValueError("level bands require v = 0")
    base = simulate_band(fit, sand, grid, alpha, n_draws, seed, method, stream)
    link = fit.loss.link
    center = link.eta(base.mu_hat)
    lo = link.eta(base.band_lo)
    hi = link.eta(base.band_hi)
    return BandResult(grid, base.mu_hat, base.omega_hat, base.crit, alpha,
                      n_draws, center, np.minimum(lo, hi), np.maximum(lo, hi),
                      base.sup_draws_summary, dict(base.meta, transform="level"))


def marginal_effect_band(fit, sand, grid, alpha=0.05, n_draws=20000, seed=0,
                         method="auto", stream=0) -> BandResult:
    """Band for the marginal effect eta'(mu) d mu / d x_k, with grid.v = e_k."""
    if sum(grid.v) != 1:
        raise ValueError("marginal-effect bands require |v| = 1")
    if fit.basis.spec.varsigma < 1:
        raise DerivativeOrderTooHigh("basis derivative cap is 0; rebuild with varsigma >= 1")
    base = simulate_band(fit, sand, grid, alpha, n_draws, seed, method, stream)
    link = fit.loss.link
    mu0v = np.column_stack([fit.index_values(grid.x_points, q, 0)
                            for q in grid.q_points])
    deta = link.deta(mu0v)
    center = deta * base.mu_hat
    half = base.crit * np.abs(deta) * np.sqrt(base.omega_hat / fit.n)
    return BandResult(grid, base.mu_hat, base.omega_hat, base.crit, alpha,
                      n_draws, center, center - half, center + half,
                      base.sup_draws_summary, dict(base.meta, transform="marginal_effect"))


def _check_compatible(fit1: FitResult, fit2: FitResult):
    b1, b2 = fit1.basis, fit2.basis
    if b1.spec != b2.spec or fit1.loss.key != fit2.loss.key:
        raise BasisMismatch("fits must share basis spec and loss")
    if len(b1.partition.knots) != len(b2.partition.knots) or any(
            k1.shape != k2.shape or not np.allclose(k1, k2)
            for k1, k2 in zip(b1.partition.knots, b2.partition.knots)):
        raise BasisMismatch("fits must share the partition")


def cte_band(fit1: FitResult, fit2: FitResult, sand1: SandwichSet,
             sand2: SandwichSet, grid: EvalGrid, alpha=0.05, n_draws=20000,
             seed=0, stream=0) -> BandResult:
    """Band for the group contrast eta(mu_2) - eta(mu_1) across two fits on
    disjoint subsamples; variances add, draws are independent."""
    _check_compatible(fit1, fit2)
    if sum(grid.v) != 0:
        raise ValueError("contrast bands require v = 0")
    if n_draws < 1000:
        raise ValueError("n_draws >= 1000 required")
    mu1, om1, ell1 = _prepare(fit1, sand1, grid)
    mu2, om2, ell2 = _prepare(fit2, sand2, grid)
    link = fit1.loss.link
    s1 = np.abs(link.deta(mu1)) * np.sqrt(om1 / fit1.n)
    s2 = np.abs(link.deta(mu2)) * np.sqrt(om2 / fit2.n)
    tot = np.sqrt(s1**2 + s2**2)
    w1, w2 = s1 / tot, s2 / tot

    F1 = _grid_cov_factor(sand1, grid.q_points)
    F2 = _grid_cov_factor(sand2, grid.q_points)
    K = fit1.basis.K
    sup_draws = np.empty(n_draws)
    done = 0
    block = 0
    while done < n_draws:
        size = min(CHUNK, n_draws - done)
        rng1 = philox_stream(seed, _LANE_BAND, block, rep=stream)
        rng2 = philox_stream(seed, _LANE_BAND_B, block, rep=stream)
        G1 = F1 @ rng1.standard_normal((F1.shape[1], size))
        G2 = F2 @ rng2.standard_normal((F2.shape[1], size))
        sup = np.zeros(size)
        for b in range(grid.q_points.size):
            Z1 = ell1[b] @ G1[b * K:(b + 1) * K]
            Z2 = ell2[b] @ G2[b * K:(b + 1) * K]
            Z = w2[:, b:b + 1] * Z2 - w1[:, b:b + 1] * Z1
            np.maximum(sup, np.abs(Z).max(axis=0), out=sup)
        sup_draws[done:done + size] = sup
        done += size
        block += 1

    crit = _sup_quantile(sup_draws, alpha)
    center = link.eta(mu2) - link.eta(mu1)
    half = crit * tot
    summary = {"mean": float(sup_draws.mean()), "sd": float(sup_draws.std())}
    return BandResult(grid, mu2 - mu1, tot**2, crit, alpha, n_draws, center,
                      center - half, center + half, summary,
                      {"transform": "cte", "seed": seed, "n1": fit1.n, "n2": fit2.n})
