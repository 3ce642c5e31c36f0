"""Coefficient-process solver.

Computes the minimizer beta_hat(q) of ``E_n[rho(y_i, eta(p(x_i)' b); q)]``
for every q on a grid, dispatching on the structure of the problem:

* unconnected (piecewise polynomial) bases decouple across cells, so every
  cell is solved exactly and independently;
* connected (spline) bases with a smooth composite loss use damped Newton
  steps with a banded Fisher-style Hessian;
* connected bases with the non-smooth check loss use staged Moreau-style
  smoothing (Huberized check function) followed by subgradient polish;
* non-convex composites additionally project onto the box
  ``max_k |b_k| <= R`` after every step.

Consecutive q points warm-start each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize
from scipy.linalg import solveh_banded

from .basis import Basis
from .exceptions import (BoxRequired, CellTooSparse, LinkRangeInvalid,
                         NotConverged, WrongModel)
from .losses import LossModel
from .partition import locate_many


def left_quantile(y, q):
    """Left-continuous empirical q-quantile: the ceil(q*N)-th order statistic."""
    ys = np.sort(np.asarray(y, dtype=float))
    k = int(np.ceil(q * ys.size)) - 1
    return float(ys[min(max(k, 0), ys.size - 1)])


def _iqr(y):
    hi, lo = np.percentile(y, [75, 25])
    return float(hi - lo)


@dataclass
class Dataset:
    """Covariates (n x d) and responses (n,), all finite."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.size:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.size} entries")
        if not np.isfinite(X).all() or not np.isfinite(y).all():
            raise ValueError("non-finite entries in data")
        self.X, self.y = X, y

    @property
    def n(self):
        return self.y.size


@dataclass
class SolverOptions:
    max_iter: int = 200
    grad_tol: float = 1e-8
    box_R: float | None = None        # explicit box radius
    auto_box: bool = True             # derive the radius from a pilot fit
    smoothing_tau0: float | None = None      # default 0.1 * IQR(y)
    smoothing_decay: float = 0.5
    smoothing_tau_min: float | None = None   # default 1e-4 * IQR(y)
    polish_steps: int = 200
    polish_step_scale: float | None = None   # default 1e-3 * IQR(y)
    min_obs_per_cell: int | None = None      # default 3 * m**d
    allow_small_n: bool = False

    def __post_init__(self):
        for name in ("grad_tol", "smoothing_decay"):
            if getattr(self, name) is not None and getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iter < 1 or self.polish_steps < 0:
            raise ValueError("iteration counts must be positive")


@dataclass
class DesignCache:
    """Cached sparse design: active columns/values and cell per observation."""

    cols: np.ndarray      # (n, width) int64, strictly increasing per row
    vals: np.ndarray      # (n, width)
    cells: np.ndarray     # (n,) int64
    counts: np.ndarray    # (cell_count,) observations per cell


@dataclass
class FitResult:
    basis: Basis
    loss: LossModel
    q_grid: np.ndarray
    beta: np.ndarray          # (len(q_grid), K)
    converged: np.ndarray     # (len(q_grid),) bool
    grad_norm: np.ndarray     # scaled (sub)gradient sup-norm per q
    objective: np.ndarray
    design: DesignCache
    y: np.ndarray             # responses (hooks evaluate residual scores)
    n: int
    box_R: float | None = None
    X: np.ndarray | None = None  # covariates (round-trip serialization)

    def beta_at(self, q):
        """Coefficients at q, linear interpolation on the grid (clamped)."""
        grid = self.q_grid
        if q <= grid[0]:
            return self.beta[0]
        if q >= grid[-1]:
            return self.beta[-1]
        j = int(np.searchsorted(grid, q, side="right")) - 1
        j = min(j, grid.size - 2)
        t = (q - grid[j]) / (grid[j + 1] - grid[j])
        return (1 - t) * self.beta[j] + t * self.beta[j + 1]

    def index_values(self, X, q, v=0):
        """mu_hat^(v)(x, q) = p^(v)(x)' beta_hat(q) for rows of X."""
        cols, vals, _ = self.basis.eval_many(X, v)
        beta = self.beta_at(q)
        return (vals * beta[cols]).sum(axis=1)

    def index_on_design(self, iq):
        """Fitted index at the data points for grid entry iq."""
        b = self.beta[iq]
        return (self.design.vals * b[self.design.cols]).sum(axis=1)


# ---------------------------------------------------------------------------
# banded assembly
# ---------------------------------------------------------------------------

def accumulate_banded(cols, vals, weights, n, K, bw):
    """Upper-banded storage of ``E_n[w_i p_i p_i']`` (scipy solveh format:
    ``ab[bw + i - j, j]`` holds entry (i, j) for ``i <= j``)."""
    acc = np.zeros((bw + 1) * K)
    w = cols.shape[1]
    for a in range(w):
        for b in range(a, w):
            i, j = cols[:, a], cols[:, b]
            contrib = weights * vals[:, a] * vals[:, b]
            acc += np.bincount((bw + i - j) * K + j, weights=contrib,
                               minlength=acc.size)
    return acc.reshape(bw + 1, K) / n


def accumulate_grad(cols, vals, g, n, K):
    """``E_n[g_i p_i]`` as a dense K-vector."""
    return np.bincount(cols.ravel(), weights=(vals * g[:, None]).ravel(),
                       minlength=K) / n


def _theta(cols, vals, beta):
    return (vals * beta[cols]).sum(axis=1)


# ---------------------------------------------------------------------------
# smooth path: damped (projected) Newton
# ---------------------------------------------------------------------------

#: elementwise floor applied to the Hessian diagonal before factorization
HESS_DIAG_FLOOR = 1e-10

#: acceptance threshold on the projected-gradient KKT residual for
#: box-constrained (non-convex composite) fits; convex fits are held to
#: grad_tol.  On a saturation plateau every saturated observation leaves
#: sigmoid-tail dust of order exp(-R) in the gradient while the objective
#: is flat to machine precision, so residuals of a few 1e-6 (scaled) are
#: irreducible there.
BOX_PLATEAU_TOL = 1e-5


def _projected_grad(beta, g, box):
    """KKT residual: the raw gradient, or ``beta - clip(beta - g)`` under a
    box so that outward-pointing gradients at active bounds count as zero."""
    if box is None:
        return g
    return beta - np.clip(beta - g, -box, box)


def _line_search(beta, step, obj_fn, obj, box):
    """Backtracking halving; returns (new_beta, new_obj) or None."""
    t = 1.0
    while t > 2.0**-30:
        cand = beta + t * step
        if box is not None:
            np.clip(cand, -box, box, out=cand)
        cand_obj = obj_fn(cand)
        if cand_obj < obj:
            return cand, cand_obj
        t *= 0.5
    return None


def _newton(y, cols, vals, n, K, bw, obj_fn, score_fn, curv_fn, beta0, opts,
            scale, box=None, grad_fallback=True, max_iter=None):
    """Damped Newton with banded Hessian; projects onto the box if given.

    Returns (beta, converged, scaled_grad_norm, objective).
    """
    beta = np.clip(beta0, -box, box) if box is not None else beta0.copy()
    obj = obj_fn(beta)
    gnorm = np.inf
    for _ in range(max_iter if max_iter is not None else opts.max_iter):
        th = _theta(cols, vals, beta)
        g = accumulate_grad(cols, vals, score_fn(th), n, K)
        gnorm = np.abs(_projected_grad(beta, g, box)).max() / scale
        if gnorm <= opts.grad_tol:
            return beta, True, gnorm, obj
        ab = accumulate_banded(cols, vals, curv_fn(th), n, K, bw)
        np.maximum(ab[bw], HESS_DIAG_FLOOR, out=ab[bw])
        try:
            step = solveh_banded(ab, -g)
        except np.linalg.LinAlgError:
            ab[bw] += 1e-8 * ab[bw].mean()
            step = solveh_banded(ab, -g)
        improved = _line_search(beta, step, obj_fn, obj, box)
        if improved is None and grad_fallback:
            # floored-curvature Newton direction can fail on flat composites;
            # a diagonally scaled gradient step is always a descent direction
            improved = _line_search(beta, -g / ab[bw].max(), obj_fn, obj, box)
        if improved is None:
            break
        beta, obj = improved
    th = _theta(cols, vals, beta)
    g = accumulate_grad(cols, vals, score_fn(th), n, K)
    gnorm = np.abs(_projected_grad(beta, g, box)).max() / scale
    return beta, gnorm <= opts.grad_tol, gnorm, obj


def _smooth_problem(model, y, q):
    def obj_fn_factory(cols, vals, n):
        def obj(beta):
            return float(np.mean(model.rho_theta(y, _theta(cols, vals, beta), q)))
        return obj

    score = lambda th: model.score_theta(y, th, q)
    curv = lambda th: model.curvature_theta(y, th, q)
    return obj_fn_factory, score, curv


# ---------------------------------------------------------------------------
# non-smooth path: Huberized check function, then subgradient polish
# ---------------------------------------------------------------------------

def _check_objective(y, q):
    def obj(theta_vals):
        u = y - theta_vals
        return float(np.mean((q - (u < 0)) * u))
    return obj


def _smoothed_check(y, q, tau):
    """Moreau envelope of the check loss and its derivatives in theta."""
    def obj(theta_vals):
        u = y - theta_vals
        hi, lo = q * tau, -(1 - q) * tau
        mid = u**2 / (2 * tau)
        upper = q * u - q**2 * tau / 2
        lower = -(1 - q) * u - (1 - q) ** 2 * tau / 2
        return float(np.mean(np.where(u >= hi, upper, np.where(u <= lo, lower, mid))))

    def score(th_vals, _y=y):
        return np.clip((th_vals - _y) / tau, -q, 1 - q)

    def curv(th_vals, _y=y):
        z = (th_vals - _y) / tau
        return ((z > -q) & (z < 1 - q)) / tau

    return obj, score, curv


def _subgrad_distance(y, cols, vals, n, K, theta_vals, q, scale):
    """Scaled distance from 0 to the subdifferential of the check objective.

    The subdifferential per coordinate is an interval (psi ranges over
    [1(y < eta) - q, 1(y <= eta) - q] at kinks); the distance is zero when 0
    lies inside, which certifies exact optimality.  Residuals within a tiny
    relative tolerance of a kink count as kinks, so solutions produced by
    floating-point solves keep their interval contributions.
    """
    atol = 1e-9 * scale
    lo_i = (y < theta_vals - atol) - q
    hi_i = (y <= theta_vals + atol) - q
    a = vals * lo_i[:, None]
    b = vals * hi_i[:, None]
    lo = np.bincount(cols.ravel(), weights=np.minimum(a, b).ravel(), minlength=K) / n
    hi = np.bincount(cols.ravel(), weights=np.maximum(a, b).ravel(), minlength=K) / n
    dist = np.maximum(0.0, np.maximum(lo, -hi))
    return float(dist.max()) / scale


def _fit_nonsmooth(y, cols, vals, n, K, bw, q, beta0, opts, scale, box=None):
    """Staged smoothing for the check loss, then subgradient polish."""
    iqr = max(_iqr(y), 1e-8)
    tau = opts.smoothing_tau0 if opts.smoothing_tau0 is not None else 0.1 * iqr
    tau_min = (opts.smoothing_tau_min if opts.smoothing_tau_min is not None
               else 1e-4 * iqr)
    beta = beta0.copy()
    while True:
        obj, score, curv = _smoothed_check(y, q, tau)
        obj_beta = lambda b: obj(_theta(cols, vals, b))
        # loose inner solves: each stage only warm-starts the next, and the
        # subgradient polish below owns final optimality
        beta, _, _, _ = _newton(y, cols, vals, n, K, bw, obj_beta, score, curv,
                                beta, opts, scale, box=box, grad_fallback=False,
                                max_iter=min(50, opts.max_iter))
        if tau <= tau_min:
            break
        tau = max(tau * opts.smoothing_decay, tau_min)

    check = _check_objective(y, q)
    best, best_obj = beta.copy(), check(_theta(cols, vals, beta))
    c = (opts.polish_step_scale if opts.polish_step_scale is not None
         else 1e-3 * iqr)
    for t in range(1, opts.polish_steps + 1):
        th = _theta(cols, vals, beta)
        g = accumulate_grad(cols, vals, ((y < th) - q).astype(float), n, K)
        beta = beta - (c / np.sqrt(t)) * g
        if box is not None:
            np.clip(beta, -box, box, out=beta)
        o = check(_theta(cols, vals, beta))
        if o < best_obj:
            best, best_obj = beta.copy(), o
    th = _theta(cols, vals, best)
    dist = _subgrad_distance(y, cols, vals, n, K, th, q, scale)
    # optimality certificate for the non-smooth path: the minimal-norm
    # subgradient must be below the data-discreteness floor
    floor = max(opts.grad_tol, 4.0 * cols.shape[1] * np.abs(vals).max() / n)
    return best, dist <= floor, dist, best_obj


# ---------------------------------------------------------------------------
# per-cell exact solves (unconnected bases)
# ---------------------------------------------------------------------------

def _solve_cell_constant(y_cell, model, q, box=None):
    """Exact scalar solve for a constant basis function on one cell."""
    y_cell = np.asarray(y_cell, dtype=float)
    name = model.name
    if name == "quantile":
        # monotone links commute with quantiles
        theta = float(model.link.eta_inv(left_quantile(y_cell, q)))
        if not np.isfinite(theta):
            raise LinkRangeInvalid(
                f"cell quantile {left_quantile(y_cell, q)} outside the range "
                f"of link {model.link.name}")
    elif name == "logistic":
        n = y_cell.size
        p = np.clip(y_cell.mean(), 1.0 / (2 * n), 1 - 1.0 / (2 * n))
        theta = float(model.link.eta_inv(p))
    elif name == "distribution":
        n = y_cell.size
        p = np.clip((y_cell <= q).mean(), 1.0 / (2 * n), 1 - 1.0 / (2 * n))
        theta = float(model.link.eta_inv(p))
    elif model.convex_in_theta and model.smooth:
        lo, hi = float(y_cell.min()) - 1.0, float(y_cell.max()) + 1.0
        fun = lambda t: float(np.mean(model.score_theta(y_cell, np.full_like(y_cell, t), q)))
        if fun(lo) == 0:
            theta = lo
        elif fun(hi) == 0:
            theta = hi
        else:
            theta = float(optimize.brentq(fun, lo, hi, xtol=1e-14))
    else:
        # non-convex scalar loss: coarse grid scan then local refinement
        R = box if box is not None else max(1.0, 2 * np.abs(y_cell).max())
        lo, hi = max(-R, y_cell.min() - 1), min(R, y_cell.max() + 1)
        if lo >= hi:
            lo, hi = -R, R
        grid = np.linspace(lo, hi, 129)
        objs = [np.mean(model.rho_theta(y_cell, np.full_like(y_cell, t), q)) for t in grid]
        k = int(np.argmin(objs))
        a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
        res = optimize.minimize_scalar(
            lambda t: float(np.mean(model.rho_theta(y_cell, np.full_like(y_cell, t), q))),
            bounds=(a, b), method="bounded", options={"xatol": 1e-12})
        theta = float(res.x)
    if box is not None:
        theta = float(np.clip(theta, -box, box))
    return theta


def fit_per_cell(y_cell, P_cell, model, q, opts=None, box=None):
    """Exact minimizer of the cell-local objective.

    Parameters
    ----------
    y_cell : responses in the cell.
    P_cell : (n_cell, w) local design block.
    model : LossModel
    q : loss index value.
    """
    opts = opts or SolverOptions()
    P_cell = np.atleast_2d(np.asarray(P_cell, dtype=float))
    y_cell = np.asarray(y_cell, dtype=float)
    w = P_cell.shape[1]
    min_obs = opts.min_obs_per_cell if opts.min_obs_per_cell is not None else 3 * w
    if y_cell.size < min_obs:
        raise CellTooSparse(
            f"cell holds {y_cell.size} observations, needs {min_obs}")
    if w == 1 and np.allclose(P_cell, P_cell[0, 0]) and P_cell[0, 0] != 0:
        # constant local function: solve in theta, then rescale
        theta = _solve_cell_constant(y_cell, model, q, box=box)
        return np.array([theta / P_cell[0, 0]])

    scale = max(1.0, _iqr(y_cell))
    cols = np.tile(np.arange(w, dtype=np.int64), (y_cell.size, 1))
    start = np.zeros(w)
    start[0] = _solve_cell_constant(y_cell, model, q, box=box) / P_cell[0, 0] \
        if P_cell[0, 0] != 0 else 0.0
    if model.smooth:
        obj_f, score, curv = _smooth_problem(model, y_cell, q)
        obj_beta = obj_f(cols, P_cell, y_cell.size)
        beta, _, _, _ = _newton(y_cell, cols, P_cell, y_cell.size, w, w - 1,
                                obj_beta, score, curv, start, opts, scale, box=box)
    elif model.name == "quantile":
        if model.link.name != "identity":
            raise WrongModel(
                "per-cell check-loss solve with a local dimension above one "
                "needs the identity link")
        beta = _cell_quantile_lp(y_cell, P_cell, q)
        if box is not None:
            np.clip(beta, -box, box, out=beta)
    else:
        raise WrongModel(f"no per-cell path for non-smooth loss {model.name}")
    return beta


def _cell_quantile_lp(y_cell, P_cell, q):
    """Exact cell-local check-loss minimizer as a linear program.

    min sum_i q u_i + (1-q) v_i  s.t.  P b + u - v = y, u, v >= 0.
    """
    nc, w = P_cell.shape
    c = np.concatenate([np.zeros(2 * w), np.full(nc, q), np.full(nc, 1 - q)])
    eye = np.eye(nc)
    A = np.hstack([P_cell, -P_cell, eye, -eye])
    res = optimize.linprog(
        c, A_eq=A, b_eq=y_cell,
        bounds=[(0, None)] * (2 * w + 2 * nc), method="highs",
        options={"primal_feasibility_tolerance": 1e-10,
                 "dual_feasibility_tolerance": 1e-10})
    if not res.success:
        raise NotConverged(f"cell check-loss LP failed: {res.message}")
    return res.x[:w] - res.x[w:2 * w]


# ---------------------------------------------------------------------------
# pilot fit and box radius
# ---------------------------------------------------------------------------

def _cell_groups(cells, cell_count):
    order = np.argsort(cells, kind="stable")
    bounds = np.searchsorted(cells[order], np.arange(cell_count + 1))
    return order, bounds


def _pilot_values(y, cells, cell_count, model, q_grid, min_obs=1, box=None):
    """Per-cell constant fit for every q: (len(q_grid), cell_count)."""
    order, bounds = _cell_groups(cells, cell_count)
    out = np.empty((len(q_grid), cell_count))
    for c in range(cell_count):
        yc = y[order[bounds[c]:bounds[c + 1]]]
        if yc.size < max(min_obs, 1):
            raise CellTooSparse(f"cell {c} holds {yc.size} observations, needs {min_obs}")
        for iq, q in enumerate(q_grid):
            out[iq, c] = _solve_cell_constant(yc, model, q, box=box)
    return out


def auto_box_radius(data: Dataset, basis: Basis, loss: LossModel, q_grid,
                    opts: SolverOptions | None = None) -> float:
    """Box radius from a pilot piecewise-constant fit: R = max(1, 2 sup|theta|)."""
    opts = opts or SolverOptions()
    q_grid = loss.check_q_grid(np.atleast_1d(q_grid), data.y)
    cells = locate_many(basis.partition, data.X)
    pilot = _pilot_values(data.y, cells, basis.partition.cell_count, loss, q_grid,
                          min_obs=opts.min_obs_per_cell or 3)
    return max(1.0, 2.0 * float(np.abs(pilot).max()))


# ---------------------------------------------------------------------------
# top-level fit
# ---------------------------------------------------------------------------

def fit(data: Dataset, basis: Basis, loss: LossModel, q_grid,
        opts: SolverOptions | None = None) -> FitResult:
    """Fit the coefficient process beta_hat(q) over a q grid.

    Dispatches to exact per-cell solves (unconnected basis), damped banded
    Newton (connected, smooth) or staged smoothing plus polish (connected,
    check loss); non-convex composites are box-constrained.  Per-q failures
    set ``converged[iq] = False`` rather than raising.
    """
    opts = opts or SolverOptions()
    if loss.validate_response is not None:
        loss.validate_response(data.y)
    q_grid = loss.check_q_grid(np.atleast_1d(np.asarray(q_grid, float)), data.y)

    cols, vals, cells = basis.eval_many(data.X, 0)
    counts = np.bincount(cells, minlength=basis.partition.cell_count)
    min_obs = opts.min_obs_per_cell if opts.min_obs_per_cell is not None \
        else 3 * basis.width
    if (counts < min_obs).any():
        bad = int(np.argmin(counts))
        raise CellTooSparse(
            f"cell {bad} holds {counts[bad]} observations, needs {min_obs} "
            f"(n={data.n}, cells={basis.partition.cell_count})")
    if data.n < basis.K and not opts.allow_small_n:
        raise ValueError(f"n={data.n} < K={basis.K}; set allow_small_n to override")

    box = None
    if not loss.convex_in_theta:
        if opts.box_R is not None:
            box = float(opts.box_R)
        elif opts.auto_box:
            box = auto_box_radius(data, basis, loss, q_grid, opts)
        else:
            raise BoxRequired(
                f"{loss.name} is non-convex; set box_R or enable auto_box")

    design = DesignCache(cols, vals, cells, counts)
    R, K = len(q_grid), basis.K
    beta = np.zeros((R, K))
    converged = np.zeros(R, dtype=bool)
    grad_norm = np.full(R, np.nan)
    objective = np.full(R, np.nan)
    scale = max(1.0, _iqr(data.y))
    y = data.y

    if basis.spec.kind == "piecewise_poly":
        order, bounds = _cell_groups(cells, basis.partition.cell_count)
        w = basis.width
        for iq, q in enumerate(q_grid):
            ok = True
            for c in range(basis.partition.cell_count):
                rows = order[bounds[c]:bounds[c + 1]]
                try:
                    beta[iq, c * w:(c + 1) * w] = fit_per_cell(
                        y[rows], vals[rows], loss, q, opts, box=box)
                except NotConverged:
                    ok = False
            th = _theta(cols, vals, beta[iq])
            if loss.smooth:
                g = accumulate_grad(cols, vals, loss.score_theta(y, th, q), data.n, K)
                grad_norm[iq] = np.abs(_projected_grad(beta[iq], g, box)).max() / scale
                tol = max(opts.grad_tol, BOX_PLATEAU_TOL if box is not None else 1e-7)
                converged[iq] = ok and grad_norm[iq] <= tol
            else:
                grad_norm[iq] = _subgrad_distance(y, cols, vals, data.n, K, th, q, scale)
                converged[iq] = ok and grad_norm[iq] <= opts.grad_tol
            objective[iq] = float(np.mean(loss.rho_theta(y, th, q)))
        return FitResult(basis, loss, q_grid, beta, converged, grad_norm,
                         objective, design, data.y, data.n, box, data.X)

    # connected basis: warm start from a pilot per-cell constant fit pushed
    # through the Gram projection
    pilot = _pilot_values(y, cells, basis.partition.cell_count, loss, q_grid,
                          min_obs=min(3, min_obs), box=box)
    bw = basis.bandwidth
    gram = accumulate_banded(cols, vals, np.ones(data.n), data.n, K, bw)
    gram[bw] += 1e-12 * max(gram[bw].max(), 1.0)
    prev = None
    for iq, q in enumerate(q_grid):
        if prev is None:
            rhs = accumulate_grad(cols, vals, pilot[iq][cells], data.n, K)
            start = solveh_banded(gram, rhs)
        else:
            start = prev
        if loss.smooth:
            obj_f, score, curv = _smooth_problem(loss, y, q)
            obj_beta = obj_f(cols, vals, data.n)
            b, conv, gn, obj = _newton(y, cols, vals, data.n, K, bw, obj_beta,
                                       score, curv, start, opts, scale, box=box)
            if box is not None:
                conv = conv or gn <= max(opts.grad_tol, BOX_PLATEAU_TOL)
        elif loss.name == "quantile":
            if loss.link.name != "identity":
                raise WrongModel(
                    "connected-basis check-loss fits need the identity link")
            b, conv, gn, obj = _fit_nonsmooth(y, cols, vals, data.n, K, bw, q,
                                              start, opts, scale, box=box)
        else:
            raise WrongModel(f"no connected-basis path for loss {loss.name}")
        beta[iq], converged[iq], grad_norm[iq], objective[iq] = b, conv, gn, obj
        prev = b
    return FitResult(basis, loss, q_grid, beta, converged, grad_norm,
                     objective, design, data.y, data.n, box, data.X)
