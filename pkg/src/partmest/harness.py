"""Monte Carlo harness: simulation designs with closed-form truths, coverage
and convergence-rate experiments, Bahadur-remainder diagnostics, and file
round-trips (CSV data, JSON fits and reports, CSV bands).

Every built-in design keeps the target function and noise law simple enough
that the estimand is available in closed form on both the index and the
level scale, so experiments compare against exact truths rather than
high-accuracy numerics.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import expit, logit

from . import __version__
from .basis import Basis, BasisSpec, build_basis
from .exceptions import DataError, NotConverged, PartmestError
from .inference import EvalGrid, default_x_grid, level_band, simulate_band
from .losses import (loss_from_dict, loss_to_dict, model_from_key,
                     quantile_bandwidth)
from .partition import Domain, Partition, build_tensor_partition
from .sandwich import bahadur_linearization, build_sandwich
from .solver import Dataset, FitResult, SolverOptions, fit
from .streams import default_workers, philox_stream

SCHEMA_VERSION = "1"

#: substream lane for dataset generation (bands use lanes 1-2)
_LANE_DATA = 0


# ---------------------------------------------------------------------------
# simulation designs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DGPSpec:
    """A named design plus sample size and master seed."""

    name: str
    n: int
    seed: int = 0

    def __post_init__(self):
        if self.name not in DGPS:
            raise ValueError(f"unknown DGP {self.name!r}; have {sorted(DGPS)}")
        if self.n < 1:
            raise ValueError("n must be positive")


class _Design:
    """Closed-form simulation design.

    The target m(x) = sin(2 pi x1) (+ 0.5 cos(2 pi x2) in 2d) is smooth with
    bounded derivatives, and every noise law below has a bounded conditional
    density, so the designs satisfy the regularity the estimator assumes.
    ``truth_index`` returns the population index mu0(x, q) that p(x)'beta(q)
    estimates.
    """

    def __init__(self, d, loss_key, link_key, q_default, draw_y, truth_index):
        self.d = d
        self.loss_key = loss_key
        self.link_key = link_key
        self.q_default = np.asarray(q_default, dtype=float)
        self._draw_y = draw_y
        self._truth = truth_index

    def domain(self):
        return Domain(np.zeros(self.d), np.ones(self.d))

    def make_loss(self):
        return model_from_key(self.loss_key, self.link_key)

    def generate(self, n, rng) -> Dataset:
        X = rng.uniform(0.0, 1.0, (n, self.d))
        return Dataset(X, self._draw_y(X, rng))

    def truth_index(self, X, q):
        return self._truth(np.atleast_2d(X), q)


def _m1(X):
    return np.sin(2 * np.pi * X[:, 0])


def _m2(X):
    return np.sin(2 * np.pi * X[:, 0]) + 0.5 * np.cos(2 * np.pi * X[:, 1])


_T3 = stats.t(3)

DGPS = {
    # location-scale: y = m(x) + (1 + 0.2 x) * 0.2 * t_3, so the conditional
    # q-quantile is m(x) + (1 + 0.2 x) * 0.2 * F_t3^{-1}(q) exactly
    "qr1d": _Design(
        1, "quantile", None, np.linspace(0.1, 0.9, 25),
        lambda X, rng: _m1(X) + (1 + 0.2 * X[:, 0]) * 0.2 * rng.standard_t(3, X.shape[0]),
        lambda X, q: _m1(X) + (1 + 0.2 * X[:, 0]) * 0.2 * _T3.ppf(q)),
    # unit Gaussian noise keeps P(y <= q | x) inside [0.04, 0.96] for the
    # default thresholds, so no region of the index is near-degenerate;
    # with the logit link the index truth at threshold q is
    # logit(Phi(q - m(x)))
    "dr1d": _Design(
        1, "distribution", "logit", np.array([-0.75, 0.0, 0.75]),
        lambda X, rng: _m1(X) + rng.standard_normal(X.shape[0]),
        lambda X, q: logit(stats.norm.cdf(q - _m1(X)))),
    # linear location AND linear scale, so mu0(., q) lies exactly in the
    # span of any order-2 basis at every q: zero approximation error.  Used
    # by the remainder diagnostic, which wants the linearization residual
    # isolated from smoothing bias
    "qrlin1d": _Design(
        1, "quantile", None, np.linspace(0.1, 0.9, 25),
        lambda X, rng: 1 + 0.5 * X[:, 0]
        + (1 + 0.2 * X[:, 0]) * 0.2 * rng.standard_t(3, X.shape[0]),
        lambda X, q: 1 + 0.5 * X[:, 0] + (1 + 0.2 * X[:, 0]) * 0.2 * _T3.ppf(q)),
    # symmetric heavy-tail noise: every Lp location functional equals m(x)
    "lp1d": _Design(
        1, "lp:1.5", None, np.array([0.0]),
        lambda X, rng: _m1(X) + 0.2 * rng.standard_t(3, X.shape[0]),
        lambda X, q: _m1(X)),
    # doubled amplitude keeps the success probability inside [0.12, 0.88]
    # while making the index curvature large relative to the Bernoulli
    # noise, so finite-sample sup errors are approximation-dominated and
    # rate experiments see the theoretical slope cleanly
    "logit1d": _Design(
        1, "logistic", None, np.array([0.0]),
        lambda X, rng: (rng.uniform(0, 1, X.shape[0]) < expit(2 * _m1(X))).astype(float),
        lambda X, q: 2 * _m1(X)),
    "logit2d": _Design(
        2, "logistic", None, np.array([0.0]),
        lambda X, rng: (rng.uniform(0, 1, X.shape[0]) < expit(_m2(X))).astype(float),
        lambda X, q: _m2(X)),
}


def generate(dgp: DGPSpec, rep=0) -> Dataset:
    """Draw one dataset; ``rep`` selects an independent substream."""
    design = DGPS[dgp.name]
    rng = philox_stream(dgp.seed, _LANE_DATA, 0, rep=rep)
    return design.generate(dgp.n, rng)


# ---------------------------------------------------------------------------
# cell-count rules
# ---------------------------------------------------------------------------

def cells_for_rate(n, m, d, c=2.0):
    """IMSE-order rule: cells per dim = round(c * n^{1/(2m+d)})."""
    return max(2, int(round(c * n ** (1.0 / (2 * m + d)))))


def cells_for_coverage(n, m, d, c=3.0):
    """Undersmoothed rule (exponent 1/(2m+d-0.5)) so bands dominate bias."""
    return max(2, int(round(c * n ** (1.0 / (2 * m + d - 0.5)))))


# ---------------------------------------------------------------------------
# experiment configuration and reports
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Shared knob set for all three experiment kinds.

    ``n`` drives coverage runs, ``n_ladder`` the rate and remainder runs;
    unset fields resolve to design defaults at run time.
    """

    dgp: str
    n: int = 2000
    n_ladder: tuple = ()
    reps: int = 100
    seed: int = 0
    basis: str = "bspline"
    m: int = 2
    varsigma: int = 1
    cells: int = 0               # 0 = use the rule for the experiment kind
    cells_c: float = 0.0         # 0 = rule default (3.0 coverage, 2.0 rate)
    q_grid: tuple = ()           # () = design default
    alpha: float = 0.05
    n_draws: int = 20000
    x_per_cell: int = 10
    band_transform: str = "auto"  # auto | index | level
    band_method: str = "auto"
    workers: int = 0             # 0 = PARTMEST_WORKERS or 1

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.dgp not in DGPS:
            raise ValueError(f"unknown DGP {self.dgp!r}")

    def resolved(self) -> dict:
        """Config echo with every default made explicit."""
        design = DGPS[self.dgp]
        q = np.asarray(self.q_grid if len(self.q_grid) else design.q_default)
        transform = self.band_transform
        if transform == "auto":
            transform = "level" if design.link_key or design.loss_key == "logistic" \
                else "index"
        return {
            "dgp": self.dgp, "n": self.n, "n_ladder": list(self.n_ladder),
            "reps": self.reps, "seed": self.seed, "basis": self.basis,
            "m": self.m, "varsigma": self.varsigma, "cells": self.cells,
            "cells_c": self.cells_c, "q_grid": q.tolist(), "alpha": self.alpha,
            "n_draws": self.n_draws, "x_per_cell": self.x_per_cell,
            "band_transform": transform, "band_method": self.band_method,
            "workers": self.workers or default_workers(),
            "loss": design.loss_key, "link": design.link_key or "default",
            "d": design.d,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(obj) - known - {"loss", "link", "d"}
        if extra:
            raise DataError(f"unknown config keys: {sorted(extra)}")
        kw = {k: obj[k] for k in known if k in obj}
        for tup in ("n_ladder", "q_grid"):
            if tup in kw:
                kw[tup] = tuple(kw[tup])
        return cls(**kw)


@dataclass
class RunReport:
    kind: str
    config: dict
    results: dict
    wall_clock_s: float
    schema_version: str = SCHEMA_VERSION
    package_version: str = __version__

    def to_dict(self):
        return {"schema_version": self.schema_version, "kind": self.kind,
                "package_version": self.package_version, "config": self.config,
                "results": self.results, "wall_clock_s": self.wall_clock_s}

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


# ---------------------------------------------------------------------------
# experiment engines
# ---------------------------------------------------------------------------

def _experiment_pieces(cfg: ExperimentConfig, n, cells_rule):
    design = DGPS[cfg.dgp]
    res = cfg.resolved()
    if cfg.cells:
        cells = cfg.cells
    elif cfg.cells_c:
        cells = cells_rule(n, cfg.m, design.d, cfg.cells_c)
    else:
        cells = cells_rule(n, cfg.m, design.d)
    part = build_tensor_partition(design.domain(), (cells,) * design.d)
    basis = build_basis(part, BasisSpec(cfg.basis, cfg.m, cfg.varsigma))
    loss = design.make_loss()
    q_grid = np.asarray(res["q_grid"])
    return design, res, part, basis, loss, q_grid


def _fit_q_grid(loss, q_grid, n):
    """Grid the coefficient process is fitted on.  Check-loss fits get one
    guard point past each end (inside the loss's q-domain) so the density
    difference quotient at the endpoints stays two-sided."""
    if loss.name != "quantile":
        return q_grid
    lo, hi = loss.q_domain
    pads = [max(lo, q_grid[0] - quantile_bandwidth(q_grid[0], n)),
            min(hi, q_grid[-1] + quantile_bandwidth(q_grid[-1], n))]
    return np.unique(np.concatenate([q_grid, pads]))


def _coverage_rep(args):
    cfg, rep = args
    design, res, part, basis, loss, q_grid = _experiment_pieces(
        cfg, cfg.n, cells_for_coverage)
    data = generate(DGPSpec(cfg.dgp, cfg.n, cfg.seed), rep=rep)
    fres = fit(data, basis, loss, _fit_q_grid(loss, q_grid, cfg.n))
    if not fres.converged.all():
        raise NotConverged(f"rep {rep}: {int((~fres.converged).sum())} grid "
                           "points failed to converge")
    sand = build_sandwich(fres)
    xg = default_x_grid(part, cfg.x_per_cell)
    grid = EvalGrid(xg, q_grid, (0,) * design.d)
    truth = np.column_stack([design.truth_index(xg, q) for q in q_grid])
    if res["band_transform"] == "level":
        band = level_band(fres, sand, grid, cfg.alpha, cfg.n_draws, cfg.seed,
                          cfg.band_method, stream=rep)
        truth = loss.link.eta(truth)
    else:
        band = simulate_band(fres, sand, grid, cfg.alpha, cfg.n_draws,
                             cfg.seed, cfg.band_method, stream=rep)
    covered = bool(((band.band_lo <= truth) & (truth <= band.band_hi)).all())
    return covered, band.crit


def _run_map(fn, argses, workers):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, argses, chunksize=1))
    return [fn(a) for a in argses]


def _collect(fn, argses, workers, reps):
    """Run reps, tolerating at most 2% failures."""
    outs, failures = [], []
    if workers > 1:
        # run individually so one failure doesn't poison the pool map
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(fn, a) for a in argses]
            for i, fu in enumerate(futs):
                try:
                    outs.append((i, fu.result()))
                except PartmestError as e:
                    failures.append((i, f"{type(e).__name__}: {e}"))
    else:
        for i, a in enumerate(argses):
            try:
                outs.append((i, fn(a)))
            except PartmestError as e:
                failures.append((i, f"{type(e).__name__}: {e}"))
    if len(failures) > 0.02 * reps:
        raise NotConverged(
            f"{len(failures)}/{reps} replications failed (>2%); first: "
            f"{failures[0][1]}")
    return outs, failures


def run_coverage(cfg: ExperimentConfig) -> RunReport:
    """Empirical uniform coverage of the simulated band over `reps` draws."""
    t0 = time.perf_counter()
    res = cfg.resolved()
    workers = res["workers"]
    outs, failures = _collect(_coverage_rep,
                              [(cfg, r) for r in range(cfg.reps)],
                              workers, cfg.reps)
    flags = np.array([c for _, (c, _) in outs])
    crits = np.array([k for _, (_, k) in outs])
    cov = float(flags.mean())
    se = float(np.sqrt(cov * (1 - cov) / flags.size)) if flags.size else float("nan")
    return RunReport(
        "coverage", res,
        {"coverage": cov, "se": se, "nominal": 1 - cfg.alpha,
         "reps_done": int(flags.size), "n_failed": len(failures),
         "failures": failures, "crit_mean": float(crits.mean()),
         "per_rep": flags.astype(int).tolist()},
        time.perf_counter() - t0)


def _error_grid(design, part, q_grid, fres, per_cell=10):
    xg = default_x_grid(part, per_cell)
    err_sup = err_l2 = 0.0
    for q in q_grid:
        mu = fres.index_values(xg, q, 0)
        diff = mu - design.truth_index(xg, q)
        err_sup = max(err_sup, float(np.abs(diff).max()))
        err_l2 += float(np.mean(diff**2))
    return err_sup, float(np.sqrt(err_l2 / len(q_grid)))


def _rate_rep(args):
    cfg, n, rep = args
    design, res, part, basis, loss, q_grid = _experiment_pieces(
        cfg, n, cells_for_rate)
    data = generate(DGPSpec(cfg.dgp, n, cfg.seed), rep=rep)
    fres = fit(data, basis, loss, q_grid)
    return _error_grid(design, part, q_grid, fres, cfg.x_per_cell)


def _slope_with_ci(ns, med, boot_meds, n_boot=200):
    logn = np.log(np.asarray(ns, float))
    slope = float(np.polyfit(logn, np.log(med), 1)[0])
    slopes = [np.polyfit(logn, np.log(bm), 1)[0] for bm in boot_meds]
    lo, hi = np.percentile(slopes, [2.5, 97.5])
    return slope, (float(lo), float(hi))


def _bootstrap_medians(per_n_errors, rng, n_boot=200):
    out = []
    for _ in range(n_boot):
        meds = []
        for errs in per_n_errors:
            e = np.asarray(errs)
            meds.append(np.median(e[rng.integers(0, e.size, e.size)]))
        out.append(meds)
    return out


def run_rates(cfg: ExperimentConfig) -> RunReport:
    """Median sup / L2 error against truth across an n-ladder, with log-log
    slopes and bootstrap confidence intervals."""
    if len(cfg.n_ladder) < 4:
        raise ValueError("rate experiments need an n-ladder with >= 4 sizes")
    t0 = time.perf_counter()
    res = cfg.resolved()
    workers = res["workers"]
    sup_by_n, l2_by_n = [], []
    for n in cfg.n_ladder:
        outs, _ = _collect(_rate_rep, [(cfg, n, r) for r in range(cfg.reps)],
                           workers, cfg.reps)
        sup_by_n.append([s for _, (s, _) in outs])
        l2_by_n.append([l for _, (_, l) in outs])
    med_sup = [float(np.median(e)) for e in sup_by_n]
    med_l2 = [float(np.median(e)) for e in l2_by_n]
    rng = philox_stream(cfg.seed, 3, 0)
    slope_sup, ci_sup = _slope_with_ci(cfg.n_ladder, med_sup,
                                       _bootstrap_medians(sup_by_n, rng))
    slope_l2, ci_l2 = _slope_with_ci(cfg.n_ladder, med_l2,
                                     _bootstrap_medians(l2_by_n, rng))
    design = DGPS[cfg.dgp]
    theory = -cfg.m / (2.0 * cfg.m + design.d)
    return RunReport(
        "rates", res,
        {"n_ladder": list(cfg.n_ladder), "median_sup": med_sup,
         "median_l2": med_l2, "slope_sup": slope_sup, "slope_sup_ci": ci_sup,
         "slope_l2": slope_l2, "slope_l2_ci": ci_l2,
         "theory_slope": theory},
        time.perf_counter() - t0)


def _bahadur_rep(args):
    cfg, n, rep = args
    design, res, part, basis, loss, q_grid = _experiment_pieces(
        cfg, n, cells_for_coverage)
    data = generate(DGPSpec(cfg.dgp, n, cfg.seed), rep=rep)
    fres = fit(data, basis, loss, _fit_q_grid(loss, q_grid, n))
    sand = build_sandwich(fres)
    xg = default_x_grid(part, cfg.x_per_cell)
    num = den = 0.0
    for q in q_grid:
        mu0 = design.truth_index(xg, q)
        L = bahadur_linearization(sand, data, xg, (0,) * design.d, q,
                                  mu0_fn=design.truth_index)
        resid = fres.index_values(xg, q, 0) - mu0 - L
        num = max(num, float(np.abs(resid).max()))
        den = max(den, float(np.abs(L).max()))
    return num / den if den > 0 else float("inf")


def run_bahadur(cfg: ExperimentConfig) -> RunReport:
    """Remainder-to-linear-term ratio sup|mu_hat - mu0 - L| / sup|L| across
    the n-ladder; the ratio must shrink as n grows.

    Cells default to the undersmoothed rule so the smoothing bias (same
    order as the linear term under the IMSE rule, by construction) does not
    mask the decay.  The sharpest display of the nonlinearity remainder is
    an in-span truth (``qrlin1d``) with ``cfg.cells`` fixed across the
    ladder: bias is then exactly zero and the ratio tracks the effective
    per-cell sample size alone.
    """
    if len(cfg.n_ladder) < 2:
        raise ValueError("remainder experiments need an n-ladder with >= 2 sizes")
    t0 = time.perf_counter()
    res = cfg.resolved()
    workers = res["workers"]
    ratios = []
    for n in cfg.n_ladder:
        outs, _ = _collect(_bahadur_rep, [(cfg, n, r) for r in range(cfg.reps)],
                           workers, cfg.reps)
        ratios.append([r for _, r in outs])
    med = [float(np.median(r)) for r in ratios]
    return RunReport(
        "bahadur", res,
        {"n_ladder": list(cfg.n_ladder), "median_ratio": med,
         "ratio_first_over_last": med[0] / med[-1] if med[-1] > 0 else float("inf")},
        time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def read_csv_dataset(path) -> Dataset:
    """CSV with header ``x1,...,xd,y``; malformed rows report their number."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        d = len(header) - 1
        if d < 1 or header[-1] != "y" or \
                header[:-1] != [f"x{j + 1}" for j in range(d)]:
            raise DataError(
                f"{path}: header must be x1,...,xd,y; got {','.join(header)}")
        X, y = [], []
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise DataError(f"{path}: row {i}: expected {d + 1} fields, "
                                f"got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError as e:
                raise DataError(f"{path}: row {i}: {e}") from None
            X.append(vals[:-1])
            y.append(vals[-1])
    if not X:
        raise DataError(f"{path}: no data rows")
    return Dataset(np.asarray(X), np.asarray(y))


def write_fit_json(fres: FitResult, path):
    """Self-contained fit: model, partition, coefficients and the data."""
    part = fres.basis.partition
    obj = {
        "schema_version": SCHEMA_VERSION, "kind": "fit",
        "package_version": __version__,
        "domain": part.domain.to_dict(),
        "knots": [k.tolist() for k in part.knots],
        "basis": fres.basis.spec.to_dict(),
        "loss": loss_to_dict(fres.loss),
        "q_grid": fres.q_grid.tolist(),
        "beta": fres.beta.tolist(),
        "converged": fres.converged.tolist(),
        "grad_norm": fres.grad_norm.tolist(),
        "objective": fres.objective.tolist(),
        "box_R": fres.box_R,
        "data": {"X": fres.X.tolist(), "y": fres.y.tolist()},
    }
    with open(path, "w") as fh:
        json.dump(obj, fh)


def read_fit_json(path) -> FitResult:
    with open(path) as fh:
        obj = json.load(fh)
    if obj.get("kind") != "fit":
        raise DataError(f"{path}: not a fit file")
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"{path}: schema {obj.get('schema_version')!r} not "
                        f"supported (want {SCHEMA_VERSION})")
    domain = Domain.from_dict(obj["domain"])
    part = Partition(domain, tuple(np.asarray(k, float) for k in obj["knots"]))
    basis = build_basis(part, BasisSpec.from_dict(obj["basis"]))
    loss = loss_from_dict(obj["loss"])
    X = np.asarray(obj["data"]["X"], float)
    y = np.asarray(obj["data"]["y"], float)
    from .solver import DesignCache
    cols, vals, cells = basis.eval_many(X, 0)
    counts = np.bincount(cells, minlength=part.cell_count)
    design = DesignCache(cols, vals, cells, counts)
    return FitResult(
        basis, loss, np.asarray(obj["q_grid"], float),
        np.asarray(obj["beta"], float), np.asarray(obj["converged"], bool),
        np.asarray(obj["grad_norm"], float), np.asarray(obj["objective"], float),
        design, y, y.size, obj.get("box_R"), X)


def write_band_csv(band, path):
    """Rows ``x1,...,xd,q,center,lo,hi,omega`` over the evaluation grid."""
    d = band.grid.x_points.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(d)] +
                   ["q", "center", "lo", "hi", "omega"])
        for b, q in enumerate(band.grid.q_points):
            for a, x in enumerate(band.grid.x_points):
                w.writerow([repr(float(v)) for v in x] +
                           [repr(float(q)), repr(float(band.center[a, b])),
                            repr(float(band.band_lo[a, b])),
                            repr(float(band.band_hi[a, b])),
                            repr(float(band.omega_hat[a, b]))])
