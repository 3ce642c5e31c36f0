"""Command-line interface.

Subcommands: ``fit`` (CSV in, fit JSON out), ``band`` (fit JSON in, band CSV
or JSON out), ``check-basis`` (basis diagnostics), ``mc coverage|rates|
bahadur`` (experiment config JSON in, report JSON out), ``version``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .basis import BasisSpec, build_basis, check_local_basis
from .exceptions import DataError, NumericalError, PartmestError
from .harness import (ExperimentConfig, read_csv_dataset, read_fit_json,
                      run_bahadur, run_coverage, run_rates, write_band_csv,
                      write_fit_json)
from .inference import (EvalGrid, default_x_grid, level_band,
                        marginal_effect_band, simulate_band)
from .losses import model_from_key
from .partition import Domain, build_tensor_partition
from .sandwich import build_sandwich
from .solver import SolverOptions, fit


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse variant that raises instead of exiting with code 2."""

    def error(self, message):
        raise _UsageError(message)


def _parse_floats(text):
    try:
        return np.array([float(v) for v in text.split(",") if v.strip() != ""])
    except ValueError:
        raise _UsageError(f"expected comma-separated floats, got {text!r}")


def _build_parser():
    top = _Parser(prog="partmest", description=__doc__)
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model to a CSV dataset")
    p.add_argument("--data", required=True, help="CSV with header x1,...,xd,y")
    p.add_argument("--loss", required=True,
                   help="quantile | distribution | lp:<p> | logistic | huber | tukey")
    p.add_argument("--link", default=None, help="identity | logit | cloglog")
    p.add_argument("--cells", required=True, type=int, help="cells per dimension")
    p.add_argument("--order", required=True, type=int, help="basis order m")
    p.add_argument("--q", required=True, help="comma-separated loss indices")
    p.add_argument("--basis", default="bspline",
                   choices=["bspline", "piecewise_poly"])
    p.add_argument("--varsigma", type=int, default=None,
                   help="derivative cap (default order - 1)")
    p.add_argument("--knots", default="uniform", choices=["uniform", "quantile"])
    p.add_argument("--box", type=float, default=None,
                   help="box radius for non-convex losses (default: auto)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("band", help="uniform confidence band from a saved fit")
    p.add_argument("--fit", required=True, help="fit JSON file")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--draws", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--q", default=None,
                   help="comma-separated subset of the fitted q grid (default all)")
    p.add_argument("--x-per-cell", type=int, default=10)
    p.add_argument("--v", type=int, default=0,
                   help="derivative axis order (scalar, applied to axis 1)")
    p.add_argument("--transform", default="index",
                   choices=["index", "level", "effect"])
    p.add_argument("--method", default="auto",
                   choices=["auto", "generic", "bridge"])
    p.add_argument("--out", required=True, help=".csv or .json output")

    p = sub.add_parser("check-basis", help="local-basis diagnostics on the unit box")
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--cells", type=int, required=True)
    p.add_argument("--order", type=int, required=True)
    p.add_argument("--basis", default="bspline",
                   choices=["bspline", "piecewise_poly"])
    p.add_argument("--varsigma", type=int, default=None)
    p.add_argument("--mc", type=int, default=1000, help="Monte Carlo points")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="JSON output (default stdout)")

    p = sub.add_parser("mc", help="Monte Carlo experiments")
    msub = p.add_subparsers(dest="experiment", required=True)
    for kind in ("coverage", "rates", "bahadur"):
        m = msub.add_parser(kind)
        m.add_argument("--config", required=True, help="experiment config JSON")
        m.add_argument("--out", required=True, help="report JSON")

    sub.add_parser("version", help="print the package version")
    return top


def _cmd_fit(args):
    data = read_csv_dataset(args.data)
    loss = model_from_key(args.loss, args.link)
    lo, hi = data.X.min(axis=0), data.X.max(axis=0)
    part = build_tensor_partition(
        Domain(lo, hi), (args.cells,) * data.X.shape[1], knot_rule=args.knots,
        data=data.X if args.knots == "quantile" else None)
    varsigma = args.varsigma if args.varsigma is not None else args.order - 1
    basis = build_basis(part, BasisSpec(args.basis, args.order, varsigma))
    opts = SolverOptions(box_R=args.box) if args.box is not None else None
    fres = fit(data, basis, loss, _parse_floats(args.q), opts)
    write_fit_json(fres, args.out)
    bad = int((~fres.converged).sum())
    print(f"fit: n={data.n} K={basis.K} q_points={fres.q_grid.size} "
          f"unconverged={bad} -> {args.out}")
    return 0


def _cmd_band(args):
    fres = read_fit_json(args.fit)
    sand = build_sandwich(fres)
    part = fres.basis.partition
    xg = default_x_grid(part, args.x_per_cell)
    qs = _parse_floats(args.q) if args.q else fres.q_grid
    d = part.d
    if args.transform == "effect":
        v = (args.v if args.v >= 1 else 1,) + (0,) * (d - 1)
        grid = EvalGrid(xg, qs, v)
        band = marginal_effect_band(fres, sand, grid, args.alpha, args.draws,
                                    args.seed, args.method)
    else:
        grid = EvalGrid(xg, qs, (args.v,) + (0,) * (d - 1))
        maker = level_band if args.transform == "level" else simulate_band
        band = maker(fres, sand, grid, args.alpha, args.draws, args.seed,
                     args.method)
    if args.out.endswith(".json"):
        obj = {"schema_version": "1", "kind": "band", "alpha": band.alpha,
               "crit": band.crit, "n_draws": band.n_draws,
               "transform": args.transform,
               "x": band.grid.x_points.tolist(), "q": band.grid.q_points.tolist(),
               "center": band.center.tolist(), "lo": band.band_lo.tolist(),
               "hi": band.band_hi.tolist(), "omega": band.omega_hat.tolist(),
               "meta": band.meta}
        with open(args.out, "w") as fh:
            json.dump(obj, fh)
    else:
        write_band_csv(band, args.out)
    print(f"band: crit={band.crit:.4f} alpha={band.alpha} "
          f"grid={band.center.shape[0]}x{band.center.shape[1]} -> {args.out}")
    return 0


def _cmd_check_basis(args):
    part = build_tensor_partition(Domain(np.zeros(args.dim), np.ones(args.dim)),
                                  (args.cells,) * args.dim)
    varsigma = args.varsigma if args.varsigma is not None else args.order - 1
    basis = build_basis(part, BasisSpec(args.basis, args.order, varsigma))
    report = check_local_basis(basis, n_mc=args.mc, seed=args.seed)
    report.update(K=basis.K, bandwidth=basis.bandwidth, h=part.h)
    text = json.dumps(report, indent=1)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        print(text)
    return 0


def _cmd_mc(args):
    with open(args.config) as fh:
        try:
            cfg = ExperimentConfig.from_dict(json.load(fh))
        except (json.JSONDecodeError, TypeError, ValueError) as e:
            raise DataError(f"{args.config}: {e}") from None
    runner = {"coverage": run_coverage, "rates": run_rates,
              "bahadur": run_bahadur}[args.experiment]
    report = runner(cfg)
    report.write(args.out)
    keys = {"coverage": ("coverage", "se"), "rates": ("slope_sup", "slope_l2"),
            "bahadur": ("median_ratio",)}[args.experiment]
    summary = " ".join(f"{k}={report.results[k]}" for k in keys)
    print(f"{args.experiment}: {summary} wall={report.wall_clock_s:.1f}s "
          f"-> {args.out}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "version":
            print(__version__)
            return 0
        return {"fit": _cmd_fit, "band": _cmd_band,
                "check-basis": _cmd_check_basis, "mc": _cmd_mc}[args.command](args)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    except PartmestError as e:
        print(f"usage error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
