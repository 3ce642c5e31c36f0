"""Locally supported bases on tensor-product partitions.

Two families of order ``m`` (polynomial degree ``m - 1``) are provided:

``piecewise_poly``
    Per-cell shifted-and-scaled Legendre polynomials, orthonormal with
    respect to the normalized Lebesgue measure on each cell.  Every basis
    function lives on exactly one cell ("unconnected"), so ``K`` equals
    ``cell_count * m**d`` and per-cell fitting decouples.

``bspline``
    Tensor-product B-splines on the partition knots with open boundary
    knots (multiplicity ``m`` at each end), giving ``K_j = cells_j + m - 1``
    per dimension ("connected").

Evaluation returns the ``m**d`` active functions at a point, including
partial derivatives up to the configured cap ``varsigma < m``.  Values at
knots follow right-continuity, matching the half-open cell convention of
:mod:`partmest.partition`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.interpolate import BSpline

from .exceptions import DerivativeOrderTooHigh, OutOfDomain, UnsupportedOrder
from .partition import Partition, cell_multi_index, locate_many

#: Hard cap on the basis order.
MAX_ORDER = 5

BASIS_KINDS = ("piecewise_poly", "bspline")


@dataclass(frozen=True)
class BasisSpec:
    """Basis family, order and derivative cap.

    Parameters
    ----------
    kind : {"piecewise_poly", "bspline"}
    m : int
        Order (degree ``m - 1``); ``1 <= m <= 5``.
    varsigma : int
        Largest admissible total derivative order, ``0 <= varsigma < m``.
    """

    kind: str
    m: int
    varsigma: int = 0

    def __post_init__(self):
        if self.kind not in BASIS_KINDS:
            raise UnsupportedOrder(f"unknown basis kind {self.kind!r}")
        if not 1 <= self.m <= MAX_ORDER:
            raise UnsupportedOrder(f"order m={self.m} outside [1, {MAX_ORDER}]")
        if not 0 <= self.varsigma < self.m:
            raise UnsupportedOrder(
                f"derivative cap varsigma={self.varsigma} must satisfy 0 <= varsigma < m"
            )

    def to_dict(self) -> dict:
        return {"kind": self.kind, "m": self.m, "varsigma": self.varsigma}

    @classmethod
    def from_dict(cls, obj: dict) -> "BasisSpec":
        return cls(obj["kind"], int(obj["m"]), int(obj["varsigma"]))


@dataclass(frozen=True)
class SparseVec:
    """Sparse coefficient vector: strictly increasing indices with values."""

    indices: np.ndarray
    values: np.ndarray


def _legendre_deriv_tables(m: int, varsigma: int) -> list:
    """Coefficient tables ``C[v]`` with column ``a`` holding the Legendre
    coefficients of ``sqrt(2a + 1) * d^v P_a / du^v`` on ``[-1, 1]``."""
    tables = []
    for v in range(varsigma + 1):
        C = np.zeros((m, m))
        for a in range(m):
            e = np.zeros(a + 1)
            e[a] = np.sqrt(2 * a + 1)
            c = npleg.legder(e, v) if v > 0 else e
            C[: len(c), a] = c
        tables.append(C)
    return tables


def _bspline_knots(knots_1d: np.ndarray, m: int) -> np.ndarray:
    """Open knot vector: boundary knots repeated ``m`` times."""
    return np.concatenate(
        [np.full(m - 1, knots_1d[0]), knots_1d, np.full(m - 1, knots_1d[-1])]
    )


def _bspline_deriv_operator(t: np.ndarray, k: int, nu: int) -> np.ndarray:
    """Dense operator ``W`` with ``A_k^{(nu)}(x) = A_{k-nu}(x; t[nu:-nu]) @ W``.

    ``A_k`` is the degree-``k`` design matrix on knots ``t``.  Built from the
    standard one-derivative relation applied ``nu`` times.
    """
    n = len(t) - k - 1
    W = np.eye(n)
    tt, kk = t, k
    for _ in range(nu):
        nn = len(tt) - kk - 1
        M = np.zeros((nn - 1, nn))
        denom = tt[kk + 1 : kk + nn] - tt[1:nn]
        step = kk / denom
        M[np.arange(nn - 1), np.arange(nn - 1)] = -step
        M[np.arange(nn - 1), np.arange(1, nn)] = step
        W = M @ W
        tt, kk = tt[1:-1], kk - 1
    return W


class Basis:
    """A built basis; construct through :func:`build_basis`.

    Immutable after construction and safe for concurrent evaluation.
    """

    def __init__(self, partition: Partition, spec: BasisSpec):
        self.partition = partition
        self.spec = spec
        d, m = partition.d, spec.m
        self.width = m**d
        if spec.kind == "piecewise_poly":
            self.K = partition.cell_count * self.width
            self._dim_sizes = None
            self._leg_tables = _legendre_deriv_tables(m, spec.varsigma)
        else:
            self._t = [_bspline_knots(k, m) for k in partition.knots]
            self._dim_sizes = tuple(c + m - 1 for c in partition.cells_per_dim)
            self.K = int(np.prod(self._dim_sizes))
            self._deriv_ops = [
                [_bspline_deriv_operator(t, m - 1, nu) for nu in range(spec.varsigma + 1)]
                for t in self._t
            ]
        # strides for flattening the per-dimension local tensor in C order
        self._local_shape = (m,) * d

    # -- structure maps -------------------------------------------------

    def active_map(self, cell: int) -> np.ndarray:
        """Indices of the basis functions that are nonzero on ``cell``."""
        multi = cell_multi_index(self.partition, cell)
        m = self.spec.m
        if self.spec.kind == "piecewise_poly":
            return cell * self.width + np.arange(self.width)
        per_dim = [np.arange(c, c + m) for c in multi]
        grids = np.meshgrid(*per_dim, indexing="ij")
        flat = np.ravel_multi_index([g.ravel() for g in grids], self._dim_sizes)
        return np.sort(flat)

    def support_map(self, k: int) -> np.ndarray:
        """Cells on which basis function ``k`` is nonzero (a connected block)."""
        if not 0 <= k < self.K:
            raise IndexError(f"basis index {k} out of range")
        m = self.spec.m
        if self.spec.kind == "piecewise_poly":
            return np.array([k // self.width])
        multi = np.unravel_index(k, self._dim_sizes)
        per_dim = [
            np.arange(max(0, i - m + 1), min(cells, i + 1))
            for i, cells in zip(multi, self.partition.cells_per_dim)
        ]
        grids = np.meshgrid(*per_dim, indexing="ij")
        return np.sort(
            np.ravel_multi_index([g.ravel() for g in grids], self.partition.cells_per_dim)
        )

    @property
    def bandwidth(self) -> int:
        """Largest flat-index distance between basis functions sharing a cell."""
        if self.spec.kind == "piecewise_poly":
            return self.width - 1
        m = self.spec.m
        strides = np.cumprod((self._dim_sizes + (1,))[::-1])[::-1][1:]
        return int(((m - 1) * strides).sum())

    # -- evaluation ------------------------------------------------------

    def _check_v(self, v) -> tuple:
        d = self.partition.d
        if np.isscalar(v):
            v = (int(v),) + (0,) * (d - 1) if d > 1 else (int(v),)
        v = tuple(int(a) for a in v)
        if len(v) != d or any(a < 0 for a in v):
            raise DerivativeOrderTooHigh(f"bad multi-index {v} for d={d}")
        if sum(v) > self.spec.varsigma:
            raise DerivativeOrderTooHigh(
                f"|v|={sum(v)} exceeds derivative cap varsigma={self.spec.varsigma}"
            )
        return v

    def _eval_dim(self, j: int, xj: np.ndarray, cells_j: np.ndarray, nu: int):
        """Per-dimension active indices (n, m) and derivative values (n, m)."""
        m = self.spec.m
        knots = self.partition.knots[j]
        if self.spec.kind == "piecewise_poly":
            lo = knots[cells_j]
            w = knots[cells_j + 1] - lo
            u = 2.0 * (xj - lo) / w - 1.0
            V = npleg.legvander(u, m - 1) @ self._leg_tables[nu]
            V *= (2.0 / w[:, None]) ** nu
            idx = cells_j[:, None] * m + np.arange(m)[None, :]
            return idx, V
        t = self._t[j]
        deg = m - 1 - nu
        tt = t[nu : len(t) - nu] if nu > 0 else t
        A = BSpline.design_matrix(xj, tt, deg, extrapolate=False)
        V_low = A.toarray()
        V = V_low @ self._deriv_ops[j][nu] if nu > 0 else V_low
        idx = cells_j[:, None] + np.arange(m)[None, :]
        vals = np.take_along_axis(V, idx, axis=1)
        return idx, vals

    def eval_many(self, X: np.ndarray, v=0):
        """Evaluate the ``m**d`` active functions (or partial derivatives).

        Parameters
        ----------
        X : ndarray, shape (n, d)
        v : int or multi-index
            Partial derivative orders per dimension, ``sum(v) <= varsigma``.

        Returns
        -------
        cols : int64 ndarray, shape (n, m**d)
            Strictly increasing global basis indices per row.
        vals : ndarray, shape (n, m**d)
        cells : int64 ndarray, shape (n,)
            Containing cell of each row.
        """
        v = self._check_v(v)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n, d = X.shape
        m = self.spec.m
        flat_cells = locate_many(self.partition, X)
        multi = np.column_stack(np.unravel_index(flat_cells, self.partition.cells_per_dim))
        dim_idx, dim_val = [], []
        for j in range(d):
            idx, val = self._eval_dim(j, X[:, j], multi[:, j], v[j])
            dim_idx.append(idx)
            dim_val.append(val)

        local = np.indices(self._local_shape).reshape(d, -1)  # (d, m**d), C order
        cols = np.zeros((n, self.width), dtype=np.int64)
        vals = np.ones((n, self.width))
        if self.spec.kind == "piecewise_poly":
            # local index within the cell block, then offset by the block start
            loc = np.zeros(self.width, dtype=np.int64)
            for j in range(d):
                loc = loc * m + local[j]
                vals *= dim_val[j][:, local[j]]
            cols = flat_cells[:, None] * self.width + loc[None, :]
        else:
            strides = np.cumprod((self._dim_sizes + (1,))[::-1])[::-1][1:]
            for j in range(d):
                cols += dim_idx[j][:, local[j]] * strides[j]
                vals *= dim_val[j][:, local[j]]
        return cols, vals, flat_cells

    def eval(self, x, v=0) -> SparseVec:
        """Active basis values at a single point, as a :class:`SparseVec`."""
        cols, vals, _ = self.eval_many(np.atleast_2d(x), v)
        return SparseVec(cols[0], vals[0])

    def to_dict(self) -> dict:
        return {"partition": self.partition.to_dict(), "spec": self.spec.to_dict()}

    @classmethod
    def from_dict(cls, obj: dict) -> "Basis":
        return cls(Partition.from_dict(obj["partition"]), BasisSpec.from_dict(obj["spec"]))


def build_basis(partition: Partition, spec: BasisSpec) -> Basis:
    """Construct a :class:`Basis` on ``partition`` following ``spec``."""
    return Basis(partition, spec)


def check_local_basis(basis: Basis, n_mc: int, seed: int = 0) -> dict:
    """Monte Carlo diagnostic of local norms and per-cell Gram conditioning.

    Draws ``n_mc`` uniform points, evaluates the derivative-cap gradient
    ``p^(varsigma e_1)`` and reports the scaled norm ``|p| * h^varsigma``
    (sup and inf over points), plus the minimum over cells of the smallest
    eigenvalue of the per-cell Gram integral divided by ``h^d``.  The Gram
    uses Gauss-Legendre quadrature, exact for these piecewise polynomials.
    All three numbers must stay away from 0 and infinity for a usable basis.
    """
    if n_mc < 100:
        raise ValueError("n_mc >= 100 required")
    part, spec = basis.partition, basis.spec
    d = part.d
    rng = np.random.default_rng(seed)
    X = part.domain.lower + rng.random((n_mc, d)) * (part.domain.upper - part.domain.lower)
    v = (spec.varsigma,) + (0,) * (d - 1)
    _, vals, _ = basis.eval_many(X, v)
    norms = np.sqrt((vals**2).sum(axis=1)) * part.h ** spec.varsigma

    # per-cell Gram of the active functions, Gauss-Legendre per dimension
    nodes, weights = np.polynomial.legendre.leggauss(spec.m + 1)
    min_eig = np.inf
    for cell in range(part.cell_count):
        multi = cell_multi_index(part, cell)
        axes = []
        wts = []
        for j, i in enumerate(multi):
            a, b = part.knots[j][i], part.knots[j][i + 1]
            axes.append(0.5 * (b - a) * (nodes + 1) + a)
            wts.append(0.5 * (b - a) * weights)
        grids = np.meshgrid(*axes, indexing="ij")
        P = np.column_stack([g.ravel() for g in grids])
        wgrid = np.meshgrid(*wts, indexing="ij")
        wq = np.prod(np.column_stack([g.ravel() for g in wgrid]), axis=1)
        _, V, _ = basis.eval_many(P, 0)
        G = (V * wq[:, None]).T @ V
        min_eig = min(min_eig, float(np.linalg.eigvalsh(G)[0]))

    return {
        "min_scaled_norm": float(norms.min()),
        "max_scaled_norm": float(norms.max()),
        "min_local_gram_eig": min_eig / part.h**d,
    }
