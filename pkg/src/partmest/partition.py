"""Tensor-product partitions of rectangular covariate domains.

A partition splits a box ``[lower, upper] in R^d`` into axis-aligned cells
through one strictly increasing knot sequence per dimension.  Cells are
half-open, ``[a, b)`` in every coordinate, except that the topmost cell in
each dimension also contains its upper face, so every point of the closed
domain belongs to exactly one cell.  The mesh size ``h`` is the largest
Euclidean cell diameter; quasi-uniformity bounds ``h`` against the smallest
diameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateDomain, OutOfDomain, QuasiUniformityViolated

#: Default ceiling for max/min cell diameter ratio.
DEFAULT_QUASI_UNIFORMITY_BOUND = 4.0


@dataclass(frozen=True)
class Domain:
    """Rectangular covariate domain ``prod_j [lower[j], upper[j]]``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.ndim != 1 or lower.shape != upper.shape or lower.size < 1:
            raise DegenerateDomain("lower and upper must be equal-length 1-d arrays")
        if not (np.isfinite(lower).all() and np.isfinite(upper).all()):
            raise DegenerateDomain("domain bounds must be finite")
        if not (lower < upper).all():
            raise DegenerateDomain(
                f"need lower < upper in every coordinate, got {lower} vs {upper}"
            )
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def d(self) -> int:
        return self.lower.size

    def contains(self, X: np.ndarray) -> np.ndarray:
        """Boolean mask of rows of ``X`` inside the closed domain."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return ((X >= self.lower) & (X <= self.upper)).all(axis=1)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "Domain":
        return cls(np.asarray(obj["lower"], float), np.asarray(obj["upper"], float))


@dataclass(frozen=True)
class Partition:
    """Tensor-product cell decomposition of a :class:`Domain`.

    Attributes
    ----------
    domain : Domain
    knots : tuple of ndarray
        Per-dimension strictly increasing knot sequences, including both
        endpoints.
    cells_per_dim : tuple of int
    cell_count : int
        Total number of cells (product over dimensions).
    h : float
        Mesh size, the maximum Euclidean cell diameter.
    min_diam : float
        Minimum Euclidean cell diameter.
    """

    domain: Domain
    knots: tuple
    cells_per_dim: tuple = field(init=False)
    cell_count: int = field(init=False)
    h: float = field(init=False)
    min_diam: float = field(init=False)

    def __post_init__(self):
        knots = tuple(np.asarray(k, dtype=float) for k in self.knots)
        if len(knots) != self.domain.d:
            raise ValueError("one knot sequence per dimension required")
        for j, k in enumerate(knots):
            if k.size < 2 or not (np.diff(k) > 0).all():
                raise ValueError(f"knots in dimension {j} must be strictly increasing")
            if k[0] != self.domain.lower[j] or k[-1] != self.domain.upper[j]:
                raise ValueError(f"knots in dimension {j} must span the domain")
        widths_max = np.array([np.diff(k).max() for k in knots])
        widths_min = np.array([np.diff(k).min() for k in knots])
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "cells_per_dim", tuple(k.size - 1 for k in knots))
        object.__setattr__(self, "cell_count", int(np.prod(self.cells_per_dim)))
        object.__setattr__(self, "h", float(np.sqrt((widths_max**2).sum())))
        object.__setattr__(self, "min_diam", float(np.sqrt((widths_min**2).sum())))

    @property
    def d(self) -> int:
        return self.domain.d

    def widths(self, j: int) -> np.ndarray:
        """Cell widths along dimension ``j``."""
        return np.diff(self.knots[j])

    def to_dict(self) -> dict:
        return {
            "domain": self.domain.to_dict(),
            "knots": [k.tolist() for k in self.knots],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Partition":
        return cls(Domain.from_dict(obj["domain"]), tuple(obj["knots"]))


def build_tensor_partition(
    domain: Domain,
    cells_per_dim,
    knot_rule: str = "uniform",
    data: np.ndarray | None = None,
    quasi_uniformity_bound: float = DEFAULT_QUASI_UNIFORMITY_BOUND,
) -> Partition:
    """Build a tensor-product partition with uniform or data-quantile knots.

    Parameters
    ----------
    domain : Domain
    cells_per_dim : sequence of int
        Number of cells per dimension, each >= 1.
    knot_rule : {"uniform", "quantile"}
        "uniform" places equispaced knots; "quantile" places interior knots
        at left-continuous empirical quantiles of ``data``.
    data : ndarray, optional
        n x d covariate matrix, required for the quantile rule.
    quasi_uniformity_bound : float
        Maximum allowed ratio of largest to smallest cell diameter.

    Raises
    ------
    QuasiUniformityViolated
        If the knots produce a diameter ratio above the bound.  Uniform knots
        never trigger this.
    """
    cells = np.atleast_1d(np.asarray(cells_per_dim, dtype=int))
    if cells.size != domain.d or (cells < 1).any():
        raise ValueError(f"cells_per_dim must be {domain.d} positive integers")

    knots = []
    for j in range(domain.d):
        lo, hi = domain.lower[j], domain.upper[j]
        if knot_rule == "uniform":
            k = np.linspace(lo, hi, cells[j] + 1)
        elif knot_rule == "quantile":
            if data is None:
                raise ValueError("quantile knot rule requires data")
            col = np.asarray(data, dtype=float).reshape(len(data), -1)[:, j]
            if np.unique(col).size < cells[j] + 1:
                raise ValueError(
                    f"quantile rule needs >= {cells[j] + 1} distinct values in dim {j}"
                )
            probs = np.linspace(0.0, 1.0, cells[j] + 1)[1:-1]
            interior = np.quantile(col, probs, method="inverted_cdf")
            k = np.concatenate([[lo], np.asarray(interior, float), [hi]])
            if not (np.diff(k) > 0).all():
                raise QuasiUniformityViolated(
                    f"quantile knots collapse in dimension {j}: {k}"
                )
        else:
            raise ValueError(f"unknown knot rule {knot_rule!r}")
        knots.append(k)

    part = Partition(domain, tuple(knots))
    if part.h / part.min_diam > quasi_uniformity_bound:
        raise QuasiUniformityViolated(
            f"diameter ratio {part.h / part.min_diam:.3f} exceeds bound "
            f"{quasi_uniformity_bound}"
        )
    return part


def locate_many(partition: Partition, X: np.ndarray) -> np.ndarray:
    """Cell index (flat, C order over dimensions) for each row of ``X``.

    Points on the domain's upper face map to the topmost cell.  Points
    outside the closed domain raise :class:`OutOfDomain`.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != partition.d:
        raise OutOfDomain(f"points have {X.shape[1]} coordinates, domain has {partition.d}")
    inside = partition.domain.contains(X)
    if not inside.all():
        bad = int(np.flatnonzero(~inside)[0])
        raise OutOfDomain(f"point {X[bad]} outside domain closure (row {bad})")
    multi = np.empty((X.shape[0], partition.d), dtype=np.int64)
    for j in range(partition.d):
        idx = np.searchsorted(partition.knots[j], X[:, j], side="right") - 1
        np.clip(idx, 0, partition.cells_per_dim[j] - 1, out=idx)
        multi[:, j] = idx
    return np.ravel_multi_index(multi.T, partition.cells_per_dim)


def locate(partition: Partition, x) -> int:
    """Cell index containing the single point ``x``."""
    return int(locate_many(partition, np.atleast_2d(x))[0])


def cell_multi_index(partition: Partition, cell: int) -> tuple:
    """Per-dimension cell indices of flat index ``cell``."""
    if not 0 <= cell < partition.cell_count:
        raise IndexError(f"cell {cell} out of range [0, {partition.cell_count})")
    return tuple(int(i) for i in np.unravel_index(cell, partition.cells_per_dim))

def cell_geometry(partition: Partition, cell: int):
    """Lower corner, upper corner and Euclidean diameter of one cell."""
    multi = cell_multi_index(partition, cell)
    lower = np.array([partition.knots[j][i] for j, i in enumerate(multi)])
    upper = np.array([partition.knots[j][i + 1] for j, i in enumerate(multi)])
    return lower, upper, float(np.linalg.norm(upper - lower))
