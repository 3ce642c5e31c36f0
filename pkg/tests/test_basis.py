import numpy as np
import pytest

import oracles
from partmest.basis import BasisSpec, build_basis, check_local_basis
from partmest.exceptions import DerivativeOrderTooHigh, OutOfDomain, UnsupportedOrder
from partmest.partition import Domain, build_tensor_partition

UNIT1 = Domain([0.0], [1.0])
UNIT2 = Domain([0.0, 0.0], [1.0, 1.0])


def _basis(cells, kind, m, varsigma=0, domain=UNIT1):
    part = build_tensor_partition(domain, cells)
    return build_basis(part, BasisSpec(kind, m, varsigma))


def test_dimension_counts():
    assert _basis([4], "piecewise_poly", 1).K == 4
    assert _basis([4], "bspline", 2).K == oracles.bspline_count(4, 2)  # == 5
    assert _basis([2, 3], "piecewise_poly", 2, domain=UNIT2).K == 24
    for cells in (3, 6, 9):
        for m in (1, 2, 3, 4):
            assert _basis([cells], "bspline", m).K == oracles.bspline_count(cells, m)


def test_piecewise_constant_is_indicator():
    bas = _basis([4], "piecewise_poly", 1)
    sv = bas.eval(np.array([0.3]), 0)
    assert list(sv.indices) == [1]
    assert sv.values[0] == pytest.approx(1.0)


def test_hat_values_at_cell_midpoint():
    bas = _basis([4], "bspline", 2, varsigma=1)
    sv = bas.eval(np.array([0.375]), 0)
    assert list(sv.indices) == [1, 2]
    assert np.allclose(sv.values, [0.5, 0.5])
    dv = bas.eval(np.array([0.3]), 1)
    assert np.allclose(dv.values, [-4.0, 4.0])
    # cross-check the slope against a finite difference of the hat itself
    f = lambda t: bas.eval(np.array([t]), 0).values[0]
    assert dv.values[0] == pytest.approx(oracles.fd(f, 0.3, 1e-6), abs=1e-4)


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_bspline_partition_of_unity(m):
    bas = _basis([5], "bspline", m)
    rng = np.random.default_rng(10 + m)
    x = rng.uniform(0, 1, 1000)
    cols, vals, _ = bas.eval_many(x[:, None], 0)
    assert np.max(np.abs(vals.sum(axis=1) - 1.0)) < 1e-12


@pytest.mark.parametrize("kind,m,d", [("piecewise_poly", 3, 1), ("bspline", 3, 1),
                                      ("piecewise_poly", 2, 2), ("bspline", 2, 2)])
def test_sparsity_and_index_order(kind, m, d):
    domain = UNIT1 if d == 1 else UNIT2
    bas = _basis([3] * d, kind, m, domain=domain)
    rng = np.random.default_rng(3)
    for _ in range(200):
        x = rng.uniform(0, 1, d)
        sv = bas.eval(x, 0)
        assert len(sv.indices) <= m**d * 2**d
        assert np.all(np.diff(sv.indices) > 0)
        assert np.all(np.isfinite(sv.values))


@pytest.mark.parametrize("kind", ["piecewise_poly", "bspline"])
def test_first_derivative_matches_finite_difference(kind):
    part = build_tensor_partition(UNIT1, [5])
    bas = build_basis(part, BasisSpec(kind, 3, varsigma=1))
    rng = np.random.default_rng(4)
    # sample well inside cells; FD straddling a knot is meaningless
    x = (np.repeat(np.arange(5), 20) + rng.uniform(0.1, 0.9, 100)) / 5
    for xi in x:
        d0 = lambda t: bas.eval(np.array([t]), 0)
        got = bas.eval(np.array([xi]), 1)
        for j, col in enumerate(got.indices):
            f = lambda t, j=j: d0(t).values[j]
            ref = oracles.fd(f, xi, 1e-6)
            assert got.values[j] == pytest.approx(ref, rel=1e-5, abs=1e-5)


@pytest.mark.parametrize("kind", ["piecewise_poly", "bspline"])
@pytest.mark.parametrize("m", [1, 2, 3])
def test_reproduces_polynomials_below_order(kind, m):
    bas = _basis([4], kind, m)
    part = bas.partition
    for cell in range(part.cell_count):
        lo, hi = part.knots[0][cell], part.knots[0][cell + 1]
        grid = np.linspace(lo + 1e-9, hi - 1e-9, 25)
        cols, vals, _ = bas.eval_many(grid[:, None], 0)
        # dense design restricted to the active columns of this cell
        active = np.unique(cols)
        P = np.zeros((grid.size, active.size))
        for r in range(grid.size):
            P[r, np.searchsorted(active, cols[r])] = vals[r]
        for deg in range(m):
            target = grid**deg
            resid = target - P @ np.linalg.lstsq(P, target, rcond=None)[0]
            assert np.max(np.abs(resid)) < 1e-10


def test_check_local_basis_piecewise_constant():
    bas = _basis([6], "piecewise_poly", 1)
    rep = check_local_basis(bas, 1000, seed=0)
    assert rep["min_scaled_norm"] == pytest.approx(1.0)
    assert rep["max_scaled_norm"] == pytest.approx(1.0)
    assert rep["min_local_gram_eig"] == pytest.approx(1.0)


def test_check_local_basis_hat_gram_eigenvalue():
    bas = _basis([8], "bspline", 2)
    rep = check_local_basis(bas, 10_000, seed=0)
    h = 1 / 8
    lam_min = np.linalg.eigvalsh(oracles.hat_gram(h)).min() / h  # = 1/6
    assert rep["min_local_gram_eig"] == pytest.approx(lam_min, abs=1e-9)
    assert rep["min_local_gram_eig"] >= 1 / 6 - 1e-12


def test_check_local_basis_stable_across_seeds():
    bas = _basis([8], "bspline", 3, varsigma=1)
    a = check_local_basis(bas, 100_000, seed=0)
    b = check_local_basis(bas, 100_000, seed=1)
    for key in a:
        assert a[key] == pytest.approx(b[key], abs=1e-2)


def test_order_and_derivative_caps():
    with pytest.raises(UnsupportedOrder):
        BasisSpec("bspline", 6)
    with pytest.raises(UnsupportedOrder):
        BasisSpec("bspline", 2, varsigma=2)   # varsigma must stay below m
    with pytest.raises(UnsupportedOrder):
        BasisSpec("cubic_hermite", 2)
    bas = _basis([4], "bspline", 2, varsigma=1)
    with pytest.raises(DerivativeOrderTooHigh):
        bas.eval(np.array([0.3]), 2)
    with pytest.raises(OutOfDomain):
        bas.eval(np.array([1.5]), 0)


def test_right_continuity_at_knots():
    bas = _basis([4], "piecewise_poly", 1)
    at_knot = bas.eval(np.array([0.25]), 0)
    just_right = bas.eval(np.array([0.25 + 1e-12]), 0)
    assert list(at_knot.indices) == list(just_right.indices) == [1]
    # the top face belongs to the last cell, so eval at 1.0 still works
    top = bas.eval(np.array([1.0]), 0)
    assert list(top.indices) == [3]


def test_support_structure():
    pc = _basis([4], "piecewise_poly", 2)
    for k in range(pc.K):
        assert len(pc.support_map(k)) == 1          # unconnected family
    bs = _basis([6], "bspline", 3)
    for k in range(bs.K):
        cells = sorted(bs.support_map(k))
        assert cells == list(range(cells[0], cells[-1] + 1))   # connected block
    for cell in range(pc.partition.cell_count):
        assert len(pc.active_map(cell)) <= 2  # m^d with m=2, d=1


def test_round_trip_through_dict():
    spec = BasisSpec("bspline", 3, varsigma=1)
    assert BasisSpec.from_dict(spec.to_dict()) == spec
