import numpy as np
import pytest

import oracles
from partmest.exceptions import (DegenerateDomain, OutOfDomain,
                                 QuasiUniformityViolated)
from partmest.partition import (Domain, Partition, build_tensor_partition,
                                cell_geometry, cell_multi_index, locate,
                                locate_many)

UNIT = Domain([0.0], [1.0])


def test_uniform_knots_four_cells():
    part = build_tensor_partition(UNIT, [4])
    assert np.allclose(part.knots[0], [0.0, 0.25, 0.5, 0.75, 1.0])
    assert part.cell_count == 4
    assert part.h == pytest.approx(0.25)
    assert part.min_diam == pytest.approx(0.25)


def test_cells_are_half_open_with_topmost_closed():
    part = build_tensor_partition(UNIT, [4])
    assert locate(part, [0.0]) == 0
    assert locate(part, [0.25]) == 1      # knot belongs to the right cell
    assert locate(part, [0.999]) == 3
    assert locate(part, [1.0]) == 3       # upper face is absorbed, not lost


def test_locate_rejects_outside_points():
    part = build_tensor_partition(UNIT, [4])
    with pytest.raises(OutOfDomain):
        locate(part, [1.0 + 1e-9])
    with pytest.raises(OutOfDomain):
        locate(part, [-0.1])
    with pytest.raises(OutOfDomain):
        locate_many(part, np.array([[0.5, 0.5]]))   # wrong dimension


def test_flat_ids_are_c_order():
    dom = Domain([0.0, 0.0], [1.0, 1.0])
    part = build_tensor_partition(dom, [2, 3])
    assert part.cell_count == 6
    # multi index (1, 2) -> flat 1 * 3 + 2
    assert locate(part, [0.7, 0.9]) == 5
    assert cell_multi_index(part, 5) == (1, 2)
    lo, hi, diam = cell_geometry(part, 5)
    assert np.allclose(lo, [0.5, 2 / 3])
    assert np.allclose(hi, [1.0, 1.0])
    assert diam == pytest.approx(np.hypot(0.5, 1 / 3))


def test_every_point_lands_in_exactly_one_cell():
    dom = Domain([0.0, -1.0], [2.0, 1.0])
    part = build_tensor_partition(dom, [3, 4])
    rng = np.random.default_rng(0)
    X = rng.uniform([0.0, -1.0], [2.0, 1.0], size=(10_000, 2))
    ids = locate_many(part, X)
    assert ids.min() >= 0 and ids.max() < part.cell_count
    # membership agrees with the cell geometry (half-open, top closed)
    for cell in range(part.cell_count):
        lo, hi, _ = cell_geometry(part, cell)
        mask = ids == cell
        pts = X[mask]
        closed_hi = hi == np.array([2.0, 1.0])
        upper_ok = np.where(closed_hi, pts <= hi, pts < hi)
        assert np.all(pts >= lo) and np.all(upper_ok)


def test_quantile_knots_are_left_quantiles():
    rng = np.random.default_rng(1)
    col = rng.exponential(size=200)
    col = np.clip(col, 0.0, 4.0)
    dom = Domain([0.0], [4.0])
    part = build_tensor_partition(dom, [4], knot_rule="quantile",
                                  data=col[:, None],
                                  quasi_uniformity_bound=100.0)
    expected = [oracles.left_quantile(col, p) for p in (0.25, 0.5, 0.75)]
    assert np.allclose(part.knots[0][1:-1], expected)
    assert part.knots[0][0] == 0.0 and part.knots[0][-1] == 4.0


def test_quantile_rule_requires_data_and_balance():
    with pytest.raises(ValueError):
        build_tensor_partition(UNIT, [4], knot_rule="quantile")
    # heavily skewed data breaks the diameter ratio bound
    col = np.concatenate([np.linspace(0, 0.01, 99), [1.0]])
    with pytest.raises(QuasiUniformityViolated):
        build_tensor_partition(UNIT, [4], knot_rule="quantile",
                               data=col[:, None], quasi_uniformity_bound=4.0)


def test_degenerate_domains_rejected():
    with pytest.raises(DegenerateDomain):
        Domain([0.0], [0.0])
    with pytest.raises(DegenerateDomain):
        Domain([0.0, 0.0], [1.0])
    with pytest.raises(DegenerateDomain):
        Domain([0.0], [np.inf])


def test_partition_validates_knots():
    with pytest.raises(ValueError):
        Partition(UNIT, (np.array([0.0, 0.5, 0.5, 1.0]),))
    with pytest.raises(ValueError):
        Partition(UNIT, (np.array([0.1, 0.5, 1.0]),))


def test_build_is_deterministic():
    a = build_tensor_partition(UNIT, [7])
    b = build_tensor_partition(UNIT, [7])
    assert np.array_equal(a.knots[0], b.knots[0])
    assert a.to_dict() == b.to_dict()


def test_round_trip_through_dict():
    dom = Domain([0.0, -2.0], [1.0, 2.0])
    part = build_tensor_partition(dom, [2, 5])
    back = Partition.from_dict(part.to_dict())
    assert back.cell_count == part.cell_count
    for j in range(2):
        assert np.allclose(back.knots[j], part.knots[j])
