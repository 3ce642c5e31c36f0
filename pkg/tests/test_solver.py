import numpy as np
import pytest

import oracles
from partmest.basis import BasisSpec, build_basis
from partmest.exceptions import BoxRequired, CellTooSparse
from partmest.losses import (Link, distribution_loss, huber_loss,
                             logistic_loss, lp_loss, model_from_key,
                             quantile_loss, tukey_loss)
from partmest.partition import Domain, build_tensor_partition
from partmest.solver import (Dataset, SolverOptions, auto_box_radius, fit,
                             fit_per_cell)

UNIT = Domain([0.0], [1.0])


def _basis(cells, kind="piecewise_poly", m=1, varsigma=0):
    return build_basis(build_tensor_partition(UNIT, [cells]),
                       BasisSpec(kind, m, varsigma))


def _spread(n, lo=0.0, hi=1.0):
    """Deterministic in-domain covariates, one column."""
    return ((np.arange(n) + 0.5) / n * (hi - lo) + lo)[:, None]


def test_cell_median_of_five():
    data = Dataset(_spread(5), np.array([1.0, 2.0, 3.0, 4.0, 5.0]))
    res = fit(data, _basis(1), quantile_loss(), [0.5])
    assert res.beta[0, 0] == pytest.approx(3.0, abs=1e-12)


def test_cell_lower_quartile_tie_rule():
    data = Dataset(_spread(4), np.array([2.0, 4.0, 6.0, 8.0]))
    res = fit(data, _basis(1), quantile_loss(), [0.25])
    assert res.beta[0, 0] == pytest.approx(2.0, abs=1e-12)


def test_multicell_quantiles_match_sorting_oracle():
    rng = np.random.default_rng(5)
    n = 200
    X = rng.uniform(0, 1, (n, 1))
    y = rng.normal(size=n)
    bas = _basis(4)
    res = fit(Dataset(X, y), bas, quantile_loss(), [0.25, 0.5, 0.75])
    from partmest.partition import locate_many
    cells = locate_many(bas.partition, X)
    for iq, q in enumerate([0.25, 0.5, 0.75]):
        for c in range(4):
            want = oracles.left_quantile(y[cells == c], q)
            assert abs(res.beta[iq, c] - want) <= 1e-12


def test_logistic_cell_mle():
    data = Dataset(_spread(4), np.array([1.0, 1.0, 1.0, 0.0]))
    res = fit(data, _basis(1), logistic_loss(), [0.0])
    assert res.beta[0, 0] == pytest.approx(np.log(3.0), abs=1e-8)
    assert res.beta[0, 0] == pytest.approx(oracles.logistic_cell_mle(0.75),
                                           abs=1e-8)


def test_distribution_cell_inverts_cloglog():
    y = np.array([0.0, 0.0, 1.0, 1.0])
    data = Dataset(_spread(4), y)
    res = fit(data, _basis(1), model_from_key("distribution", "cloglog"), [0.5])
    assert res.beta[0, 0] == pytest.approx(np.log(np.log(2.0)), abs=1e-8)


def test_p2_equals_normal_equations():
    rng = np.random.default_rng(6)
    n = 300
    X = rng.uniform(0, 1, (n, 1))
    y = np.sin(3 * X[:, 0]) + rng.normal(scale=0.3, size=n)
    for kind, m in (("bspline", 2), ("bspline", 3), ("piecewise_poly", 2)):
        bas = _basis(6, kind, m)
        res = fit(Dataset(X, y), bas, lp_loss(2.0), [0.0])
        cols, vals, _ = bas.eval_many(X, 0)
        P = np.zeros((n, bas.K))
        np.add.at(P, (np.repeat(np.arange(n), cols.shape[1]).reshape(-1),
                      cols.reshape(-1)), vals.reshape(-1))
        want = oracles.ls_normal_equations(P, y)
        assert np.max(np.abs(res.beta[0] - want)) <= 1e-8


def test_single_observation_cells_interpolate():
    y = np.array([0.3, -1.2, 0.7, 2.0])
    opts = SolverOptions(min_obs_per_cell=1, allow_small_n=True)
    res = fit(Dataset(_spread(4), y), _basis(4), lp_loss(2.0), [0.0], opts)
    assert np.allclose(res.beta[0], y, atol=1e-10)


def test_auto_box_radius_constant_response():
    bas = _basis(2)
    data3 = Dataset(_spread(20), np.full(20, 3.0))
    assert auto_box_radius(data3, bas, tukey_loss(), [1.0],
                           SolverOptions()) == pytest.approx(6.0)
    # small responses hit the floor of 1
    data0 = Dataset(_spread(20), np.full(20, 0.2))
    assert auto_box_radius(data0, bas, tukey_loss(), [1.0],
                           SolverOptions()) == pytest.approx(1.0)


def test_empty_q_grid_rejected():
    data = Dataset(_spread(10), np.zeros(10))
    with pytest.raises(ValueError):
        fit(data, _basis(1), quantile_loss(), [])


def test_convexity_certificate():
    rng = np.random.default_rng(7)
    n = 250
    X = rng.uniform(0, 1, (n, 1))
    y = X[:, 0] + rng.standard_t(3, n)
    bas = _basis(4, "bspline", 2)
    res = fit(Dataset(X, y), bas, huber_loss(), [1.0])
    cols, vals, _ = bas.eval_many(X, 0)

    def objective(beta):
        theta = np.einsum("ij,ij->i", vals, beta[cols])
        return float(np.mean(huber_loss().rho_theta(y, theta, 1.0)))

    base = objective(res.beta[0])
    for _ in range(100):
        delta = rng.choice([-1e-3, 1e-3], size=bas.K)
        assert base <= objective(res.beta[0] + delta) + 1e-12


def test_warm_start_does_not_move_the_answer():
    rng = np.random.default_rng(8)
    n = 300
    X = rng.uniform(0, 1, (n, 1))
    y = np.cos(2 * X[:, 0]) + rng.normal(size=n)
    bas = _basis(5, "bspline", 2)
    qs = [0.5, 1.0, 2.0]
    joint = fit(Dataset(X, y), bas, huber_loss(), qs)
    for iq, q in enumerate(qs):
        alone = fit(Dataset(X, y), bas, huber_loss(), [q])
        assert np.max(np.abs(joint.beta[iq] - alone.beta[0])) <= 1e-6


def test_link_scaling_equivariance():
    # replacing eta(theta) by eta(2 theta) must halve the coefficients
    rng = np.random.default_rng(9)
    n = 400
    X = rng.uniform(0, 1, (n, 1))
    y = 0.5 * X[:, 0] + rng.normal(scale=0.2, size=n)
    scaled = Link("identity", lambda t: 2.0 * np.asarray(t),
                  lambda t: np.full(np.shape(t) or (), 2.0),
                  lambda t: np.zeros(np.shape(t) or ()),
                  lambda p: np.asarray(p) / 2.0, (-np.inf, np.inf))
    bas = _basis(4, "bspline", 2)
    plain = fit(Dataset(X, y), bas, lp_loss(2.0), [0.0])
    half = fit(Dataset(X, y), bas, lp_loss(2.0, scaled), [0.0])
    assert np.allclose(half.beta[0], plain.beta[0] / 2.0, atol=1e-6)


def test_sparse_cell_aborts_with_cell_named():
    data = Dataset(_spread(10), np.zeros(10))
    with pytest.raises(CellTooSparse, match="cell"):
        fit(data, _basis(8), quantile_loss(), [0.5])


def test_nonconvergence_is_recorded_not_raised():
    rng = np.random.default_rng(11)
    n = 200
    X = rng.uniform(0, 1, (n, 1))
    y = np.where(rng.random(n) < 0.1, 50.0, rng.normal(size=n))
    bas = _basis(4, "bspline", 2)
    opts = SolverOptions(max_iter=1, grad_tol=1e-13)
    res = fit(Dataset(X, y), bas, huber_loss(), [1.0], opts)
    assert res.converged.dtype == bool
    assert not res.converged[0]
    assert np.isfinite(res.objective[0])


def test_box_is_never_violated():
    rng = np.random.default_rng(12)
    n = 200
    X = rng.uniform(0, 1, (n, 1))
    y = rng.normal(size=n)
    res = fit(Dataset(X, y), _basis(4, "bspline", 2), tukey_loss(), [2.0],
              SolverOptions(box_R=0.01))
    assert np.max(np.abs(res.beta[0])) <= 0.01 + 1e-12
    with pytest.raises(BoxRequired):
        fit(Dataset(X, y), _basis(4, "bspline", 2), tukey_loss(), [2.0],
            SolverOptions(auto_box=False))


def test_tukey_box_rarely_binds_on_bounded_truth():
    rng = np.random.default_rng(13)
    interior = 0
    for rep in range(20):
        X = rng.uniform(0, 1, (300, 1))
        y = np.sin(2 * X[:, 0]) + rng.normal(scale=0.3, size=300)
        res = fit(Dataset(X, y), _basis(4, "bspline", 2), tukey_loss(), [2.0])
        if np.max(np.abs(res.beta[0])) < res.box_R - 1e-8:
            interior += 1
    assert interior >= 19          # constraint inactive in >= 95% of reps


def test_beta_at_interpolates_and_clamps():
    data = Dataset(_spread(40), np.linspace(-1, 1, 40))
    res = fit(data, _basis(2), quantile_loss(), [0.25, 0.75])
    mid = res.beta_at(0.5)
    assert np.allclose(mid, 0.5 * (res.beta[0] + res.beta[1]))
    assert np.allclose(res.beta_at(0.1), res.beta[0])     # clamped ends
    assert np.allclose(res.beta_at(0.9), res.beta[1])


def test_index_values_are_basis_times_beta():
    rng = np.random.default_rng(14)
    X = rng.uniform(0, 1, (200, 1))
    y = X[:, 0] ** 2 + rng.normal(scale=0.1, size=200)
    bas = _basis(4, "bspline", 2, varsigma=1)
    res = fit(Dataset(X, y), bas, lp_loss(2.0), [0.0])
    pts = np.array([[0.12], [0.5], [0.93]])
    got = res.index_values(pts, 0.0)
    for i, x in enumerate(pts):
        sv = bas.eval(x, 0)
        assert got[i] == pytest.approx(float(sv.values @ res.beta[0, sv.indices]))


def test_fit_per_cell_matches_full_fit():
    y = np.array([3.0, 1.0, 4.0, 1.0, 5.0])
    P = np.ones((5, 1))
    out = fit_per_cell(y, P, quantile_loss(), 0.5)
    assert out[0] == pytest.approx(3.0, abs=1e-12)
