import numpy as np
import pytest

import oracles
from partmest.exceptions import (InvalidP, LinkRangeInvalid, NonPositiveTuning,
                                 ResponseOutOfRange, WrongModel)
from partmest.losses import (LINKS, Link, distribution_loss, huber_loss,
                             identity_link, logistic_loss, loss_from_dict,
                             loss_to_dict, lp_loss, model_from_key,
                             quantile_bandwidth, quantile_loss, tukey_loss)


class _EtaCtx:
    """Minimal fit context: constant fitted eta per index value."""

    def __init__(self, table, n=3):
        self.table = table
        self.n = n

    def eta_at(self, q):
        return np.full(self.n, self.table[q])


# ---------------------------------------------------------------- quantile


def test_quantile_values():
    qs = quantile_loss()
    assert qs.rho(1.0, 0.0, 0.5) == pytest.approx(0.5)
    assert qs.psi(0.99, 1.0, 0.5) - qs.psi(1.01, 1.0, 0.5) == pytest.approx(1.0)
    assert qs.s_hat(None, 0.5, 0.5) == pytest.approx(0.25)
    assert qs.s_hat(None, 0.25, 0.75) == pytest.approx(0.0625)
    assert qs.q_domain == (0.05, 0.95)
    assert quantile_loss(eps0=0.01).q_domain == (0.01, 0.99)


def test_quantile_s_function_symmetry():
    qs = quantile_loss()
    rng = np.random.default_rng(0)
    for _ in range(100):
        q, qt = rng.uniform(0.05, 0.95, 2)
        assert qs.s_hat(None, q, qt) == pytest.approx(qs.s_hat(None, qt, q))
        assert qs.s_hat(None, q, q) == pytest.approx(q * (1 - q))


def test_quantile_bandwidth_floor():
    # Bofinger's rule collapses near the median-adjacent plateau; the floor
    # keeps the difference quotient from degenerating
    for q in (0.1, 0.25, 0.5, 0.9):
        assert quantile_bandwidth(q, 1000) >= 0.45 * 1000 ** -0.2 - 1e-12
    assert quantile_bandwidth(0.5, 1000) < 0.3


# ------------------------------------------------------------ distribution


def test_distribution_values():
    dr = distribution_loss()
    assert dr.psi(0.3, 0.5, 0.4) == pytest.approx(-1.0)
    ctx = _EtaCtx({0.4: 0.3, 0.7: 0.6})
    assert np.allclose(dr.s_hat(ctx, 0.4, 0.7), 0.48)
    assert np.allclose(dr.s_hat(ctx, 0.7, 0.4), 0.48)   # order-insensitive
    assert np.allclose(dr.psi1_hat(ctx, 0.4), 2.0)


def test_distribution_rejects_unbounded_link():
    with pytest.raises(LinkRangeInvalid):
        distribution_loss(identity_link())


# --------------------------------------------------------------------- lp


def test_lp_values():
    assert lp_loss(2.0).psi(3.0, 1.0, 0.0) == pytest.approx(-4.0)
    assert lp_loss(1.5).psi(0.0, 1.0, 0.0) == pytest.approx(1.5)
    m = lp_loss(1.5)
    fd = (m.rho(0.0, 1 + 1e-6, 0.0) - m.rho(0.0, 1 - 1e-6, 0.0)) / 2e-6
    assert fd == pytest.approx(1.5, abs=1e-5)


@pytest.mark.parametrize("p", [0.5, 1.0, 2.5, -1.0])
def test_lp_rejects_bad_exponent(p):
    with pytest.raises(InvalidP):
        lp_loss(p)


# --------------------------------------------------------------- logistic


def test_logistic_values():
    lg = logistic_loss()
    assert lg.score_theta(1.0, 0.0, 0.0) == pytest.approx(-0.5)
    assert lg.rho(1.0, 0.75, 0.0) == pytest.approx(-np.log(0.75))
    with pytest.raises(ResponseOutOfRange):
        lg.validate_response(np.array([0.0, 1.5]))
    lg.validate_response(np.array([0.0, 0.25, 1.0]))    # fractional is fine


def test_logistic_cell_mle_matches_bisection():
    # E_n[sigmoid(beta) - y] = 0 has the closed form beta = logit(mean y);
    # the oracle recovers it by bisection without that identity
    ybar = 0.75
    assert oracles.logistic_cell_mle(ybar) == pytest.approx(np.log(3.0), abs=1e-12)


# ----------------------------------------------------------- huber, tukey


def test_huber_values():
    hb = huber_loss()
    assert hb.psi(0.0, 1.0, 5.0) == pytest.approx(2.0)
    assert hb.rho(10.0, 0.0, 1.0) == pytest.approx(19.0)
    assert hb.rho(1.0, 0.0, 5.0) == pytest.approx(1.0)   # quadratic region


def test_tukey_redescends():
    tk = tukey_loss()
    assert tk.psi(10.0, 0.0, 1.0) == 0.0
    assert tk.psi(0.5, 0.0, 1.0) != 0.0
    assert not tk.convex_in_theta


def test_tuning_domain():
    hb = huber_loss()
    with pytest.raises(NonPositiveTuning):
        hb.check_q_grid([0.0])
    with pytest.raises(NonPositiveTuning):
        tukey_loss().check_q_grid([-1.0])


# ------------------------------------------------------------------ links


@pytest.mark.parametrize("name", ["identity", "logit", "cloglog"])
def test_link_derivatives_match_finite_differences(name):
    link = LINKS[name]()
    grid = np.linspace(-10, 10, 81)
    for t in grid:
        fd1 = oracles.fd(link.eta, t, 1e-6)
        fd2 = oracles.fd(link.deta, t, 1e-6)
        assert link.deta(t) == pytest.approx(fd1, rel=1e-6, abs=1e-9)
        assert link.ddeta(t) == pytest.approx(fd2, rel=1e-6, abs=1e-9)
    signs = np.sign([link.deta(t) for t in grid])
    nonzero = signs[signs != 0]                          # deta may underflow
    assert nonzero.size > 0 and np.all(nonzero == nonzero[0])
    for t in (-3.0, 0.0, 2.5):
        assert link.eta_inv(link.eta(t)) == pytest.approx(t, abs=1e-9)


def test_link_constructor_rejects_nonmonotone():
    with pytest.raises(LinkRangeInvalid):
        Link("bad", np.cos, lambda t: -np.sin(t), lambda t: -np.cos(t),
             np.arccos, (-1.0, 1.0))


# --------------------------------------------- gradient consistency sweep

_GRADIENT_CASES = [
    ("quantile", quantile_loss(), lambda r: (r.normal(size=1000),
                                             r.normal(size=1000),
                                             r.uniform(0.05, 0.95, 1000))),
    ("distribution", distribution_loss(),
     lambda r: (r.normal(size=1000), r.uniform(0.01, 0.99, 1000),
                r.normal(size=1000))),
    ("lp15", lp_loss(1.5), lambda r: (r.normal(size=1000),
                                      r.normal(size=1000),
                                      np.zeros(1000))),
    ("lp2", lp_loss(2.0), lambda r: (r.normal(size=1000),
                                     r.normal(size=1000),
                                     np.zeros(1000))),
    ("logistic", logistic_loss(),
     lambda r: (r.integers(0, 2, 1000).astype(float),
                r.uniform(0.05, 0.95, 1000), np.zeros(1000))),
    ("huber", huber_loss(), lambda r: (r.normal(size=1000),
                                       r.normal(size=1000),
                                       r.uniform(0.5, 3.0, 1000))),
    ("tukey", tukey_loss(), lambda r: (r.normal(size=1000),
                                       r.normal(size=1000),
                                       r.uniform(0.5, 3.0, 1000))),
]


@pytest.mark.parametrize("label,model,draw", _GRADIENT_CASES,
                         ids=[c[0] for c in _GRADIENT_CASES])
def test_psi_is_the_eta_derivative_of_rho(label, model, draw):
    rng = np.random.default_rng(42)
    y, eta, q = draw(rng)
    step = 1e-6
    for i in range(len(y)):
        kinks = model.kinks_eta(np.array([y[i]]), q[i]).ravel()
        if kinks.size and np.min(np.abs(eta[i] - kinks)) < 0.05:
            continue    # stay clear of the declared kink set
        fd = (model.rho(y[i], eta[i] + step, q[i])
              - model.rho(y[i], eta[i] - step, q[i])) / (2 * step)
        psi = model.psi(y[i], eta[i], q[i])
        assert abs(psi - fd) <= 1e-6 * (1.0 + abs(psi)), (label, i)


# ------------------------------------------------------------ composition


def test_model_keys_round_trip():
    for key in ("quantile", "distribution", "lp:1.5", "lp:2.0", "logistic",
                "huber", "tukey"):
        model = model_from_key(key)
        again = loss_from_dict(loss_to_dict(model))
        assert again.key == model.key and again.link.name == model.link.name


def test_model_link_guards():
    with pytest.raises(WrongModel):
        model_from_key("quantile", "logit")
    with pytest.raises(WrongModel):
        model_from_key("logistic", "identity")
    with pytest.raises(WrongModel):
        model_from_key("huber", "cloglog")
    with pytest.raises(WrongModel):
        model_from_key("studentized")
    dr = model_from_key("distribution", "cloglog")
    assert dr.link.name == "cloglog"


def test_check_q_grid_enforces_domain():
    qs = quantile_loss()
    with pytest.raises(Exception):
        qs.check_q_grid([0.01, 0.5])
    qs.check_q_grid([0.05, 0.5, 0.95])
