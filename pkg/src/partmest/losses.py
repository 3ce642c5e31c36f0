"""Loss/link family for partitioned M-estimation.

Each model bundles the loss rho(y, eta; q), its a.e. eta-derivative
psi(y, eta; q), a strictly monotone link eta(theta), curvature metadata,
and two plug-in hooks used by the sandwich layer:

* ``psi1_hat(ctx, q)``: per-observation estimate of Psi_1, the derivative
  of E[psi | x] in eta, evaluated at the fitted index.
* ``s_hat(ctx, q, qt)``: per-observation (or scalar) estimate of the score
  covariance S_{q,qt}(x) = E[psi_q psi_qt | x].

``ctx`` is a fit context (see ``partmest.sandwich.FitContext``) exposing the
response, the fitted index process and the link, so hooks can reuse the fit.
The sign convention is fixed so that E[psi | x] = 0 at the truth with
positive slope in eta; this keeps the Gram matrices positive definite.
"""

import numpy as np
from scipy import ndimage, special

from .exceptions import (
    InvalidP,
    LinkRangeInvalid,
    NonPositiveTuning,
    ResponseOutOfRange,
    WrongModel,
)


class Link:
    """Strictly monotone link with first and second derivatives.

    Monotonicity (constant sign of deta) is checked on a diagnostic grid at
    construction.
    """

    def __init__(self, name, eta, deta, ddeta, eta_inv, range_):
        self.name = name
        self.eta = eta
        self.deta = deta
        self.ddeta = ddeta
        self.eta_inv = eta_inv
        self.range = range_
        grid = np.linspace(-10, 10, 201)
        signs = np.sign(self.deta(grid))
        # deta may underflow to exactly 0 in the far tail (cloglog does at
        # t ~ 10); only an actual sign reversal disqualifies the link
        nonzero = signs[signs != 0]
        if nonzero.size == 0 or (nonzero != nonzero[0]).any():
            raise LinkRangeInvalid(f"link {name!r} is not strictly monotone")


def identity_link():
    one = lambda t: np.ones_like(np.asarray(t, dtype=float))
    zero = lambda t: np.zeros_like(np.asarray(t, dtype=float))
    return Link("identity", lambda t: np.asarray(t, dtype=float), one, zero,
                lambda p: np.asarray(p, dtype=float), (-np.inf, np.inf))


def logit_link():
    def deta(t):
        e = special.expit(t)
        return e * (1 - e)

    def ddeta(t):
        e = special.expit(t)
        return e * (1 - e) * (1 - 2 * e)

    return Link("logit", special.expit, deta, ddeta, special.logit, (0.0, 1.0))


def cloglog_link():
    # eta(t) = 1 - exp(-exp(t)), the complementary log-log inverse
    def eta(t):
        return -np.expm1(-np.exp(t))

    def deta(t):
        return np.exp(t - np.exp(t))

    def ddeta(t):
        return np.exp(t - np.exp(t)) * (1 - np.exp(t))

    def eta_inv(p):
        return np.log(-np.log1p(-np.asarray(p, dtype=float)))

    return Link("cloglog", eta, deta, ddeta, eta_inv, (0.0, 1.0))


LINKS = {"identity": identity_link, "logit": logit_link, "cloglog": cloglog_link}


class LossModel:
    """Container for one loss/link model; instances are stateless."""

    def __init__(self, name, key, rho, psi, dpsi_deta, link, q_domain,
                 convex_in_theta, holder_alpha, smooth, psi1_hat, s_hat,
                 kinks_eta=None, validate_response=None, params=None,
                 rho_theta=None, score_theta=None, curvature_theta=None):
        self.name = name
        self.key = key
        self.rho = rho
        self.psi = psi
        self.dpsi_deta = dpsi_deta
        self.link = link
        self.q_domain = q_domain          # (lo, hi); lo == hi for index-free losses
        self.convex_in_theta = convex_in_theta
        self.holder_alpha = holder_alpha
        self.smooth = smooth
        self.psi1_hat = psi1_hat
        self.s_hat = s_hat
        self.kinks_eta = kinks_eta or (lambda y, q: np.empty((len(np.atleast_1d(y)), 0)))
        self.validate_response = validate_response
        self.params = params or {}
        self._rho_theta = rho_theta
        self._score_theta = score_theta
        self._curvature_theta = curvature_theta

    # composite theta-space pieces used by the solver -----------------------

    def rho_theta(self, y, theta, q):
        if self._rho_theta is not None:
            return self._rho_theta(y, theta, q)
        return self.rho(y, self.link.eta(theta), q)

    def score_theta(self, y, theta, q):
        """d rho(y, eta(theta); q) / d theta."""
        if self._score_theta is not None:
            return self._score_theta(y, theta, q)
        return self.psi(y, self.link.eta(theta), q) * self.link.deta(theta)

    def curvature_theta(self, y, theta, q):
        """Fisher-style curvature d psi/d eta * deta^2 (the psi * ddeta term
        is dropped; it vanishes in expectation at the truth)."""
        if self._curvature_theta is not None:
            return self._curvature_theta(y, theta, q)
        if self.dpsi_deta is None:
            raise WrongModel(f"{self.name} has no smooth curvature")
        return self.dpsi_deta(y, self.link.eta(theta), q) * self.link.deta(theta) ** 2

    @property
    def has_index(self):
        return self.q_domain is None or self.q_domain[0] < self.q_domain[1]

    def check_q_grid(self, q_grid, y=None):
        """Validate a q grid against the model's index domain."""
        q = np.asarray(q_grid, dtype=float)
        if q.size == 0:
            raise ValueError("q grid must be nonempty")
        if (np.diff(q) <= 0).any():
            raise ValueError("q grid must be strictly increasing")
        dom = self.q_domain
        if dom is None:
            if y is None:
                return q
            dom = (float(np.min(y)), float(np.max(y)))
        if dom[0] == dom[1]:
            if q.size != 1:
                raise ValueError(f"{self.name} has no loss index; use a single q")
            return q
        if q[0] < dom[0] - 1e-12 or q[-1] > dom[1] + 1e-12:
            if self.key in ("huber", "tukey") and q[0] <= 0:
                raise NonPositiveTuning(
                    f"{self.name} tuning constant must be positive, got {q[0]}")
            raise ValueError(f"q grid {q[0]}..{q[-1]} outside domain {dom}")
        return q


# ---------------------------------------------------------------------------
# plug-in hooks
# ---------------------------------------------------------------------------

def _bofinger(q):
    """Density-adapted bandwidth constant (Gaussian reference), the standard
    choice for quantile sparsity estimation; shrinks toward the tails."""
    z = special.ndtri(q)
    phi4 = np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
    return (4.5 * phi4**4 / (2 * z * z + 1) ** 2) ** 0.2


def quantile_bandwidth(q, n):
    """Half-width of the difference-quotient window used by the check-loss
    density estimate at quantile q with sample size n.  Bofinger's constant
    with a floor: its pointwise-MSE-optimal shrinkage toward the tails makes
    the quotient too noisy there for sup-band use.  Fitting the coefficient
    process on a grid padded by this amount at each end keeps the quotient
    two-sided at the endpoints of the grid of interest."""
    return max(_bofinger(q), 0.45) * n ** (-0.2)


def _cell_smoothed(values, cells, partition, reach=2):
    """Average an observation-level array within each cell and over the
    surrounding block of cells (``reach`` each way per axis), then map the
    cell values back to the observations."""
    shape = partition.cells_per_dim
    sums = np.bincount(cells, weights=values, minlength=partition.cell_count)
    counts = np.bincount(cells, minlength=partition.cell_count).astype(float)
    size = 2 * reach + 1
    num = ndimage.uniform_filter(sums.reshape(shape), size=size, mode="nearest")
    den = ndimage.uniform_filter(counts.reshape(shape), size=size, mode="nearest")
    return (num.ravel() / np.maximum(den.ravel(), 1e-300))[cells]


def _quantile_psi1(ctx, q, clip_lo=1e-3, clip_hi=1e3):
    """Conditional density at the fitted quantile via the Hendricks-Koenker
    difference quotient f = 2 delta_q / (eta(q + delta_q) - eta(q - delta_q)),
    evaluated on the fitted process (linear interpolation in q, window
    clamped to the fitted grid with the effective width in the numerator).
    Per-observation quotients inherit the local fit's coefficient noise,
    which is exactly what band calibration cannot afford, so the spread is
    pooled over a neighborhood of cells before inverting; where it
    degenerates anyway (quantile crossings) the full-grid quotient steps
    in."""
    delta = quantile_bandwidth(q, ctx.n)
    grid = ctx.q_grid
    qhi = min(q + delta, grid[-1])
    qlo = max(q - delta, grid[0])
    if qhi - qlo <= 0:
        return np.full(ctx.n, clip_hi)
    # when the grid truncates one side, shrink the other to match: a window
    # centered on q errs conservative (sparsity is convex), an off-center
    # one reaches into the high-density bulk and errs the other way
    half = min(q - qlo, qhi - q)
    if half > 0:
        qlo, qhi = q - half, q + half
    cells = ctx.fit.design.cells
    part = ctx.fit.basis.partition
    spread = _cell_smoothed(ctx.eta_at(qhi) - ctx.eta_at(qlo), cells, part)
    spread_wide = _cell_smoothed(ctx.eta_at(grid[-1]) - ctx.eta_at(grid[0]),
                                 cells, part)
    slope = spread / (qhi - qlo)
    slope_wide = spread_wide / (grid[-1] - grid[0])
    slope = np.where(slope > 0.01 * slope_wide, slope, slope_wide)
    f = 1.0 / np.maximum(slope, 1e-12)
    return np.clip(f, clip_lo, clip_hi)


def _lp_psi1(p):
    def hook(ctx, q):
        eps = ctx.y - ctx.eta_at(q)
        if p == 2.0:
            return np.full(ctx.n, 2.0)
        # |eps|^(p-2) has infinite variance near zero for p < 2; an
        # n-adaptive floor keeps the curvature weights integrable (bias
        # from the floor is conservative and vanishes as n grows)
        scale = max(float(np.subtract(*np.percentile(eps, [75, 25]))), 1e-8)
        a = np.maximum(np.abs(eps), scale * ctx.n ** (-2.0 / 3.0))
        return p * (p - 1.0) * a ** (p - 2.0)
    return hook


def _residual_score_sq(model):
    """Default S estimate for index-free losses: squared score at the fit."""
    def hook(ctx, q, qt):
        return model.psi(ctx.y, ctx.eta_at(q), q) * model.psi(ctx.y, ctx.eta_at(qt), qt)
    return hook


# ---------------------------------------------------------------------------
# model factories
# ---------------------------------------------------------------------------

def quantile_loss(eps0=0.05):
    """Check loss rho = (q - 1(y < eta)) (y - eta) with identity link."""
    def rho(y, eta, q):
        return (q - (y < eta)) * (y - eta)

    def psi(y, eta, q):
        return (y < eta) - q

    def s_hat(ctx, q, qt):
        return min(q, qt) - q * qt

    return LossModel(
        name="quantile", key="quantile", rho=rho, psi=psi, dpsi_deta=None,
        link=identity_link(), q_domain=(eps0, 1.0 - eps0), convex_in_theta=True,
        holder_alpha=1.0, smooth=False, psi1_hat=_quantile_psi1, s_hat=s_hat,
        kinks_eta=lambda y, q: np.atleast_1d(y)[:, None],
        params={"eps0": eps0},
    )


def distribution_loss(link=None):
    """Conditional-distribution loss rho = (1(y <= q) - eta)^2.

    The index q is a threshold on the response scale; the default q domain
    is set from the data range at fit time.
    """
    link = link or logit_link()
    if not (link.range[0] >= 0.0 and link.range[1] <= 1.0):
        raise LinkRangeInvalid("distribution loss needs a link with range in (0, 1)")

    def rho(y, eta, q):
        return ((y <= q) - eta) ** 2

    def psi(y, eta, q):
        return -2.0 * ((y <= q) - eta)

    def s_hat(ctx, q, qt):
        lo, hi = min(q, qt), max(q, qt)
        return 4.0 * ctx.eta_at(lo) * (1.0 - ctx.eta_at(hi))

    return LossModel(
        name="distribution", key="distribution", rho=rho, psi=psi,
        dpsi_deta=lambda y, eta, q: np.full(np.broadcast(y, eta).shape, 2.0),
        link=link, q_domain=None, convex_in_theta=False, holder_alpha=1.0,
        smooth=True, psi1_hat=lambda ctx, q: np.full(ctx.n, 2.0), s_hat=s_hat,
        params={"link": link.name},
    )


def lp_loss(p, link=None):
    """Lp loss rho = |y - eta|^p for 1 < p <= 2 (index-free)."""
    if not 1.0 < p <= 2.0:
        raise InvalidP(f"p={p} outside (1, 2]")
    link = link or identity_link()

    def rho(y, eta, q):
        return np.abs(y - eta) ** p

    def psi(y, eta, q):
        u = np.asarray(y - eta, dtype=float)
        return p * np.abs(u) ** (p - 1.0) * np.sign(-u)

    def dpsi(y, eta, q):
        u = np.abs(np.asarray(y - eta, dtype=float))
        if p == 2.0:
            return np.full(u.shape, 2.0)
        return p * (p - 1.0) * np.maximum(u, 1e-300) ** (p - 2.0)

    model = LossModel(
        name=f"lp({p})", key=f"lp:{p}", rho=rho, psi=psi, dpsi_deta=dpsi,
        link=link, q_domain=(0.0, 0.0), convex_in_theta=link.name == "identity",
        holder_alpha=p - 1.0, smooth=True, psi1_hat=_lp_psi1(p), s_hat=None,
        kinks_eta=lambda y, q: np.atleast_1d(y)[:, None] if p < 2 else
        np.empty((len(np.atleast_1d(y)), 0)),
        params={"p": p, "link": link.name},
    )
    model.s_hat = _residual_score_sq(model)
    return model


def logistic_loss():
    """Bernoulli quasi-likelihood with the canonical logit link.

    Fractional responses in [0, 1] are allowed.
    """
    link = logit_link()
    tiny = 1e-12

    def rho(y, eta, q):
        e = np.clip(eta, tiny, 1 - tiny)
        return -y * np.log(e) - (1 - y) * np.log1p(-e)

    def psi(y, eta, q):
        e = np.clip(eta, tiny, 1 - tiny)
        return (e - y) / (e * (1 - e))

    def dpsi(y, eta, q):
        e = np.clip(eta, tiny, 1 - tiny)
        return y / e**2 + (1 - y) / (1 - e) ** 2

    def psi1_hat(ctx, q):
        e = np.clip(ctx.eta_at(q), tiny, 1 - tiny)
        return 1.0 / (e * (1 - e))

    def s_hat(ctx, q, qt):
        e = np.clip(ctx.eta_at(q), tiny, 1 - tiny)
        return ((ctx.y - e) / (e * (1 - e))) ** 2

    def validate_response(y):
        if (y < 0).any() or (y > 1).any():
            raise ResponseOutOfRange("logistic loss needs responses in [0, 1]")

    def rho_theta(y, theta, q):
        return np.logaddexp(0.0, theta) - y * theta

    def score_theta(y, theta, q):
        return special.expit(theta) - y

    def curvature_theta(y, theta, q):
        e = special.expit(theta)
        return e * (1 - e)

    return LossModel(
        name="logistic", key="logistic", rho=rho, psi=psi, dpsi_deta=dpsi,
        link=link, q_domain=(0.0, 0.0), convex_in_theta=True, holder_alpha=1.0,
        smooth=True, psi1_hat=psi1_hat, s_hat=s_hat,
        validate_response=validate_response, params={},
        rho_theta=rho_theta, score_theta=score_theta, curvature_theta=curvature_theta,
    )


def huber_loss(q_min=1e-3, q_max=1e3):
    """Huber loss; the index q > 0 is the robustness tuning constant."""
    if q_min <= 0:
        raise NonPositiveTuning("Huber tuning constant must be positive")

    def rho(y, eta, q):
        u = np.asarray(y - eta, dtype=float)
        au = np.abs(u)
        return np.where(au <= q, u**2, q * (2 * au - q))

    def psi(y, eta, q):
        return 2.0 * np.clip(np.asarray(eta - y, dtype=float), -q, q)

    def dpsi(y, eta, q):
        return 2.0 * (np.abs(np.asarray(y - eta, dtype=float)) <= q)

    def psi1_hat(ctx, q):
        return dpsi(ctx.y, ctx.eta_at(q), q)

    model = LossModel(
        name="huber", key="huber", rho=rho, psi=psi, dpsi_deta=dpsi,
        link=identity_link(), q_domain=(q_min, q_max), convex_in_theta=True,
        holder_alpha=1.0, smooth=True, psi1_hat=psi1_hat, s_hat=None,
        kinks_eta=lambda y, q: np.atleast_1d(y)[:, None] + np.array([[-q, q]]),
        params={"q_min": q_min, "q_max": q_max},
    )
    model.s_hat = _residual_score_sq(model)
    return model


def tukey_loss(q_min=1e-3, q_max=1e3):
    """Tukey biweight loss (redescending, non-convex; needs a box constraint)."""
    if q_min <= 0:
        raise NonPositiveTuning("Tukey tuning constant must be positive")

    def rho(y, eta, q):
        u = np.asarray(y - eta, dtype=float)
        inside = np.abs(u) <= q
        g = 1.0 - np.where(inside, u, 0.0) ** 2 / q**2
        return np.where(inside, q**2 * (1.0 - g**3), q**2)

    def psi(y, eta, q):
        u = np.asarray(y - eta, dtype=float)
        inside = np.abs(u) <= q
        g = 1.0 - u**2 / q**2
        return np.where(inside, -6.0 * u * g**2, 0.0)

    def dpsi(y, eta, q):
        u = np.asarray(y - eta, dtype=float)
        inside = np.abs(u) <= q
        g = 1.0 - u**2 / q**2
        return np.where(inside, 6.0 * g * (1.0 - 5.0 * u**2 / q**2), 0.0)

    def psi1_hat(ctx, q):
        return dpsi(ctx.y, ctx.eta_at(q), q)

    model = LossModel(
        name="tukey", key="tukey", rho=rho, psi=psi, dpsi_deta=dpsi,
        link=identity_link(), q_domain=(q_min, q_max), convex_in_theta=False,
        holder_alpha=1.0, smooth=True, psi1_hat=psi1_hat, s_hat=None,
        kinks_eta=lambda y, q: np.atleast_1d(y)[:, None] + np.array([[-q, q]]),
        params={"q_min": q_min, "q_max": q_max},
    )
    model.s_hat = _residual_score_sq(model)
    return model


# ---------------------------------------------------------------------------
# string-key registry (CLI)
# ---------------------------------------------------------------------------

def model_from_key(key, link_key=None, **kwargs):
    """Build a model from CLI-style keys.

    quantile | distribution | lp:<p> | logistic | huber | tukey, with link
    keys identity | logit | cloglog where the model accepts one.
    """
    link = LINKS[link_key]() if link_key else None
    if key == "quantile":
        if link is not None and link.name != "identity":
            raise WrongModel("quantile loss uses the identity link")
        return quantile_loss(**kwargs)
    if key == "distribution":
        return distribution_loss(link, **kwargs)
    if key.startswith("lp:"):
        return lp_loss(float(key.split(":", 1)[1]), link, **kwargs)
    if key == "logistic":
        if link is not None and link.name != "logit":
            raise WrongModel("logistic loss uses the logit link")
        return logistic_loss(**kwargs)
    if key == "huber":
        if link is not None and link.name != "identity":
            raise WrongModel("huber loss uses the identity link")
        return huber_loss(**kwargs)
    if key == "tukey":
        if link is not None and link.name != "identity":
            raise WrongModel("tukey loss uses the identity link")
        return tukey_loss(**kwargs)
    raise WrongModel(f"unknown loss key {key!r}")


def loss_to_dict(model: LossModel) -> dict:
    """JSON-ready description; inverse of :func:`loss_from_dict`."""
    params = {k: v for k, v in model.params.items() if k not in ("link", "p")}
    return {"key": model.key, "link": model.link.name, "params": params}


def loss_from_dict(obj: dict) -> LossModel:
    return model_from_key(obj["key"], obj.get("link"), **obj.get("params", {}))
