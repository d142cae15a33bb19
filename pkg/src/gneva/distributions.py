"""Normal-Wishart conjugate family over a 2-D Gaussian's mean and precision.

Provides densities, Bartlett sampling, the expected sufficient statistics
that appear in the variational objective, the two closed-form KL
divergences, and the Student-t posterior predictive. All distributions are
over R^2 (D = 2 throughout).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegreesOfFreedomTooSmall, ValidationError
from .special_math import (
    LOG_2,
    LOG_2PI,
    SPDMatrix2,
    log_gamma,
    log_multivariate_gamma,
    multivariate_digamma,
)

D = 2  # goals live in the plane


@dataclass(frozen=True)
class NormalWishartParams:
    """Parameters (eta, beta, V, nu) of N(mu | eta, (beta Lambda)^-1) W(Lambda | V, nu).

    eta is the mean location (meters), beta > 0 the belief strength in the
    mean, V the Wishart scale matrix of the precision (m^-2) and nu > D - 1
    its degrees of freedom. E[Lambda] = nu V.
    """

    eta: np.ndarray
    beta: float
    v: SPDMatrix2
    nu: float

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float).reshape(2)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "nu", float(self.nu))
        if not np.all(np.isfinite(eta)):
            raise ValidationError(f"eta must be finite, got {eta}")
        if not (self.beta > 0.0 and math.isfinite(self.beta)):
            raise ValidationError(f"beta must be positive, got {self.beta}")
        if not (self.nu > D - 1 and math.isfinite(self.nu)):
            raise ValidationError(f"nu must exceed D-1={D - 1}, got {self.nu}")

    @property
    def wishart(self) -> "WishartParams":
        return WishartParams(self.v, self.nu)


@dataclass(frozen=True)
class WishartParams:
    """Scale matrix and degrees of freedom of W(Lambda | V, nu)."""

    v: SPDMatrix2
    nu: float

    def __post_init__(self):
        object.__setattr__(self, "nu", float(self.nu))
        if not (self.nu > D - 1 and math.isfinite(self.nu)):
            raise ValidationError(f"nu must exceed D-1={D - 1}, got {self.nu}")


@dataclass(frozen=True)
class StudentTParams:
    """Location, scale matrix (m^2) and degrees of freedom of a bivariate t."""

    loc: np.ndarray
    shape: SPDMatrix2
    df: float

    def __post_init__(self):
        loc = np.asarray(self.loc, dtype=float).reshape(2)
        object.__setattr__(self, "loc", loc)
        object.__setattr__(self, "df", float(self.df))
        if not np.all(np.isfinite(loc)):
            raise ValidationError(f"loc must be finite, got {loc}")
        if not (self.df > 0.0 and math.isfinite(self.df)):
            raise ValidationError(f"df must be positive, got {self.df}")


@dataclass(frozen=True)
class Gaussian2:
    """Bivariate Gaussian in mean/precision form; the mixture emission."""

    mean: np.ndarray
    precision: SPDMatrix2

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(2)
        object.__setattr__(self, "mean", mean)
        if not np.all(np.isfinite(mean)):
            raise ValidationError(f"mean must be finite, got {mean}")

    def log_density(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(2)
        dx, dy = x - self.mean
        return 0.5 * self.precision.log_det - LOG_2PI - 0.5 * self.precision.quad_form(dx, dy)


def normal_wishart_log_density(mu, lam: SPDMatrix2, params: NormalWishartParams) -> float:
    """log N(mu | eta, (beta Lambda)^-1) + log W(Lambda | V, nu)."""
    mu = np.asarray(mu, dtype=float).reshape(2)
    dx, dy = mu - params.eta
    log_det_lam = lam.log_det
    log_normal = (
        0.5 * (D * math.log(params.beta) + log_det_lam)
        - 0.5 * D * LOG_2PI
        - 0.5 * params.beta * lam.quad_form(dx, dy)
    )
    v_inv = params.v.inverse()
    log_wishart = (
        0.5 * (params.nu - D - 1) * log_det_lam
        - 0.5 * lam.trace_product(v_inv)
        - 0.5 * params.nu * D * LOG_2
        - log_multivariate_gamma(0.5 * params.nu, D)
        - 0.5 * params.nu * params.v.log_det
    )
    return log_normal + log_wishart


def wishart_log_density(lam: SPDMatrix2, w: WishartParams) -> float:
    """log W(Lambda | V, nu) alone; the precision factor of the joint."""
    v_inv = w.v.inverse()
    return (
        0.5 * (w.nu - D - 1) * lam.log_det
        - 0.5 * lam.trace_product(v_inv)
        - 0.5 * w.nu * D * LOG_2
        - log_multivariate_gamma(0.5 * w.nu, D)
        - 0.5 * w.nu * w.v.log_det
    )


def sample_wishart_bartlett(w: WishartParams, rng: np.random.Generator, size: int):
    """Draw `size` precision matrices from W(V, nu) by Bartlett decomposition.

    Returns arrays (lam11, lam12, lam22) of shape (size,). The factor is
    A = [[sqrt(chi2_nu), 0], [n, sqrt(chi2_(nu-1))]] and Lambda = L A A^T L^T
    with L the Cholesky factor of V.
    """
    a, b, c = w.v.cholesky  # L = [[a, 0], [b, c]]
    s1 = np.sqrt(rng.chisquare(w.nu, size=size))
    s2 = np.sqrt(rng.chisquare(w.nu - 1.0, size=size))
    u = rng.standard_normal(size)
    # M = L @ A, Lambda = M @ M^T
    m11 = a * s1
    m21 = b * s1 + c * u
    m22 = c * s2
    lam11 = m11 * m11
    lam12 = m11 * m21
    lam22 = m21 * m21 + m22 * m22
    return lam11, lam12, lam22


def sample_normal_wishart(
    params: NormalWishartParams, rng: np.random.Generator, size: int | None = None
):
    """Sample (mu, Lambda) pairs from the Normal-Wishart distribution.

    With size=None returns a single (mu, SPDMatrix2) pair; with an integer
    size returns (mus of shape (size, 2), lams of shape (size, 2, 2)).
    Draws are deterministic for a given generator state.
    """
    n = 1 if size is None else int(size)
    lam11, lam12, lam22 = sample_wishart_bartlett(params.wishart, rng, n)
    # mu | Lambda ~ N(eta, (beta Lambda)^-1): Sigma = Lambda^-1 / beta.
    det = lam11 * lam22 - lam12 * lam12
    s11 = lam22 / (det * params.beta)
    s12 = -lam12 / (det * params.beta)
    s22 = lam11 / (det * params.beta)
    t11 = np.sqrt(s11)
    t21 = s12 / t11
    t22 = np.sqrt(s22 - t21 * t21)
    z = rng.standard_normal((n, 2))
    mu_x = params.eta[0] + t11 * z[:, 0]
    mu_y = params.eta[1] + t21 * z[:, 0] + t22 * z[:, 1]
    if size is None:
        return (
            np.array([mu_x[0], mu_y[0]]),
            SPDMatrix2(float(lam11[0]), float(lam12[0]), float(lam22[0])),
        )
    mus = np.stack([mu_x, mu_y], axis=1)
    lams = np.empty((n, 2, 2))
    lams[:, 0, 0] = lam11
    lams[:, 0, 1] = lams[:, 1, 0] = lam12
    lams[:, 1, 1] = lam22
    return mus, lams


@dataclass(frozen=True)
class ExpectedStats:
    """Expectations under q(mu, Lambda) used by the variational objective."""

    e_log_det: float
    e_mahalanobis: float


def expected_stats(g, q: NormalWishartParams) -> ExpectedStats:
    """E[log det Lambda] and E[(g - mu)^T Lambda (g - mu)] under q.

    e_log_det = log det V + psi_D(nu/2) + D log 2 and
    e_mahalanobis = nu (g - eta)^T V (g - eta) + D / beta.
    """
    g = np.asarray(g, dtype=float).reshape(2)
    dx, dy = g - q.eta
    e_log_det = q.v.log_det + multivariate_digamma(0.5 * q.nu, D) + D * LOG_2
    e_mahalanobis = q.nu * q.v.quad_form(dx, dy) + D / q.beta
    return ExpectedStats(e_log_det=e_log_det, e_mahalanobis=e_mahalanobis)


def expected_emission_log_density(g, q: NormalWishartParams) -> float:
    """E_q[log N(g | mu, Lambda^-1)], the emission term of the bound."""
    stats = expected_stats(g, q)
    return 0.5 * stats.e_log_det - 0.5 * D * LOG_2PI - 0.5 * stats.e_mahalanobis


def kl_mean_given_precision(q: NormalWishartParams, p: NormalWishartParams) -> float:
    """E_{Lambda~q} KL(N(eta_q, (beta_q Lambda)^-1) || N(eta_p, (beta_p Lambda)^-1)).

    Closed form: (1/2) beta_p nu_q (eta_q - eta_p)^T V_q (eta_q - eta_p)
    + (D/2)(beta_p/beta_q - log(beta_p/beta_q) - 1).
    """
    dx, dy = q.eta - p.eta
    ratio = p.beta / q.beta
    return 0.5 * p.beta * q.nu * q.v.quad_form(dx, dy) + 0.5 * D * (ratio - math.log(ratio) - 1.0)


def kl_wishart(q: WishartParams, p: WishartParams) -> float:
    """KL(W(V_q, nu_q) || W(V_p, nu_p)) in the standard bracketing.

    (nu_q/2)[trace(V_p^-1 V_q) - D] - (nu_p/2) log det(V_p^-1 V_q)
    + log Gamma_D(nu_p/2) - log Gamma_D(nu_q/2)
    + ((nu_q - nu_p)/2) psi_D(nu_q/2).
    """
    p_inv = p.v.inverse()
    trace_term = p_inv.trace_product(q.v)
    log_det_ratio = q.v.log_det - p.v.log_det
    return (
        0.5 * q.nu * (trace_term - D)
        - 0.5 * p.nu * log_det_ratio
        + log_multivariate_gamma(0.5 * p.nu, D)
        - log_multivariate_gamma(0.5 * q.nu, D)
        + 0.5 * (q.nu - p.nu) * multivariate_digamma(0.5 * q.nu, D)
    )


def student_t_log_density(x, t: StudentTParams) -> float:
    """log density of the bivariate Student-t at a single point."""
    x = np.asarray(x, dtype=float).reshape(2)
    dx, dy = x - t.loc
    maha = t.shape.inverse().quad_form(dx, dy)
    return (
        log_gamma(0.5 * (t.df + D))
        - log_gamma(0.5 * t.df)
        - math.log(t.df * math.pi)
        - 0.5 * t.shape.log_det
        - 0.5 * (t.df + D) * math.log1p(maha / t.df)
    )


def student_t_log_densities(xs: np.ndarray, t: StudentTParams) -> np.ndarray:
    """Vectorized Student-t log density over points of shape (n, 2)."""
    xs = np.asarray(xs, dtype=float).reshape(-1, 2)
    d = xs - t.loc
    inv = t.shape.inverse()
    maha = inv.a11 * d[:, 0] ** 2 + 2.0 * inv.a12 * d[:, 0] * d[:, 1] + inv.a22 * d[:, 1] ** 2
    const = (
        log_gamma(0.5 * (t.df + D))
        - log_gamma(0.5 * t.df)
        - math.log(t.df * math.pi)
        - 0.5 * t.shape.log_det
    )
    return const - 0.5 * (t.df + D) * np.log1p(maha / t.df)


def sample_student_t(t: StudentTParams, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw points from the bivariate Student-t (normal / sqrt(chi2/df))."""
    l11, l21, l22 = t.shape.cholesky
    z = rng.standard_normal((size, 2))
    w = np.sqrt(rng.chisquare(t.df, size=size) / t.df)
    x = z[:, 0] * l11
    y = z[:, 0] * l21 + z[:, 1] * l22
    return t.loc + np.stack([x, y], axis=1) / w[:, None]


def posterior_predictive_params(q: NormalWishartParams) -> StudentTParams:
    """Student-t predictive of a Normal-Wishart posterior.

    loc = eta, df = nu - 1 and shape = ((beta + 1) / (beta (nu - 1))) V^-1.
    Requires nu > 3 so the predictive has more than two degrees of freedom
    and a finite covariance.
    """
    if q.nu <= 3.0:
        raise DegreesOfFreedomTooSmall(
            f"posterior predictive needs nu > 3 for a finite covariance, got nu={q.nu}"
        )
    df = q.nu - 1.0
    scale = (q.beta + 1.0) / (q.beta * df)
    return StudentTParams(loc=q.eta, shape=q.v.inverse().scaled(scale), df=df)
