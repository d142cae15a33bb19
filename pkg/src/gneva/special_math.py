"""Scalar special functions and 2x2 SPD linear algebra.

Everything here is self-contained: log-gamma uses the Lanczos approximation
(g=7, 9 coefficients) and digamma/trigamma use recurrence shifts into the
asymptotic regime, all accurate to ~1e-13. Matrices are fixed-size 2x2; the
closed-form Cholesky/determinant/adjugate replaces general linear algebra.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

from .errors import DomainError, NotPositiveDefinite

LOG_PI = math.log(math.pi)
LOG_2 = math.log(2.0)
LOG_2PI = math.log(2.0 * math.pi)

# Lanczos approximation, g=7, n=9 (double-precision coefficient set).
_LANCZOS_G = 7.0
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)

# Asymptotic series coefficients: B_{2n}/(2n) for digamma, B_{2n} for trigamma.
_DIGAMMA_SHIFT = 10.0
_DIGAMMA_SERIES = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
)
_TRIGAMMA_SERIES = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
)


def log_gamma(x: float) -> float:
    """log |Gamma(x)| for real x, poles excluded."""
    if x != x:
        return x
    if x <= 0.0 and x == math.floor(x):
        raise DomainError(f"log_gamma pole at non-positive integer {x}")
    if x < 0.5:
        # Reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x).
        return LOG_PI - math.log(abs(math.sin(math.pi * x))) - log_gamma(1.0 - x)
    z = x
    acc = _LANCZOS_COEF[0]
    for i, c in enumerate(_LANCZOS_COEF[1:], start=1):
        acc += c / (z - 1.0 + i)
    t = z + _LANCZOS_G - 0.5
    return 0.5 * LOG_2PI + (z - 0.5) * math.log(t) - t + math.log(acc)


def digamma(x: float) -> float:
    """psi(x) = d/dx log Gamma(x) for x > 0."""
    if x <= 0.0:
        raise DomainError(f"digamma requires x > 0, got {x}")
    acc = 0.0
    while x < _DIGAMMA_SHIFT:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    power = inv2
    for c in _DIGAMMA_SERIES:
        series += c * power
        power *= inv2
    return acc + math.log(x) - 0.5 / x - series


def trigamma(x: float) -> float:
    """psi'(x) for x > 0; the derivative of digamma."""
    if x <= 0.0:
        raise DomainError(f"trigamma requires x > 0, got {x}")
    acc = 0.0
    while x < _DIGAMMA_SHIFT:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = 0.0
    power = inv * inv2
    for c in _TRIGAMMA_SERIES:
        series += c * power
        power *= inv2
    return acc + inv + 0.5 * inv2 + series


def log_multivariate_gamma(a: float, d: int) -> float:
    """log Gamma_d(a) = d(d-1)/4 * log pi + sum_j log Gamma(a + (1-j)/2)."""
    _check_mv_domain(a, d, "log_multivariate_gamma")
    out = 0.25 * d * (d - 1) * LOG_PI
    for j in range(1, d + 1):
        out += log_gamma(a + 0.5 * (1 - j))
    return out


def multivariate_digamma(a: float, d: int) -> float:
    """psi_d(a) = sum_j psi(a + (1-j)/2); derivative of log Gamma_d."""
    _check_mv_domain(a, d, "multivariate_digamma")
    return sum(digamma(a + 0.5 * (1 - j)) for j in range(1, d + 1))


def multivariate_trigamma(a: float, d: int) -> float:
    """Second derivative of log Gamma_d; needed for gradients through psi_d."""
    _check_mv_domain(a, d, "multivariate_trigamma")
    return sum(trigamma(a + 0.5 * (1 - j)) for j in range(1, d + 1))


def _check_mv_domain(a: float, d: int, name: str) -> None:
    if d < 1:
        raise DomainError(f"{name} requires a positive dimension, got {d}")
    if a <= 0.5 * (d - 1):
        raise DomainError(f"{name} requires a > (d-1)/2 = {0.5 * (d - 1)}, got {a}")


def log_sum_exp(values) -> float:
    """log sum_i exp(v_i), computed with max subtraction; exact for one element."""
    vals = list(values)
    if not vals:
        raise DomainError("log_sum_exp of an empty sequence")
    m = max(vals)
    if m == -math.inf:
        return -math.inf
    if len(vals) == 1:
        return float(vals[0])
    return m + math.log(sum(math.exp(v - m) for v in vals))


# Relative tolerances of the positive-definiteness guard; values below these
# would make the downstream Cholesky numerically useless.
_PD_ABS_TOL = 1e-12
_PD_REL_TOL = 1e-12


@dataclass(frozen=True)
class SPDMatrix2:
    """Symmetric positive-definite 2x2 matrix with a cached Cholesky factor.

    Stored as the three free entries of the symmetric matrix
    [[a11, a12], [a12, a22]]. Construction rejects matrices that fail the
    leading-minor test.
    """

    a11: float
    a12: float
    a22: float

    def __post_init__(self):
        a11, a12, a22 = float(self.a11), float(self.a12), float(self.a22)
        object.__setattr__(self, "a11", a11)
        object.__setattr__(self, "a12", a12)
        object.__setattr__(self, "a22", a22)
        if not (math.isfinite(a11) and math.isfinite(a12) and math.isfinite(a22)):
            raise NotPositiveDefinite(f"non-finite entries: {a11}, {a12}, {a22}")
        det = a11 * a22 - a12 * a12
        if a11 <= _PD_ABS_TOL or det <= _PD_REL_TOL * a11 * a22:
            raise NotPositiveDefinite(
                f"leading minors {a11:.3e}, {det:.3e} fail the positivity test"
            )

    @classmethod
    def identity(cls) -> "SPDMatrix2":
        return cls(1.0, 0.0, 1.0)

    @classmethod
    def from_array(cls, m) -> "SPDMatrix2":
        return cls(float(m[0][0]), 0.5 * (float(m[0][1]) + float(m[1][0])), float(m[1][1]))

    @classmethod
    def from_cholesky(cls, l11: float, l21: float, l22: float) -> "SPDMatrix2":
        return cls(l11 * l11, l11 * l21, l21 * l21 + l22 * l22)

    @cached_property
    def cholesky(self) -> tuple[float, float, float]:
        """(l11, l21, l22) of the lower factor L with L L^T = self."""
        l11 = math.sqrt(self.a11)
        l21 = self.a12 / l11
        l22 = math.sqrt(self.a22 - l21 * l21)
        return (l11, l21, l22)

    @property
    def det(self) -> float:
        return self.a11 * self.a22 - self.a12 * self.a12

    @property
    def log_det(self) -> float:
        l11, _, l22 = self.cholesky
        return 2.0 * (math.log(l11) + math.log(l22))

    @property
    def trace(self) -> float:
        return self.a11 + self.a22

    def inverse(self) -> "SPDMatrix2":
        d = self.det
        return SPDMatrix2(self.a22 / d, -self.a12 / d, self.a11 / d)

    def quad_form(self, dx: float, dy: float) -> float:
        """(dx, dy)^T M (dx, dy)."""
        return self.a11 * dx * dx + 2.0 * self.a12 * dx * dy + self.a22 * dy * dy

    def trace_product(self, other: "SPDMatrix2") -> float:
        """trace(self @ other) for symmetric other."""
        return self.a11 * other.a11 + 2.0 * self.a12 * other.a12 + self.a22 * other.a22

    def matvec(self, x: float, y: float) -> tuple[float, float]:
        return (self.a11 * x + self.a12 * y, self.a12 * x + self.a22 * y)

    def scaled(self, s: float) -> "SPDMatrix2":
        return SPDMatrix2(self.a11 * s, self.a12 * s, self.a22 * s)

    def to_array(self):
        import numpy as np

        return np.array([[self.a11, self.a12], [self.a12, self.a22]], dtype=float)


@dataclass(frozen=True)
class SPDFactorization:
    """Cholesky factor, log determinant and inverse of a 2x2 SPD matrix."""

    chol: tuple[tuple[float, float], tuple[float, float]]
    log_det: float
    inverse: SPDMatrix2


def spd_factorize(m: SPDMatrix2) -> SPDFactorization:
    """Factor an SPD 2x2 matrix: lower Cholesky, log det, exact inverse."""
    l11, l21, l22 = m.cholesky
    return SPDFactorization(
        chol=((l11, 0.0), (l21, l22)),
        log_det=m.log_det,
        inverse=m.inverse(),
    )
