"""Variational mixture of Gaussians over goal locations.

The mixture has C Normal-Wishart component posteriors and fixed mixing
coefficients. This module evaluates the optimal z-posterior
(responsibilities), the evidence lower bound for a single observed goal,
the Student-t posterior predictive mixture, and the exact log evidence
under the shared prior (the upper bound the ELBO is checked against).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distributions import (
    D,
    NormalWishartParams,
    expected_stats,
    kl_mean_given_precision,
    kl_wishart,
    posterior_predictive_params,
    student_t_log_densities,
    student_t_log_density,
)
from .errors import ValidationError
from .special_math import LOG_2PI, log_sum_exp


@dataclass(frozen=True)
class MixturePosterior:
    """C component posteriors plus log mixing coefficients."""

    components: tuple[NormalWishartParams, ...]
    log_pi: np.ndarray

    def __post_init__(self):
        components = tuple(self.components)
        log_pi = np.asarray(self.log_pi, dtype=float).reshape(-1)
        object.__setattr__(self, "components", components)
        object.__setattr__(self, "log_pi", log_pi)
        if len(components) < 1:
            raise ValidationError("mixture needs at least one component")
        if log_pi.shape != (len(components),):
            raise ValidationError(
                f"log_pi has {log_pi.shape[0]} entries for {len(components)} components"
            )
        total = float(np.exp(log_pi).sum())
        if abs(total - 1.0) > 1e-10:
            raise ValidationError(f"mixing coefficients sum to {total}, expected 1")

    @classmethod
    def uniform(cls, components) -> "MixturePosterior":
        components = tuple(components)
        c = len(components)
        return cls(components=components, log_pi=np.full(c, -math.log(c)))

    @property
    def n_components(self) -> int:
        return len(self.components)


@dataclass(frozen=True)
class Responsibilities:
    """Per-component assignment probabilities q(z) of one goal observation."""

    q_z: np.ndarray

    def __post_init__(self):
        q_z = np.asarray(self.q_z, dtype=float).reshape(-1)
        object.__setattr__(self, "q_z", q_z)
        if np.any(q_z < 0.0) or abs(float(q_z.sum()) - 1.0) > 1e-10:
            raise ValidationError(f"responsibilities must form a simplex, got {q_z}")


def z_posterior_log_weights(g, mix: MixturePosterior) -> np.ndarray:
    """Unnormalized log q(z = c): the expected log emission plus log pi_c."""
    g = np.asarray(g, dtype=float).reshape(2)
    out = np.empty(mix.n_components)
    for c, comp in enumerate(mix.components):
        s = expected_stats(g, comp)
        out[c] = (
            mix.log_pi[c] + 0.5 * s.e_log_det - 0.5 * D * LOG_2PI - 0.5 * s.e_mahalanobis
        )
    return out

def z_posterior(g, mix: MixturePosterior) -> Responsibilities:
    """Optimal variational assignment posterior, normalized in log space."""
    log_w = z_posterior_log_weights(g, mix)
    log_norm = log_sum_exp(log_w)
    return Responsibilities(q_z=np.exp(log_w - log_norm))


def elbo(g, mix: MixturePosterior, prior: NormalWishartParams, prior_pi) -> float:
    """Evidence lower bound on log p(g) for a single observed goal.

    sum_c q(z=c) E_q[log p(g | mu_c, Lambda_c)]
    - sum_c E_q KL(q(mu_c | Lambda_c) || p(mu | Lambda))
    - sum_c KL(q(Lambda_c) || p(Lambda)) - KL(q(z) || prior_pi),
    with q(z) the optimal responsibilities for this mixture.
    """
    g = np.asarray(g, dtype=float).reshape(2)
    prior_pi = np.asarray(prior_pi, dtype=float).reshape(-1)
    if prior_pi.shape[0] != mix.n_components:
        raise ValidationError("prior_pi length must match the component count")
    q_z = z_posterior(g, mix).q_z

    bound = 0.0
    for c, comp in enumerate(mix.components):
        s = expected_stats(g, comp)
        emission = 0.5 * s.e_log_det - 0.5 * D * LOG_2PI - 0.5 * s.e_mahalanobis
        bound += q_z[c] * emission
        bound -= kl_mean_given_precision(comp, prior)
        bound -= kl_wishart(comp.wishart, prior.wishart)
    for c in range(mix.n_components):
        if q_z[c] > 0.0:
            bound -= q_z[c] * (math.log(q_z[c]) - math.log(prior_pi[c]))
    return bound


def predictive_log_density(g_star, mix: MixturePosterior, weights) -> float:
    """log sum_c w_c tau(g*; predictive of component c)."""
    weights = _check_weights(weights, mix.n_components)
    terms = []
    for c, comp in enumerate(mix.components):
        if weights[c] == 0.0:
            continue
        t = posterior_predictive_params(comp)
        terms.append(math.log(weights[c]) + student_t_log_density(g_star, t))
    return log_sum_exp(terms)


def predictive_log_densities(points, mix: MixturePosterior, weights) -> np.ndarray:
    """Vectorized predictive mixture log density over points of shape (n, 2)."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    weights = _check_weights(weights, mix.n_components)
    logs = np.full((mix.n_components, points.shape[0]), -np.inf)
    for c, comp in enumerate(mix.components):
        if weights[c] == 0.0:
            continue
        t = posterior_predictive_params(comp)
        logs[c] = math.log(weights[c]) + student_t_log_densities(points, t)
    m = logs.max(axis=0)
    m = np.where(np.isfinite(m), m, 0.0)
    return m + np.log(np.exp(logs - m).sum(axis=0))


def prior_log_evidence(g, prior: NormalWishartParams, prior_pi) -> float:
    """Exact log p(g) under the generative model with a shared prior.

    Marginalizing (mu, Lambda) per component yields the prior predictive
    Student-t, identical across components, so the pi-weighted mixture
    collapses to a single prior-predictive density.
    """
    prior_pi = np.asarray(prior_pi, dtype=float).reshape(-1)
    if abs(float(prior_pi.sum()) - 1.0) > 1e-8 or np.any(prior_pi < 0.0):
        raise ValidationError(f"prior_pi must be a probability vector, got {prior_pi}")
    t = posterior_predictive_params(prior)
    return student_t_log_density(g, t)


def _check_weights(weights, c: int) -> np.ndarray:
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if weights.shape[0] != c:
        raise ValidationError(f"{weights.shape[0]} weights for {c} components")
    if np.any(weights < 0.0) or abs(float(weights.sum()) - 1.0) > 1e-8:
        raise ValidationError(f"weights must form a probability simplex, got {weights}")
    return weights
