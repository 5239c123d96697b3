"""Expected losses under a diagonal Gaussian variational marginal.

For a Gaussian likelihood p(y|f) = N(y; f, noise*I_d) and a marginal
q(f) = N(mu, diag(s2)), the following are available in closed form:

* the expected negative log likelihood,
* the power-density integral I(c) = Int p(y|f)^c dy,
* the scaled expected power density E(c) = (1/c) E_q[p(y|f)^c],
* the expected beta- and gamma-divergence losses built from the two above.

Everything that can underflow is carried in log domain; the gamma loss in
particular never leaves it until the final sign flip. Monte-Carlo averages of
the pointwise losses serve as independent oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import jax.numpy as jnp
import numpy as np
from typing import NamedTuple

from .exceptions import DimensionMismatch, NonPositivePower

LOG_TWO_PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class LossSpec:
    """Loss choice: plain nll, or the beta/gamma robust losses (hyperparameter > 1).

    ``weight`` scales the pointwise loss (the w in a w-weighted loss term).
    """

    kind: str
    beta: float | None = None
    gamma: float | None = None
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in ("nll", "beta", "gamma"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "beta" and not (self.beta is not None and 1.0 < self.beta < np.inf):
            raise ValueError(f"beta must be finite and > 1, got {self.beta}")
        if self.kind == "gamma" and not (self.gamma is not None and 1.0 < self.gamma < np.inf):
            raise ValueError(f"gamma must be finite and > 1, got {self.gamma}")
        if not (self.weight > 0):
            raise ValueError("weight must be positive")

    @classmethod
    def nll(cls, weight: float = 1.0):
        return cls(kind="nll", weight=weight)

    @classmethod
    def beta_loss(cls, beta: float = 1.05, weight: float = 1.0):
        return cls(kind="beta", beta=beta, weight=weight)

    @classmethod
    def gamma_loss(cls, gamma: float = 1.05, weight: float = 1.0):
        return cls(kind="gamma", gamma=gamma, weight=weight)


@dataclass(frozen=True)
class LikelihoodParams:
    """Gaussian likelihood N(y; f, noise_variance * I_d), noise stored on log scale."""

    log_noise_variance: jnp.ndarray
    output_dim: int

    @classmethod
    def from_variance(cls, noise_variance: float, output_dim: int):
        return cls(
            log_noise_variance=jnp.asarray(jnp.log(noise_variance), dtype=jnp.float64),
            output_dim=output_dim,
        )

    @property
    def noise_variance(self):
        return jnp.exp(self.log_noise_variance)


class MarginalMoments(NamedTuple):
    """Per-point diagonal marginal q(f) = N(mean, diag(variance))."""

    mean: jnp.ndarray
    variance: jnp.ndarray


def _check_last_dim(y, q: MarginalMoments, lik: LikelihoodParams):
    d = lik.output_dim
    if y.shape[-1] != d or q.mean.shape[-1] != d or q.variance.shape[-1] != d:
        raise DimensionMismatch(
            f"output dim {d} vs y {y.shape}, mean {q.mean.shape}, var {q.variance.shape}"
        )


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------


def log_power_density_integral(c: float, lik: LikelihoodParams):
    """log I(c) with I(c) = Int N(y; f, noise*I_d)^c dy = (2*pi*noise)^(-d(c-1)/2) c^(-d/2)."""
    if not c > 0:
        raise NonPositivePower(f"power c must be > 0, got {c}")
    d = lik.output_dim
    log_noise = lik.log_noise_variance
    return -0.5 * d * (c - 1.0) * (LOG_TWO_PI + log_noise) - 0.5 * d * jnp.log(c)


def power_density_integral(c: float, lik: LikelihoodParams):
    """I(c) = Int p(y|f)^c dy; independent of f."""
    return jnp.exp(log_power_density_integral(c, lik))


def log_expected_power_density(c: float, y, q: MarginalMoments, lik: LikelihoodParams):
    """log E(c) with E(c) = (1/c) * E_q[p(y|f)^c], reduced over the last axis.

    Per output dimension, with v = noise/c:
        E_q[exp(-(y-f)^2/(2v))] = sqrt(v/(v+s2)) * exp(-(y-mu)^2 / (2(v+s2))),
    so the expectation factorizes and stays in log domain throughout.
    """
    if not c > 0:
        raise NonPositivePower(f"power c must be > 0, got {c}")
    y = jnp.asarray(y, dtype=jnp.float64)
    _check_last_dim(y, q, lik)
    d = lik.output_dim
    noise = lik.noise_variance
    v = noise / c
    total = v + q.variance
    per_dim = 0.5 * (jnp.log(v) - jnp.log(total)) - (y - q.mean) ** 2 / (2.0 * total)
    return (
        -jnp.log(c)
        - 0.5 * d * c * (LOG_TWO_PI + lik.log_noise_variance)
        + jnp.sum(per_dim, axis=-1)
    )


def expected_power_density(c: float, y, q: MarginalMoments, lik: LikelihoodParams):
    """E(c) = (1/c) * E_q[p(y|f)^c]; strictly positive."""
    return jnp.exp(log_expected_power_density(c, y, q, lik))


def expected_nll(y, q: MarginalMoments, lik: LikelihoodParams):
    """E_q[-log p(y|f)] = sum_j 0.5*log(2*pi*noise) + ((y_j-mu_j)^2 + s2_j) / (2*noise)."""
    y = jnp.asarray(y, dtype=jnp.float64)
    _check_last_dim(y, q, lik)
    noise = lik.noise_variance
    per_dim = 0.5 * (LOG_TWO_PI + lik.log_noise_variance) + (
        (y - q.mean) ** 2 + q.variance
    ) / (2.0 * noise)
    return jnp.sum(per_dim, axis=-1)


def expected_beta_loss(spec: LossSpec, y, q: MarginalMoments, lik: LikelihoodParams):
    """E_q of the beta loss: -E(beta-1) + I(beta)/beta."""
    if spec.kind != "beta":
        raise ValueError(f"expected a beta LossSpec, got kind {spec.kind!r}")
    b = spec.beta
    return -expected_power_density(b - 1.0, y, q, lik) + power_density_integral(b, lik) / b


def expected_gamma_loss(
    spec: LossSpec, y, q: MarginalMoments, lik: LikelihoodParams, convention: str = "fe"
):
    """E_q of the gamma loss: -gamma * E(gamma-1) * I(gamma)^(-(gamma-1)/gamma).

    Strictly negative and computed entirely in log domain:
        -exp(log gamma + log E(gamma-1) + e * log I(gamma)).
    The default exponent e = -(gamma-1)/gamma is the Fujisawa-Eguchi
    normalization, which keeps the loss bounded as the noise vanishes;
    ``convention="reciprocal"`` selects e = -gamma/(gamma-1) instead, the
    other normalization circulating in the robust-divergence literature.
    """
    if spec.kind != "gamma":
        raise ValueError(f"expected a gamma LossSpec, got kind {spec.kind!r}")
    g = spec.gamma
    if convention == "fe":
        exponent = -(g - 1.0) / g
    elif convention == "reciprocal":
        exponent = -g / (g - 1.0)
    else:
        raise ValueError(f"unknown gamma normalization convention {convention!r}")
    log_e = log_expected_power_density(g - 1.0, y, q, lik)
    log_i = log_power_density_integral(g, lik)
    return -jnp.exp(jnp.log(g) + log_e + exponent * log_i)


def expected_loss(spec: LossSpec, y, q: MarginalMoments, lik: LikelihoodParams):
    """Dispatch on the loss kind; the result includes the weight factor."""
    if spec.kind == "nll":
        raw = expected_nll(y, q, lik)
    elif spec.kind == "beta":
        raw = expected_beta_loss(spec, y, q, lik)
    else:
        raw = expected_gamma_loss(spec, y, q, lik)
    return spec.weight * raw


# ---------------------------------------------------------------------------
# pointwise losses and the Monte-Carlo oracle (numpy; independent path)
# ---------------------------------------------------------------------------


def pointwise_loss(spec: LossSpec, f, y, lik: LikelihoodParams, convention: str = "fe"):
    """Loss evaluated at latent values f (numpy, vectorized over rows of f)."""
    f = np.asarray(f, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    noise = float(lik.noise_variance)
    d = lik.output_dim
    log_p = -0.5 * d * (LOG_TWO_PI + np.log(noise)) - np.sum(
        (y - f) ** 2, axis=-1
    ) / (2.0 * noise)
    if spec.kind == "nll":
        out = -log_p
    elif spec.kind == "beta":
        b = spec.beta
        log_i = float(log_power_density_integral(b, lik))
        out = -np.exp((b - 1.0) * log_p) / (b - 1.0) + np.exp(log_i) / b
    else:
        g = spec.gamma
        exponent = -(g - 1.0) / g if convention == "fe" else -g / (g - 1.0)
        log_i = float(log_power_density_integral(g, lik))
        out = -(g / (g - 1.0)) * np.exp((g - 1.0) * log_p + exponent * log_i)
    return spec.weight * out


def mc_loss_oracle(
    spec: LossSpec,
    y,
    q: MarginalMoments,
    lik: LikelihoodParams,
    n_samples: int,
    seed: int,
    convention: str = "fe",
):
    """Plain MC average (estimate, std_error) of the pointwise loss over f ~ q."""
    if n_samples < 10_000:
        raise ValueError("n_samples must be at least 10^4 for a usable std error")
    rng = np.random.default_rng(seed)
    mean = np.asarray(q.mean, dtype=np.float64)
    std = np.sqrt(np.asarray(q.variance, dtype=np.float64))
    f = mean + std * rng.standard_normal((n_samples, lik.output_dim))
    vals = pointwise_loss(spec, f, np.asarray(y, dtype=np.float64), lik, convention)
    return float(np.mean(vals)), float(np.std(vals, ddof=1) / np.sqrt(n_samples))
