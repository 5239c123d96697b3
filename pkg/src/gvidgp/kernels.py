"""RBF kernel with per-dimension lengthscales (ARD)."""

from __future__ import annotations

from dataclasses import dataclass

import jax.numpy as jnp

from .exceptions import DimensionMismatch


@dataclass(frozen=True)
class KernelParams:
    """ARD-RBF hyperparameters, stored on log scale so training is unconstrained."""

    log_signal_variance: jnp.ndarray
    log_lengthscales: jnp.ndarray

    @classmethod
    def create(cls, input_dim: int, signal_variance: float = 1.0, lengthscale: float = 1.0):
        return cls(
            log_signal_variance=jnp.asarray(jnp.log(signal_variance), dtype=jnp.float64),
            log_lengthscales=jnp.full((input_dim,), jnp.log(lengthscale), dtype=jnp.float64),
        )

    @property
    def signal_variance(self):
        return jnp.exp(self.log_signal_variance)

    @property
    def lengthscales(self):
        return jnp.exp(self.log_lengthscales)


def _check_dims(params: KernelParams, a, b=None):
    d = params.log_lengthscales.shape[0]
    if a.ndim != 2 or a.shape[1] != d:
        raise DimensionMismatch(f"points have width {a.shape}, kernel expects {d}")
    if b is not None and (b.ndim != 2 or b.shape[1] != d):
        raise DimensionMismatch(f"points have width {b.shape}, kernel expects {d}")


def kernel_matrix(params: KernelParams, a, b):
    """Cross-covariance k(a_i, b_j) = sv * exp(-0.5 * sum_d ((a_id-b_jd)/l_d)^2)."""
    a = jnp.asarray(a, dtype=jnp.float64)
    same = a is b
    b = a if same else jnp.asarray(b, dtype=jnp.float64)
    _check_dims(params, a, b)
    ls = params.lengthscales
    sa = a / ls
    sb = sa if same else b / ls
    sq = (
        jnp.sum(sa**2, axis=1)[:, None]
        + jnp.sum(sb**2, axis=1)[None, :]
        - 2.0 * sa @ sb.T
    )
    k = params.signal_variance * jnp.exp(-0.5 * jnp.maximum(sq, 0.0))
    if same:
        k = 0.5 * (k + k.T)  # kill roundoff asymmetry from the GEMM
    return k


def kernel_diag(params: KernelParams, a):
    """Diagonal of kernel_matrix(a, a): a constant vector of the signal variance."""
    a = jnp.asarray(a, dtype=jnp.float64)
    _check_dims(params, a)
    return jnp.full((a.shape[0],), 1.0, dtype=jnp.float64) * params.signal_variance
