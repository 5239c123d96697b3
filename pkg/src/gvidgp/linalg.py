"""Dense symmetric positive-definite linear algebra.

Cholesky factorization with escalating jitter, triangular solves and
log-determinants. All functions are pure; ``cholesky_psd`` inspects its
result and therefore must run eagerly, while ``tri_solve``, ``logdet`` and
``chol_with_jitter`` are safe inside ``jax.jit`` / ``jax.grad``.
"""

from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
from jax.scipy.linalg import solve_triangular

from .exceptions import DimensionMismatch, NotPositiveDefinite

# Default relative jitter: 1e-6 times the mean diagonal, escalating x10 up
# to 1e-2, which is standard sparse-GP practice.
DEFAULT_JITTER = 1e-6
MAX_ESCALATIONS = 4


@dataclass(frozen=True)
class SpdMatrix:
    """A dense symmetric positive-definite matrix plus the jitter it carries."""

    dim: int
    entries: jnp.ndarray
    jitter_applied: float = 0.0


@dataclass(frozen=True)
class CholFactor:
    """Lower-triangular Cholesky factor; ``lower @ lower.T`` reconstructs the source."""

    lower: jnp.ndarray
    dim: int
    jitter: float = 0.0


def spd(entries, jitter_applied: float = 0.0) -> SpdMatrix:
    """Wrap a dense array as an SpdMatrix, validating squareness and symmetry."""
    entries = jnp.asarray(entries, dtype=jnp.float64)
    if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {entries.shape}")
    asym = float(jnp.max(jnp.abs(entries - entries.T)))
    scale = max(1.0, float(jnp.max(jnp.abs(entries))))
    if asym > 1e-10 * scale:
        raise DimensionMismatch(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    return SpdMatrix(dim=entries.shape[0], entries=entries, jitter_applied=jitter_applied)


def cholesky_psd(a, base_jitter: float = DEFAULT_JITTER) -> CholFactor:
    """Lower Cholesky factor of ``a + j*I`` for the smallest working jitter j.

    The escalation ladder is j in {0, base_jitter, base_jitter*10, ...,
    base_jitter*10^4}; the jitter that succeeded is recorded on the returned
    factor. Eager-only: raises NotPositiveDefinite once the ladder is
    exhausted, which cannot be expressed under jit tracing.
    """
    if isinstance(a, SpdMatrix):
        a = a.entries
    a = jnp.asarray(a, dtype=jnp.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    if base_jitter < 0:
        raise ValueError("base_jitter must be nonnegative")
    dim = a.shape[0]
    eye = jnp.eye(dim, dtype=a.dtype)
    ladder = [0.0] + [base_jitter * 10.0**k for k in range(MAX_ESCALATIONS + 1)]
    for j in ladder:
        lower = jnp.linalg.cholesky(a + j * eye)
        if bool(jnp.all(jnp.isfinite(lower))):
            return CholFactor(lower=lower, dim=dim, jitter=j)
    raise NotPositiveDefinite(
        f"Cholesky failed for dim-{dim} matrix after jitter up to "
        f"{ladder[-1]:.3e}; the covariance built upstream is broken"
    )


def tri_solve(l: CholFactor | jnp.ndarray, b, transposed: bool = False):
    """Solve ``L x = b`` (or ``L^T x = b`` when transposed) for lower-triangular L."""
    lower = l.lower if isinstance(l, CholFactor) else l
    b = jnp.asarray(b, dtype=jnp.float64)
    rhs = b[:, None] if b.ndim == 1 else b
    if rhs.shape[0] != lower.shape[0]:
        raise DimensionMismatch(
            f"factor dim {lower.shape[0]} does not match rhs rows {rhs.shape[0]}"
        )
    x = solve_triangular(lower, rhs, lower=True, trans=1 if transposed else 0)
    return x[:, 0] if b.ndim == 1 else x


def logdet(l: CholFactor | jnp.ndarray) -> jnp.ndarray:
    """Log-determinant of the factored matrix: 2 * sum(log diag(L))."""
    lower = l.lower if isinstance(l, CholFactor) else l
    return 2.0 * jnp.sum(jnp.log(jnp.diagonal(lower, axis1=-2, axis2=-1)), axis=-1)


def chol_with_jitter(mat, rel_jitter: float = DEFAULT_JITTER):
    """Single-shot jittered Cholesky, jit- and grad-safe.

    Adds ``rel_jitter * mean(diag)`` once; a failure propagates as NaNs,
    which callers inside compiled code surface as a non-finite objective.
    """
    scale = jnp.mean(jnp.diagonal(mat))
    shifted = mat + rel_jitter * scale * jnp.eye(mat.shape[-1], dtype=mat.dtype)
    return jnp.linalg.cholesky(shifted)


def is_concrete(x) -> bool:
    """True when x is an actual array (not a tracer inside jit/grad)."""
    return not isinstance(x, jax.core.Tracer)
