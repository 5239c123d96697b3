"""Sparse-GP layers, the deep stack, and the generalized variational objective.

Every layer is a sparse GP with inducing inputs z, per-output-column
variational distributions N(m_c, S_c) over the inducing outputs (S_c held as
a Cholesky factor with softplus diagonal), an ARD-RBF kernel and a fixed
linear mean function. Inputs are propagated by sampling each hidden layer's
diagonal marginals with the reparameterization trick; the final layer returns
moments so the expected losses apply in closed form.

The objective is

    rescale * sum_i E_q[loss(f_i, y_i)] + sum_l sum_c D_l(q(u_c) || p(u_c)),

with the per-layer quantifier D_l chosen freely among kld / scaled kld /
renyi.  Models are registered pytrees, so the whole module works under
``jax.jit`` and ``jax.grad``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .exceptions import DimensionMismatch, NotPositiveDefinite
from .kernels import KernelParams, kernel_diag, kernel_matrix
from .linalg import chol_with_jitter, is_concrete
from .losses import LikelihoodParams, LossSpec, MarginalMoments, expected_loss
from .divergences import apply_quantifier_chol

VARIANCE_FLOOR = 1e-10


class GaussianMoments(NamedTuple):
    """Per-point means and marginal variances, shape (..., batch, width)."""

    mean: jnp.ndarray
    variance: jnp.ndarray


@dataclass(frozen=True)
class LayerState:
    """One sparse-GP layer: inducing inputs, variational parameters, kernel."""

    z: jnp.ndarray                   # (m, d_in) inducing inputs
    m: jnp.ndarray                   # (m, d_out) variational means
    s_raw: jnp.ndarray               # (d_out, m, m) covariance factors, raw diagonal
    log_signal_variance: jnp.ndarray
    log_lengthscales: jnp.ndarray    # (d_in,)
    projection: jnp.ndarray          # (d_in, d_out) fixed mean map (zeros => zero mean)
    mean_fn: str = "linear_projection"
    whiten: bool = True

    @property
    def num_inducing(self) -> int:
        return self.z.shape[0]

    @property
    def input_dim(self) -> int:
        return self.z.shape[1]

    @property
    def output_dim(self) -> int:
        return self.m.shape[1]

    @property
    def kernel(self) -> KernelParams:
        return KernelParams(self.log_signal_variance, self.log_lengthscales)


@dataclass(frozen=True)
class DgpModel:
    """Stack of layers plus the Gaussian likelihood's log noise variance."""

    layers: tuple[LayerState, ...]
    log_noise_variance: jnp.ndarray

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].output_dim

    @property
    def likelihood(self) -> LikelihoodParams:
        return LikelihoodParams(self.log_noise_variance, self.output_dim)


jax.tree_util.register_dataclass(
    LayerState,
    data_fields=("z", "m", "s_raw", "log_signal_variance", "log_lengthscales", "projection"),
    meta_fields=("mean_fn", "whiten"),
)
jax.tree_util.register_dataclass(
    DgpModel, data_fields=("layers", "log_noise_variance"), meta_fields=()
)


def _inv_softplus(value: float) -> float:
    return float(np.log(np.expm1(value)))


def _s_factors(s_raw):
    """(d_out, m, m) lower-triangular factors with a softplus-transformed diagonal."""
    lower = jnp.tril(s_raw, k=-1)
    diag = jax.nn.softplus(jnp.diagonal(s_raw, axis1=-2, axis2=-1))
    return lower + jax.vmap(jnp.diag)(diag)


def _mean_function(layer: LayerState, x):
    return x @ layer.projection


# ---------------------------------------------------------------------------
# model construction
# ---------------------------------------------------------------------------


def _projection_matrix(rep: np.ndarray, d_in: int, d_out: int) -> np.ndarray:
    """Fixed mean map: identity when widths match, else a PCA-style projection."""
    if d_in == d_out:
        return np.eye(d_in)
    if d_in > d_out:
        centered = rep - rep.mean(axis=0, keepdims=True)
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        return vt[:d_out].T  # (d_in, d_out)
    w = np.zeros((d_in, d_out))
    w[:, :d_in] = np.eye(d_in)
    return w


def init_model(
    x,
    y,
    num_layers: int,
    num_inducing: int,
    whiten: bool = True,
    hidden_width_cap: int = 30,
    seed: int = 0,
    signal_variance: float = 1.0,
    lengthscale: float = 1.0,
    noise_variance_scale: float = 0.05,
) -> DgpModel:
    """Build an initial model on (normalized) data.

    Hidden widths follow min(hidden_width_cap, input_dim); inducing inputs
    start at a random subset of the training inputs, propagated through the
    fixed mean maps for deeper layers. Covariances start near-deterministic
    (1e-5 scale) and the noise variance at ``noise_variance_scale`` times the
    target variance.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if num_layers < 1:
        raise ValueError("num_layers must be >= 1")
    n, d_in = x.shape
    p = y.shape[1]
    rng = np.random.default_rng(seed)

    widths = [d_in] + [min(hidden_width_cap, d_in)] * (num_layers - 1) + [p]
    if n >= num_inducing:
        idx = rng.choice(n, size=num_inducing, replace=False)
        z = x[idx]
    else:
        idx = rng.choice(n, size=num_inducing, replace=True)
        z = x[idx] + 0.01 * rng.standard_normal((num_inducing, d_in))

    layers = []
    rep = x
    for l in range(num_layers):
        din, dout = widths[l], widths[l + 1]
        final = l == num_layers - 1
        if final:
            proj = np.zeros((din, dout))
            mean_fn = "zero"
        else:
            proj = _projection_matrix(rep, din, dout)
            mean_fn = "linear_projection"
        kp = KernelParams.create(din, signal_variance, lengthscale)
        m_var = np.zeros((z.shape[0], dout))
        s_raw = _init_s_raw(kp, z, dout, whiten)
        layers.append(
            LayerState(
                z=jnp.asarray(z),
                m=jnp.asarray(m_var),
                s_raw=jnp.asarray(s_raw),
                log_signal_variance=kp.log_signal_variance,
                log_lengthscales=kp.log_lengthscales,
                projection=jnp.asarray(proj),
                mean_fn=mean_fn,
                whiten=whiten,
            )
        )
        if not final:
            rep = rep @ proj
            z = z @ proj

    noise0 = max(noise_variance_scale * float(np.var(y)), 1e-6)
    return DgpModel(
        layers=tuple(layers),
        log_noise_variance=jnp.asarray(np.log(noise0), dtype=jnp.float64),
    )


def _init_s_raw(kp: KernelParams, z, d_out: int, whiten: bool) -> np.ndarray:
    m = z.shape[0]
    if whiten:
        raw = np.zeros((d_out, m, m))
        raw[:, np.arange(m), np.arange(m)] = _inv_softplus(np.sqrt(1e-5))
        return raw
    kzz = np.asarray(kernel_matrix(kp, z, z))
    lz = np.linalg.cholesky(kzz + 1e-6 * np.mean(np.diag(kzz)) * np.eye(m))
    factor = np.sqrt(1e-5) * lz
    raw = np.tril(factor, k=-1)
    raw[np.arange(m), np.arange(m)] = np.log(np.expm1(np.diag(factor)))
    return np.broadcast_to(raw, (d_out, m, m)).copy()


# ---------------------------------------------------------------------------
# conditional moments and sampling
# ---------------------------------------------------------------------------


def layer_moments(layer: LayerState, inputs) -> GaussianMoments:
    """Marginal mean/variance of the layer outputs at the given inputs.

    mean_c = mean_fn(x) + a(x)' (m_c - mean_fn(z)),
    var_c  = k(x,x) - a(x)' (K_zz - S_c) a(x),
    with the whitened parameterization substituting the standard-normal prior.
    Variances are clamped below at 1e-10.
    """
    inputs = jnp.asarray(inputs, dtype=jnp.float64)
    if inputs.ndim != 2 or inputs.shape[1] != layer.input_dim:
        raise DimensionMismatch(
            f"layer expects inputs of width {layer.input_dim}, got {inputs.shape}"
        )
    kp = layer.kernel
    kzz = kernel_matrix(kp, layer.z, layer.z)
    lz = chol_with_jitter(kzz)
    if is_concrete(lz) and not bool(jnp.all(jnp.isfinite(lz))):
        raise NotPositiveDefinite("K(Z,Z) is not positive definite even with jitter")
    kzx = kernel_matrix(kp, layer.z, inputs)
    a = jax.scipy.linalg.solve_triangular(lz, kzx, lower=True)  # L^-1 K_zx
    kdiag = kernel_diag(kp, inputs)
    sf = _s_factors(layer.s_raw)

    if layer.whiten:
        w = a
        mean = _mean_function(layer, inputs) + a.T @ layer.m
    else:
        w = jax.scipy.linalg.solve_triangular(lz.T, a, lower=False)  # K_zz^-1 K_zx
        mean = _mean_function(layer, inputs) + w.T @ (
            layer.m - _mean_function(layer, layer.z)
        )
    quad_prior = jnp.sum(a**2, axis=0)  # a' K_zz a = |L^-1 k|^2
    tmp = jnp.einsum("cji,jn->cin", sf, w)  # S_c^T-factor applied to a(x)
    quad_s = jnp.sum(tmp**2, axis=1)  # (d_out, n)
    var = kdiag[None, :] - quad_prior[None, :] + quad_s
    var = jnp.maximum(var.T, VARIANCE_FLOOR)
    return GaussianMoments(mean=mean, variance=var)


def layer_sample(moments: GaussianMoments, noise):
    """Reparameterized draw: mean + sqrt(variance) * noise, elementwise."""
    noise = jnp.asarray(noise, dtype=jnp.float64)
    if noise.shape != moments.mean.shape:
        raise DimensionMismatch(
            f"noise shape {noise.shape} does not match moments {moments.mean.shape}"
        )
    return moments.mean + jnp.sqrt(moments.variance) * noise


def _moments_batched(layer: LayerState, inputs):
    """layer_moments over (S, n, d) inputs by folding paths into the batch."""
    s, n, d = inputs.shape
    mom = layer_moments(layer, inputs.reshape(s * n, d))
    return GaussianMoments(
        mean=mom.mean.reshape(s, n, layer.output_dim),
        variance=mom.variance.reshape(s, n, layer.output_dim),
    )


def _forward_paths(model: DgpModel, x, n_samples: int, key, noise=None) -> GaussianMoments:
    """Final-layer moments along sample paths; shape (1, n, p) when L == 1.

    The first layer's moments are computed once and broadcast before
    sampling, so a single-layer model is fully deterministic. ``noise``
    optionally supplies the standard-normal draws, one (S, n, width) array
    per stochastic layer.
    """
    x = jnp.asarray(x, dtype=jnp.float64)
    n = x.shape[0]
    mom = layer_moments(model.layers[0], x)
    if model.num_layers == 1:
        return GaussianMoments(mom.mean[None], mom.variance[None])
    mom = GaussianMoments(
        jnp.broadcast_to(mom.mean, (n_samples, n, mom.mean.shape[1])),
        jnp.broadcast_to(mom.variance, (n_samples, n, mom.variance.shape[1])),
    )
    current = None
    for l, layer in enumerate(model.layers):
        if l > 0:
            mom = _moments_batched(layer, current)
        if l == model.num_layers - 1:
            return mom
        if noise is None:
            eps = jax.random.normal(jax.random.fold_in(key, l), mom.mean.shape)
        else:
            eps = jnp.asarray(noise[l], dtype=jnp.float64)
        current = layer_sample(mom, eps)
    raise AssertionError("unreachable")


def model_forward(model: DgpModel, x, n_samples: int, seed: int, noise=None):
    """Propagate x through the stack, returning one final GaussianMoments per path.

    Hidden layers are sampled with the reparameterization trick; the final
    layer is never sampled. Deterministic given the seed.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    key = jax.random.PRNGKey(seed)
    stacked = _forward_paths(model, x, n_samples, key, noise)
    if stacked.mean.shape[0] == 1 and n_samples > 1:
        single = GaussianMoments(stacked.mean[0], stacked.variance[0])
        return [single] * n_samples
    return [GaussianMoments(stacked.mean[s], stacked.variance[s]) for s in range(n_samples)]


# ---------------------------------------------------------------------------
# divergence term and objective
# ---------------------------------------------------------------------------


def divergence_term(model: DgpModel, specs):
    """Sum over layers and output columns of the chosen quantifier vs the prior.

    The prior over a column's inducing outputs is N(mean_fn(z), K_zz)
    unwhitened and N(0, I) in the whitened representation.
    """
    specs = tuple(specs)
    if len(specs) != model.num_layers:
        raise ValueError(f"need one quantifier per layer ({model.num_layers}), got {len(specs)}")
    total = jnp.asarray(0.0, dtype=jnp.float64)
    for layer, spec in zip(model.layers, specs):
        sf = _s_factors(layer.s_raw)
        if layer.whiten:
            prior_mean = jnp.zeros((layer.num_inducing,))
            prior_lower = jnp.eye(layer.num_inducing)
            per_col = jax.vmap(
                lambda mq, lq: apply_quantifier_chol(spec, mq, lq, prior_mean, prior_lower)
            )(layer.m.T, sf)
        else:
            kzz = kernel_matrix(layer.kernel, layer.z, layer.z)
            prior_lower = chol_with_jitter(kzz)
            prior_means = _mean_function(layer, layer.z).T  # (d_out, m)
            per_col = jax.vmap(
                lambda mq, lq, mp: apply_quantifier_chol(spec, mq, lq, mp, prior_lower)
            )(layer.m.T, sf, prior_means)
        total = total + jnp.sum(per_col)
    return total


def _objective(model: DgpModel, x, y, key, loss: LossSpec, specs, n_samples: int, n_total: int):
    moments = _forward_paths(model, x, n_samples, key)
    per_point = expected_loss(
        loss,
        y[None, :, :],
        MarginalMoments(moments.mean, moments.variance),
        model.likelihood,
    )  # (paths, batch)
    rescale = n_total / x.shape[0]
    loss_term = rescale * jnp.sum(jnp.mean(per_point, axis=0))
    return loss_term + divergence_term(model, specs)


_objective_jit = partial(jax.jit, static_argnames=("loss", "specs", "n_samples", "n_total"))(
    _objective
)
_objective_value_and_grad = partial(
    jax.jit, static_argnames=("loss", "specs", "n_samples", "n_total")
)(jax.value_and_grad(_objective))


def gvi_objective(
    model: DgpModel,
    batch,
    loss: LossSpec,
    specs,
    n_samples: int,
    seed: int,
    n_total: int,
):
    """Minibatch objective: rescaled expected loss plus the divergence penalty."""
    x, y = batch
    x = jnp.asarray(x, dtype=jnp.float64)
    y = jnp.asarray(y, dtype=jnp.float64)
    if x.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    if n_total < x.shape[0]:
        raise ValueError("n_total must be at least the batch size")
    key = jax.random.PRNGKey(seed)
    return _objective_jit(
        model, x, y, key, loss, tuple(specs), int(n_samples), int(n_total)
    )


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


def predict(model: DgpModel, x_star, n_samples: int, seed: int):
    """Mixture-over-paths predictive at x_star.

    Returns (pred_mean, pred_var, log_density) where pred_var includes the
    likelihood noise plus the spread of path means, and log_density(y)
    evaluates the per-point log of the path-mixture density
    (logsumexp over paths of Gaussian log densities).
    """
    key = jax.random.PRNGKey(seed)
    stacked = _forward_paths(model, jnp.asarray(x_star, dtype=jnp.float64), n_samples, key)
    means = np.asarray(stacked.mean)          # (S, n, p)
    variances = np.asarray(stacked.variance)  # (S, n, p)
    noise = float(model.likelihood.noise_variance)
    total_var = variances + noise
    pred_mean = means.mean(axis=0)
    pred_var = total_var.mean(axis=0) + means.var(axis=0)

    def log_density(y):
        y = np.asarray(y, dtype=np.float64)
        if y.shape != pred_mean.shape:
            raise DimensionMismatch(f"targets {y.shape} vs predictions {pred_mean.shape}")
        comp = -0.5 * (
            np.log(2.0 * np.pi * total_var) + (y[None] - means) ** 2 / total_var
        ).sum(axis=2)  # (S, n)
        m = comp.max(axis=0)
        return m + np.log(np.mean(np.exp(comp - m), axis=0))

    return pred_mean, pred_var, log_density
