"""Robust deep Gaussian process regression with generalized variational objectives.

Sparse-GP layers are stacked and trained by doubly-stochastic minibatch
optimization of a generalized objective: the expected-loss term may be the
usual negative log likelihood or a robust beta/gamma alternative, and the
per-layer prior-regularization term may be the KL divergence, a (1/w)-scaled
KL, or a Renyi alpha-divergence, all in closed form.
"""

# Everything here assumes float64; tolerances in the closed forms and their
# oracles are far below float32 resolution.
from jax import config as _jax_config

_jax_config.update("jax_enable_x64", True)

from .exceptions import (  # noqa: E402
    AlphaOutOfRange,
    ConfigError,
    DimensionMismatch,
    EmptyFile,
    GvidgpError,
    NonFiniteGradient,
    NonFiniteObjective,
    NonPositivePower,
    NotPositiveDefinite,
    ParseError,
    TooFewRows,
)
from .linalg import CholFactor, SpdMatrix, cholesky_psd, logdet, spd, tri_solve  # noqa: E402
from .kernels import KernelParams, kernel_diag, kernel_matrix  # noqa: E402
from .divergences import (  # noqa: E402
    GaussianDist,
    QuantifierSpec,
    apply_quantifier,
    kld_gauss,
    mc_divergence_oracle,
    mc_joint_divergence_oracle,
    renyi_alpha_gauss,
)
from .losses import (  # noqa: E402
    LikelihoodParams,
    LossSpec,
    MarginalMoments,
    expected_beta_loss,
    expected_gamma_loss,
    expected_loss,
    expected_nll,
    expected_power_density,
    mc_loss_oracle,
    power_density_integral,
)
from .dgp import (  # noqa: E402
    DgpModel,
    GaussianMoments,
    LayerState,
    divergence_term,
    gvi_objective,
    init_model,
    layer_moments,
    layer_sample,
    model_forward,
    predict,
)
from .training import (  # noqa: E402
    AdamState,
    GradCheckReport,
    TrainConfig,
    TrainTrace,
    adam_step,
    grad_check,
    train,
)
from .data import (  # noqa: E402
    Dataset,
    NormStats,
    Table,
    load_csv,
    make_contaminated_sine,
    normalize_split,
    rmse,
    test_log_likelihood,
    write_csv,
)
from .checkpoint import load_checkpoint, save_checkpoint  # noqa: E402

__version__ = "0.1.0"
