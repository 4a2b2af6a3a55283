"""Dropout and additive-noise regularization for generalized linear models."""

from .data import (
    Dataset,
    ScalingReport,
    SparseVector,
    UnlabeledSet,
    apply_scaling,
    featurize_ngrams,
    normalize_columns,
    read_sparse_dataset,
    write_sparse_dataset,
)
from .glm import (
    GlmFamily,
    dataset_nll_grad,
    example_loss,
    fisher_diagonals,
    partition_derivatives,
    predict,
)
from .noising import (
    NoiseModel,
    PenaltyValue,
    draw_noised,
    exact_penalty,
    gaussian_logistic_penalty,
    linearization_variance,
    mc_noised_objective,
    mc_penalty,
    quad_penalty,
    quad_penalty_grad,
)
from .optim import (
    BatchConfig,
    FitReport,
    OnlineRule,
    OnlineState,
    PenaltyMode,
    fit_glm,
    minimize,
    online_step,
    run_online,
)
from .semisup import fit_semisup, select_alpha, semisup_quad_penalty
from .simgen import SimConfig, generate_rare_feature_dataset

__version__ = "0.1.0"
