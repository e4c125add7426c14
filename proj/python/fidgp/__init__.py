"""Flow-induced diagonal GP layers: python bindings over the C++ core."""

from ._fidgp import (  # noqa: F401
    FlowPrior,
    Model,
    TraceRow,
    auroc,
    cholesky_jittered,
    conditional_gaussian,
    conditional_weight_kl,
    count_params,
    diag_gaussian_kl,
    ece,
    gen_regression1d,
    load_checkpoint,
    matheron_sample,
    matrix_normal_cond_mean,
    ridge_projector,
    rmse,
    save_checkpoint,
    score_ood,
    selfcheck,
    spectral_norm,
    train_from_config,
)

__all__ = [
    "FlowPrior",
    "Model",
    "TraceRow",
    "auroc",
    "cholesky_jittered",
    "conditional_gaussian",
    "conditional_weight_kl",
    "count_params",
    "diag_gaussian_kl",
    "ece",
    "gen_regression1d",
    "load_checkpoint",
    "matheron_sample",
    "matrix_normal_cond_mean",
    "ridge_projector",
    "rmse",
    "save_checkpoint",
    "score_ood",
    "selfcheck",
    "spectral_norm",
    "train_from_config",
]
