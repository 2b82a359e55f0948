"""Bayesian neural networks with Bayes-by-Backprop and boosted variational
inference. Thin Python layer over the C++ core."""
from ._core import (  # noqa: F401
    ConfigError,
    DiagonalGaussian,
    GaussianMixture,
    NumericError,
    __version__,
    accuracy,
    boost_toy,
    dataset_names,
    ece,
    nll,
    param_count,
    predict_proba,
    quadrature_kl,
    softplus,
    stratified_split,
    toy_log_density,
    toy_target_names,
    train,
    uncertainty_decomposition,
    verify_report,
)
