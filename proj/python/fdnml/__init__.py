"""Fractional dynamics and multifractal features for EEG fatigue classification."""

from ._fdnml import (
    ConfigError,
    DataError,
    NumericError,
    StageError,
    __version__,
    analyze,
    binarize,
    cascade_zeta,
    contrastive_loss,
    estimate_alphas,
    fit,
    gen_cascade,
    gen_fbm,
    gl_difference,
    lz76,
    psi_weights,
    run,
    set_thread_count,
    simulate_fdn,
    wasserstein1,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "StageError",
    "__version__",
    "analyze",
    "binarize",
    "cascade_zeta",
    "contrastive_loss",
    "estimate_alphas",
    "fit",
    "gen_cascade",
    "gen_fbm",
    "gl_difference",
    "lz76",
    "psi_weights",
    "run",
    "set_thread_count",
    "simulate_fdn",
    "wasserstein1",
]
