"""Model-observer evaluation: channelized observers, search/LKE tasks, AUC statistics."""

from ._mobs import (
    InputError,
    LinearTemplate,
    NumericError,
    StageError,
    auc_empirical,
    auc_parametric,
    calibrate_threshold,
    cnn_score,
    connected_components,
    gabor_bank,
    gaussian_smooth,
    overlap_percentage,
    power_law_background,
    response_map,
    run,
    search_score,
    top_fraction_mask,
    train_cho,
)

__all__ = [
    "InputError",
    "LinearTemplate",
    "NumericError",
    "StageError",
    "auc_empirical",
    "auc_parametric",
    "calibrate_threshold",
    "cnn_score",
    "connected_components",
    "gabor_bank",
    "gaussian_smooth",
    "overlap_percentage",
    "power_law_background",
    "response_map",
    "run",
    "search_score",
    "top_fraction_mask",
    "train_cho",
]
