"""Toy-scale latent-expression laboratory.

Thin wrapper around the C++ core exposing the spectrum diagnostics, core
losses, the 6D rotation map, the synthetic face renderer and landmark metrics.
"""

from _emolatent import (  # noqa: F401
    ConfigError,
    DimensionError,
    DomainError,
    auc_z,
    components_to_threshold,
    cosface_loss,
    cosine_sim,
    distill_mouth_basis,
    geodesic_distance,
    landmark_metrics,
    matrix_to_rot6d,
    normalize_landmarks,
    pca_spectrum,
    render,
    rot6d_to_matrix,
    sdm_loss,
    __version__,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "DomainError",
    "auc_z",
    "components_to_threshold",
    "cosface_loss",
    "cosine_sim",
    "distill_mouth_basis",
    "geodesic_distance",
    "landmark_metrics",
    "matrix_to_rot6d",
    "normalize_landmarks",
    "pca_spectrum",
    "render",
    "rot6d_to_matrix",
    "sdm_loss",
    "__version__",
]
