"""Adversarial reprogramming for low-resource spoken command recognition."""

from ._arscr import (
    Error,
    aggregate_probs,
    build_random_mapping,
    build_similarity_mapping,
    cosine_similarity_matrix,
    forward,
    load_wav,
    log_mel,
    mean_std,
    parameter_count,
    parse_config,
    rel_improvement,
    reprogram_full,
    reprogram_pad,
    run_cli,
    spec_augment_mask,
    write_wav,
)

__all__ = [
    "Error",
    "aggregate_probs",
    "build_random_mapping",
    "build_similarity_mapping",
    "cosine_similarity_matrix",
    "forward",
    "load_wav",
    "log_mel",
    "mean_std",
    "parameter_count",
    "parse_config",
    "rel_improvement",
    "reprogram_full",
    "reprogram_pad",
    "run_cli",
    "spec_augment_mask",
    "write_wav",
]
