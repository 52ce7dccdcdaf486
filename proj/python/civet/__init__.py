"""Certified VAE training and evaluation."""

from ._civet import (
    CivetError,
    ConfigError,
    DimensionError,
    DomainError,
    Model,
    TrainConfig,
    TrainingError,
    UsageError,
    attack,
    certify,
    find_support_1d,
    load_idx,
    schedule_weights,
    selftest,
    snr,
    std_normal_cdf,
    std_normal_icdf,
    synthetic_dataset,
    train,
)

__all__ = [
    "CivetError",
    "ConfigError",
    "DimensionError",
    "DomainError",
    "Model",
    "TrainConfig",
    "TrainingError",
    "UsageError",
    "attack",
    "certify",
    "find_support_1d",
    "load_idx",
    "schedule_weights",
    "selftest",
    "snr",
    "std_normal_cdf",
    "std_normal_icdf",
    "synthetic_dataset",
    "train",
]
