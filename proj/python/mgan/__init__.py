"""Multi-granularity alignment network for coarse-to-fine aspect sentiment transfer."""

from ._core import (
    ConfigError,
    DimensionError,
    DomainError,
    LoadError,
    Model,
    ValidationError,
    accuracy,
    cfa_loss,
    contrastive_omega,
    cross_entropy,
    gen_synthetic,
    gradcheck,
    macro_f1,
    position_relevance_source,
    position_relevance_target,
    run_cli,
)

SENTIMENTS = ("positive", "neutral", "negative")

__all__ = [
    "ConfigError",
    "DimensionError",
    "DomainError",
    "LoadError",
    "Model",
    "SENTIMENTS",
    "ValidationError",
    "accuracy",
    "cfa_loss",
    "contrastive_omega",
    "cross_entropy",
    "gen_synthetic",
    "gradcheck",
    "macro_f1",
    "position_relevance_source",
    "position_relevance_target",
    "run_cli",
]
