"""Latent-space base algorithms and the embedding pipeline for GOLF."""

from latent_rl_lab.base_algs.embedding import (
    FiniteQClass,
    JLEmbedding,
    build_completeness_class,
    build_value_class,
    clip,
    embedding_error,
    jl_embed,
    required_dimension,
)
from latent_rl_lab.base_algs.golf import TRACE_FIELDS, GolfResult, coverable_classes, golf, golf_beta, greedy_policies
from latent_rl_lab.base_algs.ucbvi import UCBVI, BaseAlgorithm, KnownModelPlanner, ucbvi_base

__all__ = [
    "TRACE_FIELDS",
    "BaseAlgorithm",
    "FiniteQClass",
    "GolfResult",
    "JLEmbedding",
    "KnownModelPlanner",
    "UCBVI",
    "build_completeness_class",
    "build_value_class",
    "clip",
    "coverable_classes",
    "embedding_error",
    "golf",
    "golf_beta",
    "greedy_policies",
    "jl_embed",
    "required_dimension",
    "ucbvi_base",
]
