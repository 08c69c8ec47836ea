"""Monge-gap regularized estimation of optimal transport maps."""

from .costs import CostSpec, cost_matrix, eval_cost
from .kernels import BACKEND
from .monge_gap import monge_gap, monge_gap_gradient, monge_gap_permutation
from .ot import exact_assignment, sinkhorn, sinkhorn_divergence
from .training import TrainConfig, evaluate, train

__all__ = [
    "BACKEND",
    "CostSpec",
    "TrainConfig",
    "cost_matrix",
    "eval_cost",
    "evaluate",
    "exact_assignment",
    "monge_gap",
    "monge_gap_gradient",
    "monge_gap_permutation",
    "sinkhorn",
    "sinkhorn_divergence",
    "train",
]
