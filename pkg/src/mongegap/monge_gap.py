"""Monge gap of a map evaluated on sample points.

The gap only depends on the map through its values ``TX[i] = T(X[i])``, so
everything here takes those values directly; :func:`monge_gap_gradient` is
the one entry point that knows about networks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .costs import CostSpec, contract_grad_y, cost_matrix
from .ot import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    SinkhornSolution,
    TransportPlan,
    brute_force_assignment,
    epsilon_rule,
    exact_assignment,
    sinkhorn,
)


@dataclass(frozen=True)
class MongeGapValue:
    displacement: float
    ot_cost: float
    gap: float
    epsilon: float
    solution: SinkhornSolution | None = None


def _check(X, TX):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    TX = np.atleast_2d(np.asarray(TX, dtype=float))
    if X.shape[0] != TX.shape[0]:
        raise ValueError(f"size mismatch: {X.shape[0]} points vs {TX.shape[0]} images")
    return X, TX


def _value(C, ot_cost, epsilon, solution=None):
    disp = float(np.trace(C) / C.shape[0])
    return MongeGapValue(disp, float(ot_cost), disp - float(ot_cost), float(epsilon), solution)


def monge_gap(X, TX, spec: CostSpec, epsilon: float | None = 0.0,
              tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
              polish: bool = True) -> MongeGapValue:
    """Displacement ``mean_i c(x_i, T(x_i))`` minus the OT cost to ``T#rho``.

    ``epsilon=0`` solves the assignment exactly; ``epsilon=None`` applies
    :func:`epsilon_rule` to the cost matrix.
    """
    X, TX = _check(X, TX)
    C = cost_matrix(spec, X, TX)
    eps = epsilon_rule(C) if epsilon is None else float(epsilon)
    if eps < 0:
        raise ValueError("epsilon must be non-negative")
    if eps == 0.0:
        return _value(C, exact_assignment(C).cost, 0.0)
    sol = sinkhorn(C, eps, tol, max_iter, polish)
    return _value(C, sol.regularized_cost, eps, sol)


def monge_gap_permutation(X, TX, spec: CostSpec) -> MongeGapValue:
    """Unregularized gap by enumerating every permutation (small n only)."""
    X, TX = _check(X, TX)
    C = cost_matrix(spec, X, TX)
    return _value(C, brute_force_assignment(C).cost, 0.0)


def danskin_coefficients(plan) -> np.ndarray:
    """``D = I / n - P``: weights of the pairwise cost gradients."""
    P = plan.P if isinstance(plan, (TransportPlan, SinkhornSolution)) else np.asarray(plan, dtype=float)
    n = P.shape[0]
    if P.ndim != 2 or P.shape[1] != n:
        raise ValueError("danskin coefficients need a square plan")
    return np.eye(n) / n - P


def gap_cotangents(X, TX, spec: CostSpec, plan) -> np.ndarray:
    """Gradient of the entropic gap with respect to the images ``TX``, plan frozen."""
    return contract_grad_y(spec, X, TX, danskin_coefficients(plan))


def monge_gap_gradient(X, model: nn.MapModel, spec: CostSpec, epsilon: float | None = None,
                       tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
    """Entropic gap of ``model`` on ``X`` and its parameter gradient.

    Returns ``(MongeGapValue, grad)``. ``epsilon=None`` applies the epsilon
    rule, whose value is then held fixed (not differentiated).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    TX, pullback = nn.map_value_and_pullback(model, X)
    val = monge_gap(X, TX, spec, epsilon, tol, max_iter)
    if val.epsilon == 0.0:
        raise ValueError("the Danskin gradient needs epsilon > 0")
    grad = pullback(gap_cotangents(X, TX, spec, val.solution))
    return val, grad
