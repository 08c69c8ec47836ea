"""Conservativity penalty on a vector field ``F``: mean squared Frobenius norm
of ``Jac F - Jac F^T`` over reference points, exact or probed.

The probed estimator divides the double sum over points and probes by
``n * m`` so the penalty scale does not depend on batch or probe counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn

EXACT = "exact"
HUTCHINSON = "hutchinson"


@dataclass(frozen=True)
class ConservativityValue:
    value: float
    probes_used: int
    estimator: str


def _square_net(net):
    d = net.layer_dims[0]
    if net.layer_dims[-1] != d:
        raise ValueError("conservativity needs input dim == output dim")
    return d


def conservativity_exact(net: nn.MlpParams, X) -> ConservativityValue:
    d = _square_net(net)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    E = np.eye(d)
    total = 0.0
    for i in range(n):
        xs = np.repeat(X[i:i + 1], d, axis=0)
        J = nn.jvp(net, xs, E).T      # column k = J e_k
        JT = nn.vjp(net, xs, E).T     # column k = J^T e_k
        total += float(np.sum((J - JT) ** 2))
    return ConservativityValue(total / n, d, EXACT)


def conservativity_hutchinson(net: nn.MlpParams, X, V) -> ConservativityValue:
    _square_net(net)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if V.shape[1] != X.shape[1]:
        raise ValueError("probe dimension mismatch")
    value = nn.asymmetry_objective(net, X, V) / (X.shape[0] * V.shape[0])
    return ConservativityValue(value, V.shape[0], HUTCHINSON)


def conservativity_gradient(net: nn.MlpParams, X, V):
    """Probed penalty and its parameter gradient."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    value, grad = nn.second_order_param_gradient(net, X, V, scale=1.0 / (X.shape[0] * V.shape[0]))
    return ConservativityValue(value, V.shape[0], HUTCHINSON), grad


def probe_count(d: int) -> int:
    """Ceiling of 20% of the dimension, at least 1."""
    if d < 1:
        raise ValueError("dimension must be positive")
    # integer ceiling; 0.2 * d in floating point can land just above an integer
    return max(1, -(-d // 5))
