"""Ground costs: pointwise values, first-argument gradients, cost matrices
and conjugate gradients for translation-invariant costs ``c(x, y) = h(x - y)``.

Config strings::

    sqeuclidean | powernorm:p=1.5 | euclidean | sphere-geodesic | sphere-neglog
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SQEUCLIDEAN = "sqeuclidean"
POWERNORM = "powernorm"
EUCLIDEAN = "euclidean"
SPHERE_GEODESIC = "sphere-geodesic"
SPHERE_NEGLOG = "sphere-neglog"

FAMILIES = (SQEUCLIDEAN, POWERNORM, EUCLIDEAN, SPHERE_GEODESIC, SPHERE_NEGLOG)

UNIT_NORM_TOL = 1e-8
# Rows processed at once when a pairwise (n, m, d) tensor is needed.
_CHUNK = 256


class CostDomainError(ValueError):
    """Inputs outside the domain of the cost."""


class SingularityError(ValueError):
    """The requested derivative does not exist at this point."""


class StructuredCostUnavailable(ValueError):
    """The cost is not of the form h(x - y) with h strictly convex."""


@dataclass(frozen=True)
class CostSpec:
    family: str
    p: float | None = None
    q: float | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown cost family {self.family!r}")
        if self.family == POWERNORM:
            if self.p is None or not self.p > 1:
                raise ValueError("powernorm requires p > 1")
            object.__setattr__(self, "q", self.p / (self.p - 1.0))
        elif self.family == SQEUCLIDEAN:
            object.__setattr__(self, "p", 2.0)
            object.__setattr__(self, "q", 2.0)
        else:
            object.__setattr__(self, "p", None)

    @classmethod
    def parse(cls, text: str) -> "CostSpec":
        name, _, args = text.strip().partition(":")
        if name == POWERNORM:
            key, _, value = args.partition("=")
            if key.strip() != "p":
                raise ValueError(f"bad powernorm spec {text!r}")
            return cls(POWERNORM, float(value))
        return cls(name)

    def __str__(self):
        if self.family == POWERNORM:
            return f"powernorm:p={self.p:g}"
        return self.family

    @property
    def on_sphere(self) -> bool:
        return self.family in (SPHERE_GEODESIC, SPHERE_NEGLOG)

    @property
    def structured(self) -> bool:
        return self.family in (SQEUCLIDEAN, POWERNORM)


def sqeuclidean() -> CostSpec:
    return CostSpec(SQEUCLIDEAN)


def _as_points(X, Y):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    return X, Y


def _check_unit(X):
    norms = np.linalg.norm(X, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
        raise CostDomainError("sphere costs require unit-norm inputs")


def _dots(spec, X, Y):
    _check_unit(X)
    _check_unit(Y)
    S = np.clip(X @ Y.T, -1.0, 1.0)
    if spec.family == SPHERE_NEGLOG and np.any(S <= 0):
        raise CostDomainError("sphere-neglog requires x.y > 0")
    return S


def _h(spec, Z):
    """h(z) summed over the last axis, for translation-invariant costs."""
    if spec.family == SQEUCLIDEAN:
        return 0.5 * np.sum(Z * Z, axis=-1)
    if spec.family == POWERNORM:
        return np.sum(np.abs(Z) ** spec.p, axis=-1) / spec.p
    return np.sqrt(np.sum(Z * Z, axis=-1))


def cost_matrix(spec: CostSpec, X, Y) -> np.ndarray:
    """Pairwise costs ``C[i, j] = c(X[i], Y[j])``."""
    X, Y = _as_points(X, Y)
    if spec.family == SQEUCLIDEAN:
        sq = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2.0 * X @ Y.T
        return 0.5 * np.maximum(sq, 0.0)
    if spec.family == SPHERE_GEODESIC:
        return np.arccos(_dots(spec, X, Y))
    if spec.family == SPHERE_NEGLOG:
        return -np.log(_dots(spec, X, Y))
    C = np.empty((X.shape[0], Y.shape[0]))
    for s in range(0, X.shape[0], _CHUNK):
        C[s:s + _CHUNK] = _h(spec, X[s:s + _CHUNK, None, :] - Y[None, :, :])
    return C


def eval_cost(spec: CostSpec, x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if spec.structured or spec.family == EUCLIDEAN:
        return float(_h(spec, x - y))
    return float(cost_matrix(spec, x, y)[0, 0])


def _grad_h(spec, Z):
    if spec.family == SQEUCLIDEAN:
        return Z
    if spec.family == POWERNORM:
        return np.sign(Z) * np.abs(Z) ** (spec.p - 1.0)
    raise StructuredCostUnavailable(spec.family)


def grad_x_cost(spec: CostSpec, x, y) -> np.ndarray:
    """Gradient of ``c(x, y)`` with respect to ``x`` (ambient coordinates)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if spec.structured:
        return _grad_h(spec, x - y)
    if spec.family == EUCLIDEAN:
        r = np.linalg.norm(x - y)
        if r == 0.0:
            raise SingularityError("euclidean cost is not differentiable at x == y")
        return (x - y) / r
    s = float(_dots(spec, x[None], y[None])[0, 0])
    if spec.family == SPHERE_GEODESIC:
        if abs(s) >= 1.0:
            raise SingularityError("geodesic cost is not differentiable at x == +-y")
        return -y / np.sqrt(1.0 - s * s)
    return -y / s


def conjugate_gradient(spec: CostSpec, z) -> np.ndarray:
    """``grad h*(z)`` with ``h* = (1/q)||.||_q^q``; applied row-wise to arrays."""
    if not spec.structured:
        raise StructuredCostUnavailable(f"{spec.family} has no structured conjugate")
    z = np.asarray(z, dtype=float)
    if spec.family == SQEUCLIDEAN:
        return z.copy()
    return np.sign(z) * np.abs(z) ** (spec.q - 1.0)


def conjugate_hessian_diag(spec: CostSpec, z) -> np.ndarray:
    """Diagonal of the Jacobian of ``grad h*`` (it is separable)."""
    if not spec.structured:
        raise StructuredCostUnavailable(f"{spec.family} has no structured conjugate")
    z = np.asarray(z, dtype=float)
    if spec.family == SQEUCLIDEAN:
        return np.ones_like(z)
    if spec.q < 2.0 and np.any(z == 0.0):
        raise SingularityError("conjugate Hessian is unbounded at zero coordinates")
    return (spec.q - 1.0) * np.abs(z) ** (spec.q - 2.0)


def grad_h(spec: CostSpec, z) -> np.ndarray:
    """``grad h(z)`` for structured costs, row-wise."""
    return _grad_h(spec, np.asarray(z, dtype=float))


def contract_grad_x(spec: CostSpec, X, Y, W) -> np.ndarray:
    """``G[i] = sum_j W[i, j] * grad_1 c(X[i], Y[j])``.

    Zero-distance pairs contribute 0 for the euclidean cost. Sphere costs
    return the component tangent to the sphere at ``X[i]``; callers only
    consume these through the sphere normalisation, which discards the
    normal part.
    """
    X, Y = _as_points(X, Y)
    W = np.asarray(W, dtype=float)
    if spec.family == SQEUCLIDEAN:
        return W.sum(axis=1)[:, None] * X - W @ Y
    if spec.family == SPHERE_NEGLOG:
        S = _dots(spec, X, Y)
        WS = W / S
        # -(y - s x) / s, summed with weights
        return -(WS @ Y) + W.sum(axis=1)[:, None] * X
    if spec.family == SPHERE_GEODESIC:
        _dots(spec, X, Y)
    G = np.empty_like(X)
    for s in range(0, X.shape[0], _CHUNK):
        Xc = X[s:s + _CHUNK]
        Wc = W[s:s + _CHUNK]
        if spec.family == POWERNORM:
            D = _grad_h(spec, Xc[:, None, :] - Y[None, :, :])
        elif spec.family == EUCLIDEAN:
            Z = Xc[:, None, :] - Y[None, :, :]
            r = np.linalg.norm(Z, axis=-1, keepdims=True)
            D = np.divide(Z, r, out=np.zeros_like(Z), where=r > 0)
        else:
            S = np.clip(Xc @ Y.T, -1.0, 1.0)
            Z = Y[None, :, :] - S[:, :, None] * Xc[:, None, :]
            r = np.linalg.norm(Z, axis=-1, keepdims=True)
            D = -np.divide(Z, r, out=np.zeros_like(Z), where=r > 1e-12)
        G[s:s + _CHUNK] = np.einsum("ij,ijk->ik", Wc, D)
    return G


def contract_grad_y(spec: CostSpec, X, Y, W) -> np.ndarray:
    """``G[j] = sum_i W[i, j] * grad_2 c(X[i], Y[j])`` (all costs are symmetric)."""
    return contract_grad_x(spec, Y, X, np.asarray(W, dtype=float).T)
