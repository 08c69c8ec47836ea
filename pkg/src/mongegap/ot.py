"""Discrete OT between uniform empirical measures: log-domain Sinkhorn,
exact assignment, Sinkhorn divergence and the entropic barycentric map."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import kernels
from .costs import CostSpec, cost_matrix, sqeuclidean

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 2000
BRUTE_FORCE_MAX_N = 9
# Newton polishing solves a dense (n + m - 1) system per step
POLISH_MAX_SIZE = 512
POLISH_MAX_STEPS = 50


@dataclass(frozen=True)
class TransportPlan:
    P: np.ndarray

    @property
    def row_marginal(self) -> np.ndarray:
        return np.full(self.P.shape[0], 1.0 / self.P.shape[0])

    @property
    def col_marginal(self) -> np.ndarray:
        return np.full(self.P.shape[1], 1.0 / self.P.shape[1])

    def marginal_violation(self) -> float:
        rows = np.abs(self.P.sum(axis=1) - self.row_marginal).max()
        cols = np.abs(self.P.sum(axis=0) - self.col_marginal).max()
        return float(max(rows, cols))


@dataclass(frozen=True)
class SinkhornSolution:
    plan: TransportPlan
    f: np.ndarray
    g: np.ndarray
    epsilon: float
    transport_cost: float
    regularized_cost: float
    iterations: int
    converged: bool
    violation: float

    @property
    def P(self) -> np.ndarray:
        return self.plan.P


@dataclass(frozen=True)
class Assignment:
    sigma: np.ndarray
    cost: float


def _check_finite(C):
    C = np.ascontiguousarray(C, dtype=float)
    if C.ndim != 2 or C.size == 0:
        raise ValueError("cost matrix must be a non-empty 2-d array")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix has non-finite entries")
    return C


def entropy(P: np.ndarray) -> float:
    """``H(P) = -sum P log P`` with ``0 log 0 = 0``."""
    nz = P[P > 0]
    return float(-np.sum(nz * np.log(nz)))


def _log_plan(C, f, g, eps):
    n, m = C.shape
    return (f[:, None] + g[None, :] - C) / eps - math.log(n) - math.log(m)


def _col_update(C, f, eps):
    """Potential ``g`` making the column marginals exact for the given ``f``."""
    Z = (f[:, None] - C) / eps
    zmax = Z.max(axis=0)
    return -eps * (zmax + np.log(np.exp(Z - zmax).sum(axis=0)) - math.log(C.shape[0]))


def _newton_polish(C, f, g, eps, tol):
    """Damped Newton iterations on the convex dual ``eps * sum P - mean f - mean g``.

    The last entry of ``g`` is held fixed to remove the constant shift
    between the potentials. Backtracking keeps every accepted step a descent
    step. Returns the polished ``(f, g)``.
    """
    n, m = C.shape

    def phi(f, g):
        with np.errstate(over="ignore"):
            return eps * np.exp(_log_plan(C, f, g, eps)).sum() - f.mean() - g.mean()

    val = phi(f, g)
    for _ in range(POLISH_MAX_STEPS):
        P = np.exp(_log_plan(C, f, g, eps))
        r, c = P.sum(axis=1), P.sum(axis=0)
        grad = np.concatenate([r - 1.0 / n, (c - 1.0 / m)[:-1]])
        if np.abs(grad).max() <= 0.1 * tol and abs(c[-1] - 1.0 / m) <= 0.1 * tol:
            break
        H = np.zeros((n + m - 1, n + m - 1))
        H[:n, :n] = np.diag(r)
        H[n:, n:] = np.diag(c[:-1])
        H[:n, n:] = P[:, :-1]
        H[n:, :n] = P[:, :-1].T
        # Levenberg-Marquardt damping: nearly decoupled blocks of the plan
        # make H close to singular; the shift vanishes as the gradient does
        H[np.diag_indices_from(H)] += np.abs(grad).max()
        try:
            step = -eps * np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            break
        slope = float(grad @ step)
        if not slope < 0:
            break
        t = 1.0
        while t > 1e-10:
            fn = f + t * step[:n]
            gn = g.copy()
            gn[:-1] += t * step[n:]
            vn = phi(fn, gn)
            if np.isfinite(vn) and vn <= val + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            break
        f, g, val = fn, gn, vn
    return f, g


def sinkhorn(C, epsilon: float, tol: float = DEFAULT_TOL,
             max_iter: int = DEFAULT_MAX_ITER, polish: bool = True) -> SinkhornSolution:
    """Entropic OT with uniform marginals.

    Potentials ``f, g`` parameterise the plan as
    ``P_ij = exp((f_i + g_j - C_ij) / eps) / (n m)``. Iteration stops when the
    row-marginal violation (columns are exact after each update) drops to
    ``tol``; otherwise the best iterate is returned with ``converged=False``.

    With ``polish`` set, a run that misses ``tol`` on a problem with at most
    ``POLISH_MAX_SIZE`` points in total is finished by Newton steps on the
    dual, which converge quadratically where plain Sinkhorn crawls (small
    epsilon, nearly tied assignments).
    """
    C = _check_finite(C)
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    n, m = C.shape
    eps = float(epsilon)
    f, g, iters, err = kernels.sinkhorn_loop(C, eps, float(tol), int(max_iter))
    if polish and err > tol and n + m <= POLISH_MAX_SIZE:
        f, g = _newton_polish(C, f, g, eps, tol)
        g = _col_update(C, f, eps)
    logP = _log_plan(C, f, g, eps)
    P = np.exp(logP)
    plan = TransportPlan(P)
    violation = plan.marginal_violation()
    transport = float(np.sum(P * C))
    ent = float(-np.sum(P * logP))
    return SinkhornSolution(
        plan=plan, f=f, g=g, epsilon=eps,
        transport_cost=transport, regularized_cost=transport - eps * ent,
        iterations=int(iters), converged=bool(violation <= tol), violation=violation,
    )


def exact_assignment(C) -> Assignment:
    C = _check_finite(C)
    if C.shape[0] != C.shape[1]:
        raise ValueError("exact assignment needs a square cost matrix")
    rows, cols = linear_sum_assignment(C)
    sigma = np.empty(C.shape[0], dtype=int)
    sigma[rows] = cols
    return Assignment(sigma, float(C[rows, cols].mean()))


def brute_force_assignment(C) -> Assignment:
    """Exhaustive minimum over all permutations; ties keep the first found."""
    C = _check_finite(C)
    n = C.shape[0]
    if C.shape[1] != n:
        raise ValueError("brute force assignment needs a square cost matrix")
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"n={n} too large for enumeration (max {BRUTE_FORCE_MAX_N})")
    idx = np.arange(n)
    perms = np.array(list(itertools.permutations(range(n))))
    totals = C[idx, perms].sum(axis=1)
    k = int(np.argmin(totals))
    return Assignment(perms[k].copy(), float(totals[k] / n))


def epsilon_rule(C) -> float:
    """``0.01 * mean(C)``, floored at 1e-12."""
    return max(0.01 * float(np.mean(C)), 1e-12)


def sinkhorn_divergence(X, Y, spec: CostSpec, epsilon: float,
                        tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> float:
    """Debiased entropic OT: ``W(X,Y) - (W(X,X) + W(Y,Y)) / 2``."""
    wxy = sinkhorn(cost_matrix(spec, X, Y), epsilon, tol, max_iter).regularized_cost
    wxx = sinkhorn(cost_matrix(spec, X, X), epsilon, tol, max_iter).regularized_cost
    wyy = sinkhorn(cost_matrix(spec, Y, Y), epsilon, tol, max_iter).regularized_cost
    return wxy - 0.5 * (wxx + wyy)


def entropic_barycentric_map(X, Y, epsilon: float | None = None,
                             tol: float = DEFAULT_TOL,
                             max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    """Row-barycentric projection of the quadratic entropic plan, ``n * P @ Y``
    with rows renormalised to absorb the marginal tolerance.

    ``epsilon=None`` applies :func:`epsilon_rule` to the cost matrix.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    C = cost_matrix(sqeuclidean(), X, Y)
    eps = epsilon_rule(C) if epsilon is None else epsilon
    P = sinkhorn(C, eps, tol, max_iter).P
    return (P @ Y) / P.sum(axis=1, keepdims=True)


def entropic_map(X, Y, epsilon: float | None = None, tol: float | None = None,
                 max_iter: int = DEFAULT_MAX_ITER):
    """Out-of-sample entropic map fitted on samples ``X -> Y`` (quadratic cost).

    Returns a callable sending ``x`` to the average of ``Y`` weighted by
    ``exp((g_j - c(x, y_j)) / eps)``, with ``g`` the fitted column potential.
    ``tol=None`` uses ``1e-2 / n``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    spec = sqeuclidean()
    C = cost_matrix(spec, X, Y)
    eps = epsilon_rule(C) if epsilon is None else float(epsilon)
    sol = sinkhorn(C, eps, 1e-2 / X.shape[0] if tol is None else tol, max_iter)
    g = sol.g

    def fn(Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        logits = (g[None, :] - cost_matrix(spec, Z, Y)) / eps
        logits -= logits.max(axis=1, keepdims=True)
        W = np.exp(logits)
        return (W @ Y) / W.sum(axis=1, keepdims=True)

    return fn
