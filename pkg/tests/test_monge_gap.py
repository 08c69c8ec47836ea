import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mongegap import nn
from mongegap.costs import CostSpec, cost_matrix, eval_cost
from mongegap.initializers import identity_init
from mongegap.monge_gap import (
    danskin_coefficients,
    gap_cotangents,
    monge_gap,
    monge_gap_gradient,
    monge_gap_permutation,
)
from mongegap.ot import sinkhorn

SQ = CostSpec("sqeuclidean")
COSTS = [SQ, CostSpec("powernorm", 1.5), CostSpec("euclidean")]


def test_swap_example():
    X = np.array([[0.0], [1.0]])
    v = monge_gap(X, X[::-1], SQ)
    assert v.displacement == 0.5
    assert v.ot_cost == 0.0
    assert v.gap == 0.5


def test_identity_has_zero_gap():
    X = np.random.default_rng(0).normal(size=(6, 2))
    for spec in COSTS:
        assert abs(monge_gap(X, X, spec).gap) <= 1e-12


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 6), st.integers(1, 3), st.sampled_from(range(3)), st.integers(0, 2**31))
def test_exact_matches_enumeration(n, d, k, seed):
    rng = np.random.default_rng(seed)
    X, TX = rng.normal(size=(n, d)), rng.normal(size=(n, d))
    a = monge_gap(X, TX, COSTS[k])
    b = monge_gap_permutation(X, TX, COSTS[k])
    assert a.gap == pytest.approx(b.gap, abs=1e-9)
    assert a.gap >= -1e-12


def test_epsilon_rule_and_ordering():
    rng = np.random.default_rng(1)
    X, TX = rng.normal(size=(8, 2)), rng.normal(size=(8, 2))
    g0 = monge_gap(X, TX, SQ, 0.0).gap
    v = monge_gap(X, TX, SQ, None, tol=1e-10, max_iter=100000)
    assert v.epsilon == pytest.approx(0.01 * cost_matrix(SQ, X, TX).mean())
    assert v.gap > g0


def test_gap_rejects_mismatched_sizes():
    with pytest.raises(ValueError):
        monge_gap(np.zeros((3, 1)), np.zeros((2, 1)), SQ)
    with pytest.raises(ValueError):
        monge_gap(np.zeros((3, 1)), np.zeros((3, 1)), SQ, epsilon=-1.0)


def test_danskin_coefficients_rows_and_columns_sum_to_zero():
    rng = np.random.default_rng(2)
    C = cost_matrix(SQ, rng.normal(size=(7, 2)), rng.normal(size=(7, 2)))
    sol = sinkhorn(C, 0.1, tol=1e-12, max_iter=100000)
    D = danskin_coefficients(sol)
    np.testing.assert_allclose(D.sum(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(D.sum(axis=1), 0.0, atol=1e-11)


@pytest.mark.parametrize("spec", COSTS, ids=str)
def test_gap_cotangents_match_finite_differences(spec):
    rng = np.random.default_rng(3)
    n, d, eps = 6, 2, 1.0
    X, TX = rng.normal(size=(n, d)), rng.normal(size=(n, d))
    sol = sinkhorn(cost_matrix(spec, X, TX), eps, tol=1e-13, max_iter=200000)
    G = gap_cotangents(X, TX, spec, sol)
    h = 1e-6
    for j in range(n):
        for k in range(d):
            P, M = TX.copy(), TX.copy()
            P[j, k] += h
            M[j, k] -= h
            fd = (monge_gap(X, P, spec, eps, 1e-13, 200000).gap
                  - monge_gap(X, M, spec, eps, 1e-13, 200000).gap) / (2 * h)
            assert G[j, k] == pytest.approx(fd, abs=1e-6)


def test_gap_gradient_through_network():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(6, 2))
    net = identity_init((2, 8, 2), 0)
    model = nn.MapModel(net.with_theta(net.theta + 0.3 * rng.normal(size=net.size)))
    eps = 0.3
    val, grad = monge_gap_gradient(X, model, SQ, eps, tol=1e-13, max_iter=200000)
    assert val.epsilon == eps
    h = 1e-6
    for k in rng.choice(grad.size, 10, replace=False):
        e = np.zeros(grad.size)
        e[k] = h
        plus = monge_gap(X, nn.apply_map(model.with_theta(model.net.theta + e), X), SQ, eps, 1e-13, 200000)
        minus = monge_gap(X, nn.apply_map(model.with_theta(model.net.theta - e), X), SQ, eps, 1e-13, 200000)
        assert grad[k] == pytest.approx((plus.gap - minus.gap) / (2 * h), abs=1e-6)


def test_gap_gradient_needs_positive_epsilon():
    model = nn.MapModel(identity_init((1, 4, 1), 0))
    with pytest.raises(ValueError):
        monge_gap_gradient(np.zeros((3, 1)), model, SQ, 0.0)


def test_displacement_is_mean_diagonal_cost():
    rng = np.random.default_rng(5)
    X, TX = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    for spec in COSTS:
        v = monge_gap(X, TX, spec)
        assert v.displacement == pytest.approx(np.mean([eval_cost(spec, x, t) for x, t in zip(X, TX)]))
