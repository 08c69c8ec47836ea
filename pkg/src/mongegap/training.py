"""Fitting loss + Monge gap + conservativity, trained with Adam.

All Sinkhorn-valued terms are differentiated with the plan frozen at its
optimum. The epsilon picked by the rule for each term is treated as a
constant within a step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nn
from .costs import CostSpec, contract_grad_x, contract_grad_y, cost_matrix, sqeuclidean
from .initializers import init_model
from .monge_gap import gap_cotangents, monge_gap
from .ot import epsilon_rule, sinkhorn, sinkhorn_divergence
from .regularizers import conservativity_gradient, conservativity_hutchinson, probe_count

log = logging.getLogger(__name__)

WASSERSTEIN = "wasserstein"
DIVERGENCE = "divergence"
EVAL_EPSILON = 0.1


def default_lambdas(d: int):
    """Regularisation weights (monge gap, conservativity) by dimension."""
    return (1.0, 0.01) if d <= 64 else (10.0, 0.1)


@dataclass(frozen=True)
class TrainConfig:
    lambda_mg: float = 1.0
    lambda_cons: float = 0.01
    batch_size: int = 256
    iterations: int = 1000
    lr_init: float = 0.01
    lr_end: float = 1e-5
    schedule_power: float = 1.5
    seed: int = 0
    fitting_loss: str = WASSERSTEIN
    cost: str = "sqeuclidean"
    parameterization: str = nn.STRUCTURED
    init: str = "identity"
    hidden: tuple = (128, 64, 64)
    activation: str = nn.GELU
    reference: str = "source"
    # Sinkhorn stops when the marginal violation is below sinkhorn_rel_tol / n
    sinkhorn_rel_tol: float = 1e-2
    sinkhorn_max_iter: int = 500
    # finish unconverged small solves with Newton steps (slower, exact)
    sinkhorn_polish: bool = False

    def __post_init__(self):
        if self.lambda_mg < 0 or self.lambda_cons < 0:
            raise ValueError("regularisation weights must be non-negative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if not self.lr_init >= self.lr_end > 0:
            raise ValueError("need lr_init >= lr_end > 0")
        if self.fitting_loss not in (WASSERSTEIN, DIVERGENCE):
            raise ValueError(f"unknown fitting loss {self.fitting_loss!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        spec = self.cost_spec
        if spec.on_sphere and self.parameterization != nn.SPHERE:
            raise ValueError("sphere costs need the sphere parameterization")

    @property
    def cost_spec(self) -> CostSpec:
        return CostSpec.parse(self.cost)

    def to_dict(self):
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out


@dataclass(frozen=True)
class LossBreakdown:
    fitting: float
    monge_gap: float
    conservativity: float
    total: float
    step: int = 0
    epsilon_fit: float = 0.0
    epsilon_mg: float = 0.0
    sinkhorn_iters: int = 0
    converged: bool = True
    aborted: bool = False

    def to_dict(self):
        return asdict(self)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size))

    def update(self, theta, grad, lr):
        self.step += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.step)
        vhat = self.v / (1 - self.beta2 ** self.step)
        return theta - lr * mhat / (np.sqrt(vhat) + self.eps)


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Polynomial decay from ``lr_init`` to ``lr_end`` over ``cfg.iterations``."""
    frac = min(max(step / cfg.iterations, 0.0), 1.0) if cfg.iterations > 0 else 1.0
    return (cfg.lr_init - cfg.lr_end) * (1.0 - frac) ** cfg.schedule_power + cfg.lr_end


@dataclass
class _Terms:
    breakdown: LossBreakdown
    grad: np.ndarray | None


def _solve(C, eps, cfg):
    return sinkhorn(C, eps, cfg.sinkhorn_rel_tol / C.shape[0], cfg.sinkhorn_max_iter,
                    cfg.sinkhorn_polish)


def _objective(model: nn.MapModel, Xb, Yb, cfg: TrainConfig, Rb=None, probes=None,
               epsilons=None, need_grad=True) -> _Terms:
    spec = cfg.cost_spec
    sq = sqeuclidean()
    epsilons = dict(epsilons or {})
    TX, pull_x = nn.map_value_and_pullback(model, Xb)
    cot_x = np.zeros_like(TX)
    iters, converged = 0, True

    # fitting term between T#mu and nu (quadratic cost)
    C = cost_matrix(sq, TX, Yb)
    eps_fit = epsilons.setdefault("fit", epsilon_rule(C))
    sol = _solve(C, eps_fit, cfg)
    iters += sol.iterations
    converged &= sol.converged
    fitting = sol.regularized_cost
    if need_grad:
        cot_x += contract_grad_x(sq, TX, Yb, sol.P)
    if cfg.fitting_loss == DIVERGENCE:
        sxx = _solve(cost_matrix(sq, TX, TX), eps_fit, cfg)
        syy = _solve(cost_matrix(sq, Yb, Yb), eps_fit, cfg)
        iters += sxx.iterations + syy.iterations
        fitting -= 0.5 * (sxx.regularized_cost + syy.regularized_cost)
        if need_grad:
            cot_x -= 0.5 * (contract_grad_x(sq, TX, TX, sxx.P) + contract_grad_y(sq, TX, TX, sxx.P))

    # monge gap on the reference batch
    grad_extra = None
    if Rb is None:
        R, TR = Xb, TX
    else:
        R = Rb
        TR, pull_r = nn.map_value_and_pullback(model, Rb)
    C_mg = cost_matrix(spec, R, TR)
    eps_mg = epsilons.setdefault("mg", epsilon_rule(C_mg))
    mg = monge_gap(R, TR, spec, eps_mg, cfg.sinkhorn_rel_tol / R.shape[0], cfg.sinkhorn_max_iter,
                   cfg.sinkhorn_polish)
    iters += mg.solution.iterations
    converged &= mg.solution.converged
    if need_grad and cfg.lambda_mg > 0:
        cot_mg = cfg.lambda_mg * gap_cotangents(R, TR, spec, mg.solution)
        if Rb is None:
            cot_x += cot_mg
        else:
            grad_extra = pull_r(cot_mg)

    grad = pull_x(cot_x) if need_grad else None
    if grad_extra is not None:
        grad = grad + grad_extra

    # conservativity of the inner field, structured maps only
    cons = 0.0
    if model.parameterization == nn.STRUCTURED:
        if probes is None:
            raise ValueError("structured maps need Hutchinson probes")
        if need_grad and cfg.lambda_cons > 0:
            cval, cgrad = conservativity_gradient(model.net, R, probes)
            grad = grad + cfg.lambda_cons * cgrad
        else:
            cval = conservativity_hutchinson(model.net, R, probes)
        cons = cval.value

    total = fitting + cfg.lambda_mg * mg.gap + cfg.lambda_cons * cons
    bd = LossBreakdown(fitting=fitting, monge_gap=mg.gap, conservativity=cons, total=total,
                       epsilon_fit=eps_fit, epsilon_mg=eps_mg, sinkhorn_iters=iters,
                       converged=bool(converged))
    return _Terms(bd, grad)


def total_loss(model: nn.MapModel, Xb, Yb, cfg: TrainConfig, Rb=None, probes=None,
               epsilons=None) -> LossBreakdown:
    """Loss terms on one batch. ``epsilons`` may pin ``{"fit": .., "mg": ..}``."""
    return _objective(model, Xb, Yb, cfg, Rb, probes, epsilons, need_grad=False).breakdown


def loss_and_grad(model: nn.MapModel, Xb, Yb, cfg: TrainConfig, Rb=None, probes=None,
                  epsilons=None):
    terms = _objective(model, Xb, Yb, cfg, Rb, probes, epsilons, need_grad=True)
    return terms.breakdown, terms.grad


@dataclass
class Pools:
    X: np.ndarray
    Y: np.ndarray
    R: np.ndarray | None = None


def draw_batch(pools: Pools, cfg: TrainConfig, step: int):
    """Batches (with replacement) and probes for ``step``; counter-seeded."""
    rng = np.random.default_rng([cfg.seed, 2, step])
    B = cfg.batch_size
    Xb = pools.X[rng.integers(0, pools.X.shape[0], size=B)]
    Yb = pools.Y[rng.integers(0, pools.Y.shape[0], size=B)]
    Rb = None if pools.R is None else pools.R[rng.integers(0, pools.R.shape[0], size=B)]
    d = pools.X.shape[1]
    probes = rng.normal(size=(probe_count(d), d))
    return Xb, Yb, Rb, probes


def train_step(model: nn.MapModel, state: AdamState, pools: Pools, cfg: TrainConfig):
    """One Adam step at ``state.step``; returns ``(model, LossBreakdown)``."""
    step = state.step
    Xb, Yb, Rb, probes = draw_batch(pools, cfg, step)
    bd, grad = loss_and_grad(model, Xb, Yb, cfg, Rb, probes)
    bd = replace(bd, step=step)
    if not np.all(np.isfinite(grad)) or not math.isfinite(bd.total):
        log.warning("step %d: non-finite loss or gradient, update skipped", step)
        state.step += 1
        return model, replace(bd, aborted=True)
    lr = lr_schedule(step, cfg)
    return model.with_theta(state.update(model.net.theta, grad, lr)), bd


def build_model(cfg: TrainConfig, X, Y) -> nn.MapModel:
    d = X.shape[1]
    dims = (d, *cfg.hidden, d)
    return init_model(cfg.init, cfg.parameterization, cfg.cost_spec, dims, cfg.seed, X, Y,
                      cfg.activation)


def train(cfg: TrainConfig, X_train, Y_train, R_train=None, model=None, callback=None):
    """Full training run; ``callback(step, model, breakdown)`` after each step."""
    X_train = np.atleast_2d(np.asarray(X_train, dtype=float))
    Y_train = np.atleast_2d(np.asarray(Y_train, dtype=float))
    if model is None:
        model = build_model(cfg, X_train, Y_train)
    pools = Pools(X_train, Y_train, R_train)
    state = AdamState.zeros(model.net.size)
    history = []
    for _ in range(cfg.iterations):
        model, bd = train_step(model, state, pools, cfg)
        history.append(bd)
        if callback is not None:
            callback(bd.step + 1, model, bd)
    return model, history


def unexplained_variance(T_hat, T_star, Y) -> float:
    """``100 * mean ||T_hat - T_star||^2 / total variance of Y``."""
    T_hat = np.atleast_2d(T_hat)
    T_star = np.atleast_2d(T_star)
    Y = np.atleast_2d(Y)
    var = float(np.sum(np.var(Y, axis=0)))
    return 100.0 * float(np.mean(np.sum((T_hat - T_star) ** 2, axis=1))) / var


def as_map(model):
    """Callable ``X -> T(X)`` from a model or an already callable map."""
    if isinstance(model, nn.MapModel):
        return lambda X: nn.apply_map(model, X)
    return model


def evaluate(model, X_test, Y_test, ground_truth=None, epsilon: float = EVAL_EPSILON,
             max_points: int | None = 2048) -> dict:
    """Held-out metrics: quadratic Sinkhorn divergence and, if known, L2-UV.

    The divergence uses at most ``max_points`` of each test set.
    """
    fn = as_map(model)
    X_test = np.atleast_2d(X_test)
    Y_test = np.atleast_2d(Y_test)
    TX = fn(X_test)
    k = None if max_points is None else max_points
    out = {"sinkhorn_div": float(sinkhorn_divergence(TX[:k], Y_test[:k], sqeuclidean(), epsilon))}
    if ground_truth is not None:
        out["l2_uv"] = unexplained_variance(TX, ground_truth(X_test), Y_test)
    return out


def constant_baseline(Y_train):
    """Map sending every input to the mean of the training targets."""
    mean = np.atleast_2d(Y_train).mean(axis=0)

    def fn(X):
        return np.tile(mean, (np.atleast_2d(X).shape[0], 1))

    return fn
