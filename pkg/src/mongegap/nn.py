"""Fully connected maps with hand-written derivatives.

Parameters live in one flat vector. Layout, for layers ``l = 1..L``::

    W_1 (row-major, out x in), b_1, W_2, b_2, ..., W_L, b_L, [A (d x d), b_res]

Hidden layers apply the activation; the output layer is affine. The
optional residual adds ``A x + b_res`` to the output.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr

from .costs import (
    CostSpec,
    StructuredCostUnavailable,
    conjugate_gradient,
    conjugate_hessian_diag,
)

GELU = "gelu"
IDENTITY = "identity"

DIRECT = "direct"
STRUCTURED = "structured"
SPHERE = "sphere"

CHECKPOINT_VERSION = 1
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _pdf(z):
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def gelu(z):
    return z * ndtr(z)


def gelu_grad(z):
    return ndtr(z) + z * _pdf(z)


def gelu_grad2(z):
    return _pdf(z) * (2.0 - z * z)


def _act(kind, z):
    return gelu(z) if kind == GELU else z


def _act_derivs(kind, z):
    if kind == GELU:
        return gelu_grad(z), gelu_grad2(z)
    return np.ones_like(z), np.zeros_like(z)


@dataclass(frozen=True)
class MlpParams:
    layer_dims: tuple
    activation: str = GELU
    residual: bool = False
    theta: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        dims = tuple(int(k) for k in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError(f"bad layer dims {dims}")
        if self.activation not in (GELU, IDENTITY):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.residual and dims[0] != dims[-1]:
            raise ValueError("residual layer needs input dim == output dim")
        theta = np.zeros(self.size) if self.theta is None else np.asarray(self.theta, dtype=float)
        if theta.shape != (self.size,):
            raise ValueError(f"expected {self.size} parameters, got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("parameters must be finite")
        object.__setattr__(self, "theta", theta)

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def size(self) -> int:
        dims = self.layer_dims
        n = sum(dims[k + 1] * dims[k] + dims[k + 1] for k in range(len(dims) - 1))
        if self.residual:
            n += dims[0] * dims[0] + dims[0]
        return n

    def _slices(self):
        out, start, dims = [], 0, self.layer_dims
        for k in range(len(dims) - 1):
            nw = dims[k + 1] * dims[k]
            out.append(((start, start + nw), (dims[k + 1], dims[k])))
            start += nw
            out.append(((start, start + dims[k + 1]), (dims[k + 1],)))
            start += dims[k + 1]
        if self.residual:
            d = dims[0]
            out.append(((start, start + d * d), (d, d)))
            out.append(((start + d * d, start + d * d + d), (d,)))
        return out

    def unpack(self, vec=None):
        """Views ``(weights, biases, residual)`` into ``vec`` (default: theta)."""
        vec = self.theta if vec is None else vec
        views = [vec[a:b].reshape(shape) for (a, b), shape in self._slices()]
        L = self.n_layers
        weights, biases = views[0:2 * L:2], views[1:2 * L:2]
        residual = (views[2 * L], views[2 * L + 1]) if self.residual else None
        return weights, biases, residual

    def with_theta(self, theta) -> "MlpParams":
        return replace(self, theta=np.array(theta, dtype=float))


@dataclass(frozen=True)
class MapModel:
    net: MlpParams
    parameterization: str = DIRECT
    cost: CostSpec | None = None

    def __post_init__(self):
        if self.parameterization not in (DIRECT, STRUCTURED, SPHERE):
            raise ValueError(f"unknown parameterization {self.parameterization!r}")
        if self.parameterization == STRUCTURED and (self.cost is None or not self.cost.structured):
            raise StructuredCostUnavailable("structured maps need a sqeuclidean or powernorm cost")
        if self.parameterization != DIRECT and self.net.layer_dims[0] != self.net.layer_dims[-1]:
            raise ValueError("map output dim must equal input dim")

    def with_theta(self, theta) -> "MapModel":
        return replace(self, net=self.net.with_theta(theta))


def _rows(X, d):
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != d:
        raise ValueError(f"input dim {X.shape[1]} does not match network input {d}")
    return X, single


def _forward_cache(net: MlpParams, X):
    weights, biases, res = net.unpack()
    hs, zs = [X], []
    h = X
    for k, (W, b) in enumerate(zip(weights, biases)):
        z = h @ W.T + b
        zs.append(z)
        h = _act(net.activation, z) if k < net.n_layers - 1 else z
        hs.append(h)
    out = hs[-1]
    if res is not None:
        out = out + X @ res[0].T + res[1]
    return out, hs, zs


def forward(net: MlpParams, X) -> np.ndarray:
    X, single = _rows(X, net.layer_dims[0])
    out = _forward_cache(net, X)[0]
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite network output")
    return out[0] if single else out


def _net_backward(net: MlpParams, X, hs, zs, cot):
    """Gradient of sum_i <cot_i, F(x_i)> with respect to the flat parameters."""
    weights, _, res = net.unpack()
    grad = np.zeros(net.size)
    gW, gb, gres = net.unpack(grad)
    delta = cot
    for k in range(net.n_layers - 1, -1, -1):
        gW[k][...] = delta.T @ hs[k]
        gb[k][...] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ weights[k]) * _act_derivs(net.activation, zs[k - 1])[0]
    if res is not None:
        gres[0][...] = cot.T @ X
        gres[1][...] = cot.sum(axis=0)
    return grad


def apply_map(model: MapModel, X) -> np.ndarray:
    X, single = _rows(X, model.net.layer_dims[0])
    F = forward(model.net, X)
    T = _param_output(model, X, F)
    return T[0] if single else T


def _param_output(model, X, F):
    if model.parameterization == DIRECT:
        return F
    if model.parameterization == STRUCTURED:
        return X - conjugate_gradient(model.cost, F)
    norms = np.linalg.norm(F, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise FloatingPointError("zero-norm output under sphere normalisation")
    return F / norms


def pullback_to_net(model: MapModel, F, cot):
    """Map cotangents on ``T(X)`` to cotangents on ``F(X)``."""
    if model.parameterization == DIRECT:
        return cot
    if model.parameterization == STRUCTURED:
        return -conjugate_hessian_diag(model.cost, F) * cot
    norms = np.linalg.norm(F, axis=1, keepdims=True)
    T = F / norms
    return (cot - T * np.sum(T * cot, axis=1, keepdims=True)) / norms


def param_gradient(model: MapModel, X, cotangents) -> np.ndarray:
    """Gradient over the flat parameters of ``sum_i <cot_i, T(x_i)>``."""
    net = model.net
    X, _ = _rows(X, net.layer_dims[0])
    cot = np.atleast_2d(np.asarray(cotangents, dtype=float))
    F, hs, zs = _forward_cache(net, X)
    return _net_backward(net, X, hs, zs, pullback_to_net(model, F, cot))


def map_value_and_pullback(model: MapModel, X):
    """``T(X)`` plus a closure turning cotangents on it into a parameter gradient."""
    net = model.net
    X, _ = _rows(X, net.layer_dims[0])
    F, hs, zs = _forward_cache(net, X)
    T = _param_output(model, X, F)

    def pullback(cot):
        return _net_backward(net, X, hs, zs, pullback_to_net(model, F, cot))

    return T, pullback


def _jvp_rows(net, X, V, zs=None):
    weights, _, res = net.unpack()
    if zs is None:
        zs = _forward_cache(net, X)[2]
    t = V
    for k, W in enumerate(weights):
        t = t @ W.T
        if k < net.n_layers - 1:
            t = _act_derivs(net.activation, zs[k])[0] * t
    if res is not None:
        t = t + V @ res[0].T
    return t


def _vjp_rows(net, X, U, zs=None):
    weights, _, res = net.unpack()
    if zs is None:
        zs = _forward_cache(net, X)[2]
    t = U
    for k in range(net.n_layers - 1, -1, -1):
        t = t @ weights[k]
        if k > 0:
            t = _act_derivs(net.activation, zs[k - 1])[0] * t
    if res is not None:
        t = t + U @ res[0]
    return t


def jvp(net: MlpParams, x, v) -> np.ndarray:
    """``Jac F(x) v`` (forward mode); rows of ``x`` and ``v`` are paired."""
    X, single = _rows(x, net.layer_dims[0])
    V, _ = _rows(v, net.layer_dims[0])
    out = _jvp_rows(net, X, V)
    return out[0] if single else out


def vjp(net: MlpParams, x, u) -> np.ndarray:
    """``Jac F(x)^T u`` (reverse mode over the input)."""
    X, single = _rows(x, net.layer_dims[0])
    U, _ = _rows(u, net.layer_dims[-1])
    out = _vjp_rows(net, X, U)
    return out[0] if single else out


def _pairs(X, V):
    n, m = X.shape[0], V.shape[0]
    return np.repeat(X, m, axis=0), np.tile(V, (n, 1))


def asymmetry_objective(net: MlpParams, X, V) -> float:
    """``sum_ij ||jvp(x_i, v_j) - vjp(x_i, v_j)||^2``."""
    Xr, Vr = _pairs(np.atleast_2d(X), np.atleast_2d(V))
    _, _, zs = _forward_cache(net, Xr)
    r = _jvp_rows(net, Xr, Vr, zs) - _vjp_rows(net, Xr, Vr, zs)
    return float(np.sum(r * r))


def second_order_param_gradient(net: MlpParams, X, V, scale: float = 1.0):
    """Value and parameter gradient of ``scale * asymmetry_objective(net, X, V)``.

    Reverse mode over the recorded primal, JVP and VJP sweeps.
    """
    if net.layer_dims[0] != net.layer_dims[-1]:
        raise ValueError("asymmetry needs a square Jacobian")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    Xr, Vr = _pairs(X, V)
    weights, _, res = net.unpack()
    L = net.n_layers
    _, hs, zs = _forward_cache(net, Xr)
    ders = [_act_derivs(net.activation, z) for z in zs[:-1]]
    s1 = [d[0] for d in ders]
    s2 = [d[1] for d in ders]

    # forward tangents: zdot[k] = pre-activation tangent of layer k, hdot[k] = its input
    hdot, zdot = [Vr], []
    t = Vr
    for k in range(L):
        z = t @ weights[k].T
        zdot.append(z)
        t = s1[k] * z if k < L - 1 else z
        hdot.append(t)
    jv = zdot[-1] + (Vr @ res[0].T if res is not None else 0.0)

    # reverse sweep with u = v: gz[k] = cotangent at pre-activation k
    gz = [None] * L
    gz[L - 1] = Vr
    gh = [None] * L
    for k in range(L - 1, 0, -1):
        gh[k - 1] = gz[k] @ weights[k]
        gz[k - 1] = s1[k - 1] * gh[k - 1]
    vj = gz[0] @ weights[0] + (Vr @ res[0] if res is not None else 0.0)

    r = jv - vj
    value = scale * float(np.sum(r * r))
    rbar = 2.0 * scale * r

    grad = np.zeros(net.size)
    gW, gb, gres = net.unpack(grad)
    s1bar = [np.zeros_like(s) for s in s1]

    # through the JVP chain
    zbar = rbar
    for k in range(L - 1, -1, -1):
        gW[k] += zbar.T @ hdot[k]
        if k > 0:
            hbar = zbar @ weights[k]
            s1bar[k - 1] += hbar * zdot[k - 1]
            zbar = s1[k - 1] * hbar

    # through the VJP chain, cotangent -rbar on its output
    q = -rbar
    gW[0] += gz[0].T @ q
    gzbar = q @ weights[0].T
    for k in range(0, L - 1):
        s1bar[k] += gzbar * gh[k]
        ghbar = s1[k] * gzbar
        gW[k + 1] += gz[k + 1].T @ ghbar
        gzbar = ghbar @ weights[k + 1].T

    if res is not None:
        gres[0][...] += rbar.T @ Vr - Vr.T @ rbar

    # activation derivatives depend on the primal pre-activations
    zbar = None
    for k in range(L - 2, -1, -1):
        zk = s1bar[k] * s2[k]
        if zbar is not None:
            zk = zk + zbar
        gW[k] += zk.T @ hs[k]
        gb[k] += zk.sum(axis=0)
        if k > 0:
            zbar = (zk @ weights[k]) * s1[k - 1]
    return value, grad


def save_checkpoint(path, model: MapModel) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "layer_dims": list(model.net.layer_dims),
        "activation": model.net.activation,
        "residual": model.net.residual,
        "parameterization": model.parameterization,
        "cost": None if model.cost is None else str(model.cost),
        "theta": [float(v) for v in model.net.theta],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path) -> MapModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    net = MlpParams(tuple(doc["layer_dims"]), doc["activation"], doc["residual"],
                    np.array(doc["theta"], dtype=float))
    cost = None if doc["cost"] is None else CostSpec.parse(doc["cost"])
    return MapModel(net, doc["parameterization"], cost)
