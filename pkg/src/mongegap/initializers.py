"""Identity and Gaussian initialisation of neural maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .costs import SQEUCLIDEAN

# inner weights are Glorot-scaled and then damped so the residual dominates
INIT_DAMPING = 1e-2
_SYM_TOL = 1e-8
_PSD_TOL = 1e-10
_INV_FLOOR = 1e-12


@dataclass(frozen=True)
class GaussianMoments:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match the mean")
        cov = 0.5 * (cov + cov.T)
        w, U = np.linalg.eigh(cov)
        if w.min() < -_PSD_TOL * max(1.0, abs(w).max()):
            raise ValueError("covariance is not positive semi-definite")
        if w.min() < 0:
            cov = (U * np.clip(w, 0.0, None)) @ U.T
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @classmethod
    def from_samples(cls, X) -> "GaussianMoments":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return cls(X.mean(axis=0), np.atleast_2d(np.cov(X, rowvar=False, ddof=1)))


def _eig_sym(A):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    scale = max(1.0, np.abs(A).max())
    if np.abs(A - A.T).max() > _SYM_TOL * scale:
        raise ValueError("matrix is not symmetric")
    w, U = np.linalg.eigh(0.5 * (A + A.T))
    if w.min() < -_PSD_TOL * max(scale, abs(w).max()):
        raise ValueError("matrix is indefinite")
    return np.clip(w, 0.0, None), U


def psd_sqrt(A) -> np.ndarray:
    w, U = _eig_sym(A)
    S = (U * np.sqrt(w)) @ U.T
    return 0.5 * (S + S.T)


def psd_inv_sqrt(A) -> np.ndarray:
    w, U = _eig_sym(A)
    if w.min() < _INV_FLOOR:
        w = w + _INV_FLOOR
    S = (U / np.sqrt(w)) @ U.T
    return 0.5 * (S + S.T)


def gaussian_ot_map(src: GaussianMoments, tgt: GaussianMoments):
    """Affine quadratic-cost OT map ``x -> A x + b`` between two Gaussians."""
    s_half = psd_sqrt(src.covariance)
    s_inv_half = psd_inv_sqrt(src.covariance)
    mid = psd_sqrt(s_half @ tgt.covariance @ s_half)
    A = s_inv_half @ mid @ s_inv_half
    A = 0.5 * (A + A.T)
    if not np.all(np.isfinite(A)):
        raise np.linalg.LinAlgError("singular source covariance")
    return A, tgt.mean - A @ src.mean


def _glorot(rng, net: nn.MlpParams, damping: float):
    theta = np.zeros(net.size)
    weights, _, _ = net.unpack(theta)
    for W in weights:
        fan_out, fan_in = W.shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        W[...] = damping * rng.uniform(-limit, limit, size=W.shape)
    return theta


def random_init(dims, seed: int, activation: str = nn.GELU) -> nn.MlpParams:
    """Undamped Glorot weights, zero biases, no residual."""
    net = nn.MlpParams(tuple(dims), activation, residual=False)
    return net.with_theta(_glorot(np.random.default_rng(seed), net, 1.0))


def identity_init(dims, seed: int, parameterization: str = nn.DIRECT,
                  activation: str = nn.GELU) -> nn.MlpParams:
    """Network whose map is close to the identity.

    Direct and sphere maps get a residual ``(I, 0)``; structured maps
    ``x - grad h*(F(x))`` only need ``F`` close to zero, so no residual.
    """
    residual = parameterization != nn.STRUCTURED
    net = nn.MlpParams(tuple(dims), activation, residual=residual)
    theta = _glorot(np.random.default_rng(seed), net, INIT_DAMPING)
    if residual:
        _, _, (A, _) = net.unpack(theta)
        A[...] = np.eye(A.shape[0])
    return net.with_theta(theta)


def affine_residual_init(dims, seed: int, A, b, activation: str = nn.GELU) -> nn.MlpParams:
    net = nn.MlpParams(tuple(dims), activation, residual=True)
    theta = _glorot(np.random.default_rng(seed), net, INIT_DAMPING)
    _, _, (RA, Rb) = net.unpack(theta)
    RA[...] = A
    Rb[...] = b
    return net.with_theta(theta)


def gaussian_init(X, Y, dims, seed: int, activation: str = nn.GELU,
                  src: GaussianMoments | None = None,
                  tgt: GaussianMoments | None = None) -> nn.MlpParams:
    """Structured quadratic map ``T = Id - F`` starting at the Gaussian OT map.

    ``F`` gets the residual ``(I - A, -b)`` so that ``x - F(x) ~ A x + b``.
    Moments are estimated from ``X`` and ``Y`` unless given.
    """
    src = GaussianMoments.from_samples(X) if src is None else src
    tgt = GaussianMoments.from_samples(Y) if tgt is None else tgt
    A, b = gaussian_ot_map(src, tgt)
    return affine_residual_init(dims, seed, np.eye(A.shape[0]) - A, -b, activation)


def init_model(scheme: str, parameterization: str, cost, dims, seed: int, X=None, Y=None,
               activation: str = nn.GELU) -> nn.MapModel:
    """Build a :class:`MapModel` from an init scheme name."""
    if scheme == "identity":
        net = identity_init(dims, seed, parameterization, activation)
    elif scheme == "random":
        net = random_init(dims, seed, activation)
        if parameterization != nn.STRUCTURED and dims[0] == dims[-1]:
            # keep the parameter layout uniform across schemes
            net = nn.MlpParams(net.layer_dims, activation, True,
                               np.concatenate([net.theta, np.zeros(dims[0] * dims[0] + dims[0])]))
    elif scheme == "gaussian":
        if parameterization != nn.STRUCTURED or cost.family != SQEUCLIDEAN:
            raise ValueError("gaussian init applies to structured sqeuclidean maps only")
        net = gaussian_init(X, Y, dims, seed, activation)
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return nn.MapModel(net, parameterization, cost if parameterization == nn.STRUCTURED else None)
