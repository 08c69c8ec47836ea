"""Seeded synthetic source/target measures.

Kinds (``DatasetSpec.kind``) and their parameters:

* ``gaussian``: ``d``. Random Gaussian pair with the affine OT map as
  ground truth.
* ``mixture``: ``d``, ``k``. Pair of k-component Gaussian mixtures.
* ``toy2d``: ``name`` in ``moons``, ``annulus``, ``crossing``.
* ``sphere``: ``name`` in ``bumps``, ``band``. Points on the 2-sphere.
* ``line1d``: ``name`` in ``shift``, ``split``. 1-d measures.

Training and test draws come from separate child streams of the seed, so
they never share samples.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from .initializers import GaussianMoments, gaussian_ot_map

KINDS = ("gaussian", "mixture", "toy2d", "sphere", "line1d")
TOY2D = ("moons", "annulus", "crossing")
SPHERES = ("bumps", "band")
LINES = ("shift", "split")


@dataclass(frozen=True)
class GaussianPair:
    src: GaussianMoments
    tgt: GaussianMoments
    A: np.ndarray
    b: np.ndarray

    def ground_truth(self, X):
        return np.atleast_2d(X) @ self.A.T + self.b


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "gaussian"
    d: int = 2
    k: int = 3
    name: str = ""
    seed: int = 0
    n_train: int = 2048
    n_test: int = 2048

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.n_test < 2 or self.n_train < 2:
            raise ValueError("need at least 2 train and 2 test samples")

    def to_dict(self):
        return asdict(self)


@dataclass
class Samples:
    X_train: np.ndarray
    X_test: np.ndarray
    Y_train: np.ndarray
    Y_test: np.ndarray
    ground_truth: object = None
    extra: dict = field(default_factory=dict)


def _random_spd(rng, d):
    B = rng.normal(size=(d, d)) / np.sqrt(d)
    return B.T @ B + 0.1 * np.eye(d)


def gaussian_pair(d: int, seed: int) -> GaussianPair:
    rng = np.random.default_rng([seed, 0])
    src = GaussianMoments(rng.normal(size=d), _random_spd(rng, d))
    tgt = GaussianMoments(rng.normal(size=d), _random_spd(rng, d))
    A, b = gaussian_ot_map(src, tgt)
    return GaussianPair(src, tgt, A, b)


def _draw_gaussian(rng, g: GaussianMoments, n):
    L = np.linalg.cholesky(g.covariance + 1e-12 * np.eye(g.mean.size))
    return g.mean + rng.normal(size=(n, g.mean.size)) @ L.T


def _mixture(rng, d, k):
    means = 2.0 * rng.normal(size=(k, d))
    covs = np.stack([_random_spd(rng, d) * 0.3 for _ in range(k)])
    return means, covs


def _draw_mixture(rng, comp, n):
    means, covs = comp
    labels = rng.integers(0, means.shape[0], size=n)
    out = np.empty((n, means.shape[1]))
    for c in range(means.shape[0]):
        idx = np.flatnonzero(labels == c)
        L = np.linalg.cholesky(covs[c])
        out[idx] = means[c] + rng.normal(size=(idx.size, means.shape[1])) @ L.T
    return out


def _moons(rng, n, upper):
    t = rng.uniform(0, np.pi, size=n)
    if upper:
        pts = np.c_[np.cos(t), np.sin(t)]
    else:
        pts = np.c_[1 - np.cos(t), 0.5 - np.sin(t)]
    return pts + 0.05 * rng.normal(size=(n, 2))


def _annulus(rng, n, angle):
    r = rng.uniform(1.0, 1.5, size=n)
    t = rng.uniform(0, 2 * np.pi, size=n)
    # the density is modulated in angle so the rotation is visible
    keep = rng.uniform(size=n) < 0.5 * (1 + np.cos(t - angle))
    t = np.where(keep, t, angle + rng.normal(scale=0.3, size=n))
    return np.c_[r * np.cos(t), r * np.sin(t)]


def _crossing(rng, n, source):
    # two clusters stacked vertically; the target swaps them across a gap
    half = rng.integers(0, 2, size=n)
    x = np.where(half == 0, -1.5, 1.5) if source else np.where(half == 0, 1.5, -1.5)
    y = np.where(half == 0, 0.75, -0.75)
    return np.c_[x + 0.25 * rng.normal(size=n), y + 0.25 * rng.normal(size=n)]


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _sphere(rng, name, n, source):
    if name == "bumps":
        centers = _unit(np.array([[1.0, 0.2, 0.3], [0.0, 1.0, 0.2]] if source
                                 else [[0.2, 0.2, 1.0], [-0.6, 0.6, 0.5]]))
        c = centers[rng.integers(0, 2, size=n)]
        return _unit(c + 0.25 * rng.normal(size=(n, 3)))
    # band: a latitude band mapped to a tilted band
    z = rng.uniform(-0.3, 0.3, size=n) + (0.0 if source else 0.5)
    t = rng.uniform(0, 2 * np.pi, size=n)
    r = np.sqrt(np.clip(1 - z * z, 0, None))
    return _unit(np.c_[r * np.cos(t), r * np.sin(t), z])


def _line(rng, name, n, source):
    if name == "shift":
        return (rng.normal(size=n) if source else 0.5 * rng.normal(size=n) + 3.0)[:, None]
    side = rng.integers(0, 2, size=n)
    if source:
        return rng.uniform(-1.0, 1.0, size=n)[:, None]
    return (np.where(side == 0, -2.0, 2.0) + 0.3 * rng.normal(size=n))[:, None]


def _draw(spec: DatasetSpec, rng, n, source, params):
    if spec.kind == "gaussian":
        return _draw_gaussian(rng, params.src if source else params.tgt, n)
    if spec.kind == "mixture":
        return _draw_mixture(rng, params[0] if source else params[1], n)
    if spec.kind == "toy2d":
        if spec.name == "moons":
            return _moons(rng, n, source)
        if spec.name == "annulus":
            return _annulus(rng, n, 0.0 if source else np.pi / 2)
        return _crossing(rng, n, source)
    if spec.kind == "sphere":
        return _sphere(rng, spec.name, n, source)
    return _line(rng, spec.name, n, source)


def sample(spec: DatasetSpec) -> Samples:
    """Draw train/test pools for both measures."""
    params = None
    truth = None
    if spec.kind == "gaussian":
        params = gaussian_pair(spec.d, spec.seed)
        truth = params.ground_truth
    elif spec.kind == "mixture":
        prng = np.random.default_rng([spec.seed, 0])
        params = (_mixture(prng, spec.d, spec.k), _mixture(prng, spec.d, spec.k))
    else:
        names = {"toy2d": TOY2D, "sphere": SPHERES, "line1d": LINES}[spec.kind]
        if spec.name not in names:
            raise ValueError(f"unknown {spec.kind} dataset {spec.name!r}; choose from {names}")
    streams = [np.random.default_rng([spec.seed, 1, s]) for s in range(4)]
    out = Samples(
        X_train=_draw(spec, streams[0], spec.n_train, True, params),
        X_test=_draw(spec, streams[1], spec.n_test, True, params),
        Y_train=_draw(spec, streams[2], spec.n_train, False, params),
        Y_test=_draw(spec, streams[3], spec.n_test, False, params),
        ground_truth=truth,
    )
    if spec.kind == "gaussian":
        out.extra["pair"] = params
    return out


def monotone_rearrangement_1d(X, Y) -> np.ndarray:
    """Image of each ``X[i]`` under the order-preserving pairing with ``Y``."""
    x = np.asarray(X, dtype=float).reshape(-1)
    y = np.asarray(Y, dtype=float).reshape(-1)
    if x.size != y.size:
        raise ValueError("monotone rearrangement needs equal sample counts")
    out = np.empty_like(x)
    out[np.argsort(x, kind="stable")] = np.sort(y, kind="stable")
    return out


def export_csv(path, X) -> None:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{k}" for k in range(X.shape[1])])
        for row in X:
            w.writerow([repr(float(v)) for v in row])
