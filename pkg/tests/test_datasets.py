import csv

import numpy as np
import pytest

from mongegap.datasets import (
    DatasetSpec,
    export_csv,
    gaussian_pair,
    monotone_rearrangement_1d,
    sample,
)

ALL = [
    DatasetSpec("gaussian", d=3),
    DatasetSpec("mixture", d=2, k=3),
    DatasetSpec("toy2d", name="moons"),
    DatasetSpec("toy2d", name="annulus"),
    DatasetSpec("toy2d", name="crossing"),
    DatasetSpec("sphere", name="bumps"),
    DatasetSpec("sphere", name="band"),
    DatasetSpec("line1d", name="shift"),
    DatasetSpec("line1d", name="split"),
]


@pytest.mark.parametrize("spec", ALL, ids=lambda s: f"{s.kind}-{s.name}")
def test_shapes_determinism_and_disjoint_draws(spec):
    spec = DatasetSpec(**{**spec.to_dict(), "n_train": 200, "n_test": 100})
    a, b = sample(spec), sample(spec)
    np.testing.assert_array_equal(a.X_train, b.X_train)
    np.testing.assert_array_equal(a.Y_test, b.Y_test)
    assert a.X_train.shape[0] == 200 and a.X_test.shape[0] == 100
    assert a.X_train.shape[1] == a.Y_train.shape[1]
    assert not np.any(np.isin(a.X_test[:, 0], a.X_train[:, 0]))
    other = sample(DatasetSpec(**{**spec.to_dict(), "n_train": 200, "n_test": 100, "seed": 1}))
    assert not np.array_equal(a.X_train, other.X_train)


def test_sphere_samples_are_unit_norm():
    s = sample(DatasetSpec("sphere", name="bumps", n_train=50, n_test=50))
    np.testing.assert_allclose(np.linalg.norm(s.Y_train, axis=1), 1.0, atol=1e-12)


def test_gaussian_ground_truth_pushes_moments():
    s = sample(DatasetSpec("gaussian", d=2, seed=4, n_train=2, n_test=20000))
    pair = s.extra["pair"]
    T = s.ground_truth(s.X_test)
    np.testing.assert_allclose(T.mean(axis=0), pair.tgt.mean, atol=0.1)
    np.testing.assert_allclose(np.cov(T, rowvar=False), pair.tgt.covariance, atol=0.1)
    np.testing.assert_allclose(pair.A @ pair.src.covariance @ pair.A, pair.tgt.covariance, atol=1e-10)


def test_gaussian_pair_is_seeded():
    np.testing.assert_array_equal(gaussian_pair(3, 7).A, gaussian_pair(3, 7).A)


def test_bad_names():
    with pytest.raises(ValueError):
        sample(DatasetSpec("toy2d", name="spiral"))
    with pytest.raises(ValueError):
        DatasetSpec("images")


def test_monotone_rearrangement():
    out = monotone_rearrangement_1d([[3.0], [1.0], [2.0]], [[10.0], [30.0], [20.0]])
    assert out.tolist() == [30.0, 10.0, 20.0]
    with pytest.raises(ValueError):
        monotone_rearrangement_1d([1.0], [1.0, 2.0])


def test_export_csv(tmp_path):
    X = np.array([[0.1, 2.0], [3.0, -4.5]])
    path = tmp_path / "x.csv"
    export_csv(path, X)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["x0", "x1"]
    np.testing.assert_array_equal(np.array(rows[1:], dtype=float), X)
