import numpy as np
import pytest

from mongegap import _sinkhorn_py, kernels
from mongegap.costs import CostSpec, cost_matrix

ext = pytest.importorskip("mongegap._sinkhorn_ext")


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("shape,eps", [((5, 5), 1.0), ((40, 25), 0.05), ((64, 64), 1e-3)])
def test_compiled_and_fallback_agree(shape, eps):
    rng = np.random.default_rng(shape[0])
    C = cost_matrix(CostSpec("sqeuclidean"), rng.normal(size=(shape[0], 2)), rng.normal(size=(shape[1], 2)))
    a = ext.sinkhorn_loop(C, eps, 1e-9, 3000)
    b = _sinkhorn_py.sinkhorn_loop(C, eps, 1e-9, 3000)
    assert a[2] == b[2]
    # the compiled kernel uses vectorised exp, so agreement is to rounding
    np.testing.assert_allclose(a[0], b[0], rtol=1e-9, atol=1e-9 * eps)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-9, atol=1e-9 * eps)
    assert a[3] == pytest.approx(b[3], rel=1e-6, abs=1e-15)


def test_extreme_cost_ranges_stay_finite():
    C = np.array([[0.0, 1e4], [1e4, 0.0], [5e3, 5e3]])
    for mod in (ext, _sinkhorn_py):
        f, g, it, err = mod.sinkhorn_loop(C, 1e-2, 1e-12, 500)
        assert np.all(np.isfinite(f)) and np.all(np.isfinite(g))
