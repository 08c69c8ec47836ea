"""Pure numpy fallback for the log-domain Sinkhorn loop."""

import numpy as np


def _update_rows(C, g, eps, logb):
    z = (g[None, :] - C) / eps
    mx = z.max(axis=1)
    return -eps * (mx + np.log(np.exp(z - mx[:, None]).sum(axis=1)) + logb)


def _update_cols(C, f, eps, loga):
    z = (f[:, None] - C) / eps
    mx = z.max(axis=0)
    return -eps * (mx + np.log(np.exp(z - mx[None, :]).sum(axis=0)) + loga)


def sinkhorn_loop(C, eps, tol, max_iter):
    """Run log-domain Sinkhorn; returns (f, g, iterations, row_error) at the best iterate."""
    n, m = C.shape
    loga, logb = -np.log(n), -np.log(m)
    a = 1.0 / n
    f = np.zeros(n)
    g = _update_cols(C, f, eps, loga)
    best, fb, gb = np.inf, f.copy(), g.copy()
    it = 0
    while it < max_iter:
        it += 1
        fn = _update_rows(C, g, eps, logb)
        err = float(np.max(np.abs(a * np.exp((f - fn) / eps) - a)))
        if err < best:
            best, fb, gb = err, f.copy(), g.copy()
        if err <= tol:
            break
        f = fn
        g = _update_cols(C, f, eps, loga)
    return fb, gb, it, best
