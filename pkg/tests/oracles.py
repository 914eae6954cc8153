"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import numpy as np


def grid_simplex_min(A, b, v=None, step=1e-3):
    """Exact minimum of ``||diag(sqrt v)(A w - b)||^2`` over the simplex grid of spacing ``step``.

    The first ``J - 2`` coordinates are enumerated; along the remaining edge
    the objective is a convex parabola, so the best grid point is one of the
    two grid neighbours of the clipped continuous minimiser.
    """
    A = np.asarray(A, float)
    b = np.asarray(b, float)
    if v is not None:
        r = np.sqrt(np.asarray(v, float))
        A, b = A * r[:, None], b * r
    k, J = A.shape
    n = int(round(1 / step))
    if J == 1:
        return float(np.sum((A[:, 0] - b) ** 2))
    if J == 2:
        t = np.arange(n + 1) / n
        W = np.column_stack([t, 1 - t])
        return float(np.min(np.sum((W @ A.T - b) ** 2, axis=1)))
    heads = _heads(J - 2, n)
    rest = n - heads.sum(axis=1)  # grid units left for the last two coordinates
    base = heads @ A[:, : J - 2].T / n + np.outer(rest / n, A[:, J - 1]) - b  # t = 0: all rest on last
    d = A[:, J - 2] - A[:, J - 1]
    dd = d @ d
    if dd == 0:
        return float(np.min(np.sum(base**2, axis=1)))
    tstar = np.clip(-(base @ d) / dd * n, 0, rest)
    best = np.full(len(heads), np.inf)
    for cand in (np.floor(tstar), np.ceil(tstar)):
        cand = np.minimum(cand, rest)
        val = np.sum((base + np.outer(cand / n, d)) ** 2, axis=1)
        best = np.minimum(best, val)
    return float(best.min())


def _heads(m, n):
    """All nonnegative integer m-vectors with sum <= n."""
    grids = np.indices((n + 1,) * m).reshape(m, -1).T
    return grids[grids.sum(axis=1) <= n].astype(float)


def naive_midranks(x):
    """Average ranks by explicit counting (1-based)."""
    x = list(x)
    out = []
    for xi in x:
        less = sum(1 for xj in x if xj < xi)
        equal = sum(1 for xj in x if xj == xi)
        out.append(less + (equal + 1) / 2.0)
    return out


def naive_spearman(x, y):
    rx, ry = naive_midranks(x), naive_midranks(y)
    n = len(rx)
    mx, my = sum(rx) / n, sum(ry) / n
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    sx = sum((a - mx) ** 2 for a in rx)
    sy = sum((b - my) ** 2 for b in ry)
    if sx == 0 or sy == 0:
        return float("nan")
    return num / (sx * sy) ** 0.5


def dummy_ols_twfe(Y, X):
    """Two-way fixed effects by brute-force dummy-variable least squares.

    ``Y`` is ``T x J``; ``X`` is ``q x T x J``. Returns ``(gamma, fitted)``.
    """
    T, J = Y.shape
    rows = []
    for t in range(T):
        for j in range(J):
            time_d = [1.0 if s == t else 0.0 for s in range(T)]
            unit_d = [1.0 if u == j else 0.0 for u in range(1, J)]
            rows.append([X[q, t, j] for q in range(X.shape[0])] + time_d + unit_d)
    D = np.array(rows)
    coef, *_ = np.linalg.lstsq(D, Y.reshape(-1), rcond=None)
    return coef[: X.shape[0]], (D @ coef).reshape(T, J)
