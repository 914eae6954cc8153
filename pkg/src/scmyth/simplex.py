"""Least squares over the probability simplex.

Solves ``min ||A w - b||^2 + ridge * ||w||^2`` subject to ``w >= 0, sum(w) = 1``
with a primal active-set method. Equality-constrained subproblems are solved
in nullspace form with ``lstsq`` on the stacked matrix ``[A; sqrt(rho) I]``,
which keeps the conditioning at the square root of the normal equations.

A tiny relative ridge is always present so that ties between equally good
weight vectors resolve to the minimum-norm solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TIE_BREAK = 1e-10


class SolverError(RuntimeError):
    """Inner solver gave up; ``best`` holds the last feasible iterate."""

    def __init__(self, message: str, best: np.ndarray | None = None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class SimplexSolution:
    w: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int


def _nullspace_of_ones(m: int) -> np.ndarray:
    q, _ = np.linalg.qr(np.ones((m, 1)), mode="complete")
    return q[:, 1:]


def _solve_on_support(A: np.ndarray, b: np.ndarray, rho: float, support: list[int]) -> np.ndarray:
    m = len(support)
    if m == 1:
        return np.ones(1)
    Af = A[:, support]
    z0 = np.full(m, 1.0 / m)
    N = _nullspace_of_ones(m)
    lhs = np.vstack([Af @ N, np.sqrt(rho) * N])
    rhs = np.concatenate([b - Af @ z0, -np.sqrt(rho) * z0])
    y = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    return z0 + N @ y


def _kkt(A, b, rho, w, support_mask):
    g = A.T @ (A @ w - b) + rho * w
    mu = -float(np.mean(g[support_mask]))
    lam = g + mu
    stationarity = float(np.max(np.abs(lam[support_mask])))
    dual = float(np.max(np.maximum(-lam[~support_mask], 0.0))) if (~support_mask).any() else 0.0
    return lam, max(stationarity, dual)


def simplex_least_squares(
    A: np.ndarray,
    b: np.ndarray,
    ridge: float = 0.0,
    *,
    tol: float = 1e-14,
    max_iter: int | None = None,
) -> SimplexSolution:
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.ndim != 2 or A.shape[0] != b.shape[0]:
        raise ValueError("A must be k x J with len(b) == k")
    J = A.shape[1]
    if J < 1:
        raise ValueError("need at least one donor")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    if J == 1:
        w = np.ones(1)
        return SimplexSolution(w, float(np.sum((A @ w - b) ** 2) + ridge), 0.0, 0)

    # normalise so tolerances are scale free; the argmin is unchanged
    scale = float(np.mean(np.sum(A * A, axis=0)))
    if not np.isfinite(scale):
        raise ValueError("non-finite design")
    if scale <= 0:
        scale = max(ridge, 1.0)
    An, bn = A / np.sqrt(scale), b / np.sqrt(scale)
    rho = ridge / scale + TIE_BREAK

    max_iter = max_iter or 20 * J + 100
    resid = An - bn[:, None]
    start = int(np.argmin(np.sum(resid * resid, axis=0)))
    support = [start]
    w = np.zeros(J)
    w[start] = 1.0

    for it in range(1, max_iter + 1):
        z = _solve_on_support(An, bn, rho, support)
        if np.all(z > 0):
            w = np.zeros(J)
            w[support] = z
            mask = np.zeros(J, dtype=bool)
            mask[support] = True
            lam, _ = _kkt(An, bn, rho, w, mask)
            lam_out = np.where(mask, np.inf, lam)
            j = int(np.argmin(lam_out))
            thresh = tol * max(1.0, float(np.max(np.abs(lam))))
            if lam_out[j] >= -thresh:
                break
            support.append(j)
            continue
        # step toward z until the first support weight hits zero
        cur = w[support]
        d = z - cur
        neg = d < 0
        ratios = np.full(len(support), np.inf)
        ratios[neg] = cur[neg] / -d[neg]
        alpha = float(min(1.0, ratios.min()))
        new = cur + alpha * d
        blocking = int(np.argmin(ratios))
        new[blocking] = 0.0
        new[new < 1e-15] = 0.0
        w = np.zeros(J)
        w[support] = new
        support = [s for s, v in zip(support, new) if v > 0]
        if not support:
            raise SolverError("active set emptied", best=None)
        w[support] /= w[support].sum()
    else:
        raise SolverError(f"active-set solver hit {max_iter} iterations", best=w.copy())

    w = np.maximum(w, 0.0)
    w /= w.sum()
    # polish: drop the tie-break ridge on the final support; lstsq still
    # returns the minimum-norm point when that support has exact ties
    support = [int(i) for i in np.flatnonzero(w > 0)]
    if len(support) > 1:
        z = _solve_on_support(An, bn, ridge / scale, support)
        if np.all(z >= -1e-12):
            cand = np.zeros(J)
            cand[support] = np.maximum(z, 0.0)
            cand /= cand.sum()

            def f(x):
                return float(np.sum((An @ x - bn) ** 2) + ridge / scale * np.sum(x * x))

            if f(cand) <= f(w):
                w = cand
    mask = w > 0
    _, residual = _kkt(An, bn, rho, w, mask)
    objective = float(np.sum((A @ w - b) ** 2) + ridge * np.sum(w * w))
    return SimplexSolution(w, objective, residual, it)
