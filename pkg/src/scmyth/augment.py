"""Ridge-augmented synthetic control and its residualized variant.

The counterfactual is written through implied donor weights ``a``: base simplex
weights ``w`` plus a ridge adjustment that partially corrects remaining
pre-treatment imbalance. Those weights may be negative, which is how the
estimator extrapolates beyond the donors' convex hull.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .panel import DesignMatrices, PanelData
from .simplex import simplex_least_squares

# dispersion penalty on the base weights, relative to the mean squared column
# norm of the balancing matrix; kept independent of the ridge penalty so the
# infinite-ridge limit is the penalised base fit itself
DISPERSION = 1e-3
SCALE_FLOOR = 1e-12
DEFAULT_GRID = tuple(10.0 ** np.arange(-4.0, 2.01, 0.5))


class AugMode(str, enum.Enum):
    ALL_COVARIATES = "ALL_COVARIATES"
    NO_COVARIATES = "NO_COVARIATES"
    RESIDUALIZED = "RESIDUALIZED"


class CovariateRankError(np.linalg.LinAlgError):
    """Exact covariate balance impossible: too many or collinear covariates for the donors."""


@dataclass
class AugmentedFit:
    w: np.ndarray
    augmented_weights: np.ndarray
    synthetic_path: np.ndarray
    base_path: np.ndarray
    correction_series: np.ndarray
    ridge_coefficients: np.ndarray
    rmspe_pre: float
    att_series: np.ndarray
    att_mean: float
    mode: AugMode
    penalty: tuple[float, float]
    column_names: tuple[str, ...] = ()
    donor_ids: tuple = ()
    method: str = ""
    cv_errors: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "mode": self.mode.value,
            "att_mean": self.att_mean,
            "rmspe_pre": self.rmspe_pre,
            "att_series": self.att_series.tolist(),
            "synthetic_path": self.synthetic_path.tolist(),
            "correction_series": self.correction_series.tolist(),
            "weights": {str(d): float(x) for d, x in zip(self.donor_ids, self.w)},
            "augmented_weights": {str(d): float(x) for d, x in zip(self.donor_ids, self.augmented_weights)},
            "ridge_coefficients": {n: float(x) for n, x in zip(self.column_names, self.ridge_coefficients)},
            "penalty": {"outcomes": self.penalty[0], "covariates": self.penalty[1]},
        }


def _ridge_fold_errors(D: np.ndarray, y: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Leave-one-donor-out squared prediction errors, one per penalty."""
    p, J = D.shape
    errs = np.zeros(len(grid))
    for j in range(J):
        keep = np.arange(J) != j
        Dt, yt = D[:, keep], y[keep]
        dbar, ybar = Dt.mean(axis=1), yt.mean()
        U, s, Vt = np.linalg.svd(Dt - dbar[:, None], full_matrices=False)
        proj = Vt @ (yt - ybar)
        x = U.T @ (D[:, j] - dbar)
        for i, lam in enumerate(grid):
            pred = ybar + x @ (s / (s * s + lam) * proj)
            errs[i] += (y[j] - pred) ** 2
    return errs / J


def select_penalty(donors: np.ndarray, targets: np.ndarray, grid: Sequence[float]) -> tuple[float, np.ndarray]:
    """Leave-one-donor-out cross-validated ridge penalty.

    ``donors`` is the ``p x J`` predictor matrix and ``targets`` the donors'
    outcome to predict. Ties go to the larger penalty.
    """
    grid = np.asarray(list(grid), dtype=float)
    if grid.size == 0:
        raise ValueError("penalty grid is empty")
    if np.any(grid < 0):
        raise ValueError("penalties must be nonnegative")
    if grid.size == 1:
        return float(grid[0]), np.array([np.nan])
    errs = _ridge_fold_errors(np.asarray(donors, float), np.asarray(targets, float), grid)
    best = errs.min()
    ties = np.flatnonzero(errs <= best + 1e-12 * abs(best))
    return float(grid[ties].max()), errs


def _ridge_matrix(Dc: np.ndarray, penalties: np.ndarray) -> np.ndarray:
    """``(Dc Dc' + diag(penalties))^-1``, with an infinite penalty zeroing its row."""
    finite = np.isfinite(penalties)
    p = Dc.shape[0]
    M = np.zeros((p, p))
    if finite.any():
        Df = Dc[finite]
        M[np.ix_(finite, finite)] = np.linalg.inv(Df @ Df.T + np.diag(penalties[finite]))
    return M


def _covariate_rescale(P: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Rescale covariate rows to the pooled cross-unit spread of the pre-period outcomes."""
    if Z.shape[0] == 0:
        return Z
    target = np.sqrt(np.mean(P.var(axis=1, ddof=1))) if P.shape[1] > 1 else 1.0
    sd = Z.std(axis=1, ddof=1)
    factor = np.where(sd > 0, target / np.where(sd > 0, sd, 1.0), 1.0)
    if target <= 0:
        factor = np.ones_like(factor)
    return Z * factor[:, None]


def _resolve_penalty(penalty_selection, D0c, target, scale):
    if penalty_selection is None:
        penalty_selection = DEFAULT_GRID
    if np.isscalar(penalty_selection):
        return float(penalty_selection), []
    grid = np.asarray(list(penalty_selection), dtype=float) * scale
    lam, errs = select_penalty(D0c, target, grid)
    return lam, list(np.atleast_1d(errs))


def augmented_fit(
    panel: PanelData,
    design: DesignMatrices,
    mode: AugMode | str = AugMode.ALL_COVARIATES,
    penalty_selection=None,
    *,
    per_period: bool = False,
    dispersion: float = DISPERSION,
    method: str = "",
) -> AugmentedFit:
    """Fit augmented SC.

    ``penalty_selection`` is either a fixed ridge penalty (absolute, may be
    ``inf``) or a grid of penalties relative to the largest squared singular
    value of the centred donor predictors; the grid is searched by
    :func:`select_penalty`. ``None`` uses :data:`DEFAULT_GRID`.
    """
    mode = AugMode(mode)
    t0 = panel.t0
    Y0 = panel.donor_paths
    y1 = panel.treated_path
    J = Y0.shape[1]
    cov = design.covariate_mask
    Z0 = design.x0[cov] if mode is not AugMode.NO_COVARIATES else np.zeros((0, J))
    z1 = design.x1[cov] if mode is not AugMode.NO_COVARIATES else np.zeros(0)
    cov_names = tuple(n for n, c in zip(design.column_names, cov) if c) if mode is not AugMode.NO_COVARIATES else ()
    pre_names = tuple(f"outcome_t{int(t)}" for t in panel.times[:t0])

    if mode is AugMode.RESIDUALIZED:
        Zt0 = np.vstack([np.ones(J), Z0])
        zt1 = np.concatenate([[1.0], z1])
        # everything below depends on the row space of Zt0 only, which is why
        # the estimate ignores the reference-category choice; rows are scaled
        # before the SVD and collinear rows (identical donors) are tolerated
        # as long as the treated unit stays in the donors' span
        scale = np.sqrt(np.sum(Zt0 * Zt0, axis=1))
        scale[scale == 0] = 1.0
        U, s, Vt = np.linalg.svd((Zt0 / scale[:, None]).T, full_matrices=False)
        keep = s > s[0] * 1e-10
        U, s, Vt = U[:, keep], s[keep], Vt[keep]
        proj = U @ (Vt / s[:, None]) / scale[None, :]  # J x (q+1): min-norm balancing map
        gap = zt1 - Zt0 @ (proj @ zt1)
        if np.max(np.abs(gap)) > 1e-8 * max(1.0, np.max(np.abs(zt1))):
            raise CovariateRankError(
                f"cannot balance {Z0.shape[0]} covariates exactly with {J} donors "
                f"(residual imbalance {np.max(np.abs(gap)):.3g})"
            )
        R0 = Y0 - (Y0 @ U) @ U.T
        r1 = y1 - Y0 @ (proj @ zt1)
        D0, d1 = R0[:t0], r1[:t0]
        penalties_block = (None, 0.0)
    else:
        P0, p1 = Y0[:t0], y1[:t0]
        Zs = _covariate_rescale(np.column_stack([p1, P0]), np.column_stack([z1, Z0]))
        D0 = np.vstack([P0, Zs[:, 1:]])
        d1 = np.concatenate([p1, Zs[:, 0]])
        penalties_block = (None, None)

    base_scale = float(np.mean(np.sum(D0 * D0, axis=0))) if D0.size else 0.0
    w = simplex_least_squares(D0, d1, ridge=dispersion * base_scale).w

    D0c = D0 - D0.mean(axis=1, keepdims=True)
    smax2 = float(np.linalg.norm(D0c, 2) ** 2) if D0c.size else 1.0
    # centred predictors that are rounding noise (identical donors) must not
    # shrink the penalty grid along with them
    smax2 = max(smax2, SCALE_FLOOR * float(np.sum(D0 * D0)))
    target = Y0[t0:].mean(axis=0)
    if mode is AugMode.RESIDUALIZED:
        target = R0[t0:].mean(axis=0)
    lam, cv_errors = _resolve_penalty(penalty_selection, D0c, target, smax2 if smax2 > 0 else 1.0)

    n_out = t0
    lam_cov = lam if penalties_block[1] is None else penalties_block[1]
    penalties = np.concatenate([np.full(n_out, lam), np.full(D0.shape[0] - n_out, lam_cov)])
    M = _ridge_matrix(D0c, penalties)
    imbalance = d1 - D0 @ w
    ridge_adj = D0c.T @ (M @ imbalance)

    if mode is AugMode.RESIDUALIZED:
        # w + proj (zt1 - Zt0 w), written through the orthonormal basis
        base_weights = w - U @ (U.T @ w) + proj @ zt1
        names = pre_names
    else:
        base_weights = w
        names = pre_names + cov_names
    a = base_weights + ridge_adj

    base_path = Y0 @ base_weights
    correction = Y0 @ ridge_adj
    if not per_period:
        correction = correction.copy()
        correction[t0:] = correction[t0:].mean()
    path = base_path + correction
    beta = M @ D0c @ (Y0[t0:].mean(axis=0) if mode is not AugMode.RESIDUALIZED else target)

    gap_pre = y1[:t0] - path[:t0]
    series = y1[t0:] - path[t0:]
    return AugmentedFit(
        w=w,
        augmented_weights=a,
        synthetic_path=path,
        base_path=base_path,
        correction_series=correction[t0:],
        ridge_coefficients=beta,
        rmspe_pre=float(np.sqrt(np.mean(gap_pre**2))),
        att_series=series,
        att_mean=float(np.mean(series)),
        mode=mode,
        penalty=(lam, float(lam_cov)),
        column_names=names,
        donor_ids=tuple(panel.unit_ids[i] for i in panel.donors),
        method=method,
        cv_errors=cv_errors,
    )
