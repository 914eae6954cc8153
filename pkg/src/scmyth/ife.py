"""Linear (interactive) fixed-effects counterfactual estimated on donors only."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .panel import NO_COVARIATES, CompositionalSpec, OmissionChoice, PanelData


class CollinearCovariatesWarning(UserWarning):
    pass


@dataclass
class IfeFit:
    gamma: np.ndarray
    covariate_names: tuple[str, ...]
    delta: np.ndarray
    unit_effects: np.ndarray
    treated_effect: float
    factors: np.ndarray
    loadings: np.ndarray
    treated_loadings: np.ndarray
    counterfactual_path: np.ndarray
    att_series: np.ndarray
    att_mean: float
    rmspe_pre: float
    donor_rss: float
    r: int
    iterations: int
    method: str = ""

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "r": self.r,
            "att_mean": self.att_mean,
            "rmspe_pre": self.rmspe_pre,
            "att_series": self.att_series.tolist(),
            "counterfactual_path": self.counterfactual_path.tolist(),
            "gamma": {n: float(g) for n, g in zip(self.covariate_names, self.gamma)},
            "treated_effect": self.treated_effect,
            "donor_rss": self.donor_rss,
            "iterations": self.iterations,
        }


def _two_way_demean(a: np.ndarray) -> np.ndarray:
    return a - a.mean(axis=0, keepdims=True) - a.mean(axis=1, keepdims=True) + a.mean()


def _additive_fit(Y: np.ndarray, X: np.ndarray):
    """Two-way FE least squares on a balanced ``T x J`` block; X is ``q x T x J``."""
    q = X.shape[0]
    if q:
        Xd = np.stack([_two_way_demean(x).ravel() for x in X], axis=1)
        gamma, _, rank, _ = np.linalg.lstsq(Xd, _two_way_demean(Y).ravel(), rcond=None)
        if rank < q:
            warnings.warn(
                f"covariates are collinear after removing fixed effects (rank {rank} < {q}); "
                "using the minimum-norm solution",
                CollinearCovariatesWarning,
                stacklevel=3,
            )
        E = Y - np.tensordot(gamma, X, axes=1)
    else:
        gamma = np.zeros(0)
        E = Y
    grand = E.mean()
    delta = E.mean(axis=1)
    lam = E.mean(axis=0) - grand
    return gamma, delta, lam


def _covariate_stack(panel: PanelData, names) -> np.ndarray:
    if not names:
        return np.zeros((0, panel.n_periods, panel.n_units))
    return np.stack([panel.covariate(n) for n in names])


def ife_fit(
    panel: PanelData,
    spec: CompositionalSpec = NO_COVARIATES,
    omit: OmissionChoice | None = None,
    covariate_mode: str = "ALL",
    r: int = 0,
    *,
    tol: float = 1e-9,
    max_iter: int = 500,
    method: str = "",
) -> IfeFit:
    """Fit ``Y = X gamma + delta_t + lambda_i (+ F_t . L_i)`` on donors, project the treated unit.

    The treated unit's intercept (and loadings when ``r > 0``) come from its
    pre-treatment residuals only, so post-treatment treated outcomes never
    enter estimation. ``covariate_mode`` is ``"ALL"`` (every retained
    covariate, time-varying) or ``"NONE"``.
    """
    if covariate_mode not in ("ALL", "NONE"):
        raise ValueError("covariate_mode must be 'ALL' or 'NONE'")
    donors = panel.donors
    J, T0 = len(donors), panel.t0
    if r < 0 or (r > 0 and r >= min(J, T0)):
        raise ValueError(f"r={r} must satisfy 0 <= r < min(J={J}, T0={T0})")

    if covariate_mode == "ALL":
        omit = omit if omit is not None else OmissionChoice.all_categories(spec)
        names = tuple(omit.kept_columns(spec))
    else:
        names = ()
    Xall = _covariate_stack(panel, names)
    X0 = Xall[:, :, donors]
    x1 = Xall[:, :, panel.treated_unit]
    Y0 = panel.donor_paths
    y1 = panel.treated_path

    gamma, delta, lam = _additive_fit(Y0, X0)
    F = np.zeros((panel.n_periods, 0))
    L = np.zeros((J, 0))

    def fitted():
        return np.tensordot(gamma, X0, axes=1) + delta[:, None] + lam[None, :] + F @ L.T

    rss = float(np.sum((Y0 - fitted()) ** 2))
    iterations = 0
    if r > 0:
        for iterations in range(1, max_iter + 1):
            resid = Y0 - np.tensordot(gamma, X0, axes=1) - delta[:, None] - lam[None, :]
            U, s, Vt = np.linalg.svd(resid, full_matrices=False)
            F = U[:, :r] * s[:r]
            L = Vt[:r].T
            gamma, delta, lam = _additive_fit(Y0 - F @ L.T, X0)
            new_rss = float(np.sum((Y0 - fitted()) ** 2))
            done = abs(rss - new_rss) <= tol * max(rss, 1e-300)
            rss = new_rss
            if done:
                break

    e1 = y1 - delta - (gamma @ x1 if len(gamma) else 0.0)
    if r > 0:
        A = np.column_stack([np.ones(T0), F[:T0]])
        coef = np.linalg.lstsq(A, e1[:T0], rcond=None)[0]
        treated_effect, l1 = float(coef[0]), coef[1:]
    else:
        treated_effect, l1 = float(np.mean(e1[:T0])), np.zeros(0)
    counterfactual = y1 - e1 + treated_effect + F @ l1

    gap = y1 - counterfactual
    series = gap[T0:]
    return IfeFit(
        gamma=gamma,
        covariate_names=names,
        delta=delta,
        unit_effects=lam,
        treated_effect=treated_effect,
        factors=F,
        loadings=L,
        treated_loadings=l1,
        counterfactual_path=counterfactual,
        att_series=series,
        att_mean=float(np.mean(series)),
        rmspe_pre=float(np.sqrt(np.mean(gap[:T0] ** 2))),
        donor_rss=rss,
        r=r,
        iterations=iterations,
        method=method,
    )
