"""Replication-level summaries: RMSE, reference-category spread, rank statistics."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.stats import rankdata


def rmse_over_reps(biases: Sequence[float]) -> float:
    """Root mean squared bias of replication-level ATT estimates."""
    b = np.asarray(list(biases), dtype=float)
    if b.size == 0:
        raise ValueError("no records to aggregate")
    return float(np.sqrt(np.mean(b * b)))


def mean_abs_bias(biases: Sequence[float]) -> float:
    b = np.asarray(list(biases), dtype=float)
    if b.size == 0:
        raise ValueError("no records to aggregate")
    return float(np.mean(np.abs(b)))


def refcat_sd_ratio(estimates: Sequence[float], outcome_sd: float) -> float:
    """Sample SD of ATT estimates across omission choices over the outcome SD."""
    est = np.asarray(list(estimates), dtype=float)
    if est.size < 2:
        raise ValueError("need estimates for at least two omission choices")
    if not outcome_sd > 0:
        raise ValueError("outcome SD must be positive")
    return float(np.std(est, ddof=1) / outcome_sd)


def refcat_sd_ratio_checked(by_omission: dict, expected: Sequence[str], outcome_sd: float) -> float:
    """:func:`refcat_sd_ratio` after checking that every expected omission is present."""
    missing = [o for o in expected if o not in by_omission]
    if missing:
        raise KeyError(f"missing estimates for {len(missing)} omission(s), e.g. {missing[0]!r}")
    return refcat_sd_ratio([by_omission[o] for o in expected], outcome_sd)


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of mid-ranks; ``nan`` when either rank vector is constant."""
    x = np.asarray(list(x), dtype=float)
    y = np.asarray(list(y), dtype=float)
    if x.shape != y.shape:
        raise ValueError("x and y must have equal length")
    if x.size < 2:
        raise ValueError("need at least two observations")
    rx = rankdata(x) - (x.size + 1) / 2.0
    ry = rankdata(y) - (y.size + 1) / 2.0
    sxx, syy = float(rx @ rx), float(ry @ ry)
    if sxx == 0.0 or syy == 0.0:
        return math.nan
    return float(np.clip((rx @ ry) / math.sqrt(sxx * syy), -1.0, 1.0))


def _ranks(values: np.ndarray) -> np.ndarray:
    """0-based ranks, ties broken by position (method order)."""
    order = np.argsort(values, kind="stable")
    r = np.empty(len(values), dtype=int)
    r[order] = np.arange(len(values))
    return r


def rank_matrix(imbalance: np.ndarray, abs_bias: np.ndarray) -> np.ndarray:
    """Proportion of replications where the i-th best method by imbalance is j-th by |bias|.

    Both inputs are ``reps x m`` with columns in method order; ties go to the
    method listed first.
    """
    a = np.asarray(imbalance, dtype=float)
    b = np.asarray(abs_bias, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] == 0:
        raise ValueError("need matching non-empty reps x methods arrays")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("missing method records (non-finite entries)")
    reps, m = a.shape
    counts = np.zeros((m, m))
    for ra, rb in zip(a, b):
        counts[_ranks(ra), _ranks(rb)] += 1.0
    return counts / reps
