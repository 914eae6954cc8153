"""Standard synthetic control: donor weights given V, outer search over V."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .panel import DesignMatrices, PanelData
from .simplex import SolverError, simplex_least_squares

logger = logging.getLogger(__name__)

SINGULAR_COND = 1e12
FEASIBILITY_TOL = 1e-8
EXACT_FIT = 1e-24  # MSPE below this fraction of the mean squared outcome counts as exact


class SingularDesignError(np.linalg.LinAlgError):
    """Regression weights cannot be computed (collinear or constant predictors)."""


def _as_v(values, k: int) -> np.ndarray:
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.shape != (k,):
        raise ValueError(f"V must have {k} entries, got {v.shape[0]}")
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ValueError("V entries must be finite and nonnegative")
    total = v.sum()
    if total <= 0:
        raise ValueError("V must have a positive entry")
    return v / total


def uniform_v(design: DesignMatrices) -> np.ndarray:
    return np.full(design.k, 1.0 / design.k)


def regression_v_init(design: DesignMatrices, panel: PanelData) -> np.ndarray:
    """Variable weights from standardized per-period regression coefficients.

    Every pre-treatment outcome period is regressed on the standardized
    predictors (treated unit plus donors, with an intercept). Each predictor's
    weight is its summed squared coefficient over periods, normalized to one.
    The intercept never receives weight.
    """
    X = np.column_stack([design.x1, design.x0]).T
    n = X.shape[0]
    sd = X.std(axis=0, ddof=1) if n > 1 else np.zeros(design.k)
    if np.any(sd <= 0):
        raise SingularDesignError("constant predictor column; regression weights undefined")
    Xs = np.column_stack([X / sd, np.ones(n)])
    gram = Xs.T @ Xs
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > SINGULAR_COND:
        raise SingularDesignError(f"X'X condition number {cond:.3g} exceeds {SINGULAR_COND:.0e}")
    units = np.concatenate([[panel.treated_unit], panel.donors])
    Y = panel.outcome[: panel.t0][:, units].T  # units x T0
    beta = np.linalg.solve(gram, Xs.T @ Y)[:-1]
    ss = np.sum(beta**2, axis=1)
    total = ss.sum()
    if total <= 0:
        raise SingularDesignError("all regression coefficients vanish")
    return ss / total


def regression_v_or_uniform(design: DesignMatrices, panel: PanelData) -> tuple[np.ndarray, bool]:
    """Regression weights, or uniform weights when the regression is inestimable."""
    try:
        return regression_v_init(design, panel), False
    except SingularDesignError as exc:
        logger.debug("falling back to uniform V: %s", exc)
        return uniform_v(design), True


def v_contribution_shares(coefficients: Mapping[str, Sequence]) -> dict:
    """Share of the total squared-coefficient mass carried by each variable.

    Works with any numeric type supporting ``+``, ``*`` and ``/``, so passing
    :class:`fractions.Fraction` coefficients gives exact shares.
    """
    sums = {name: sum_of_squares(vals) for name, vals in coefficients.items()}
    total = sum(sums.values())
    if not sums or total == 0:
        raise ValueError("at least one nonzero coefficient is required")
    return {name: s / total for name, s in sums.items()}


def sum_of_squares(values) -> object:
    if isinstance(values, (int, float)) or hasattr(values, "denominator"):
        values = [values]
    total = 0
    for c in values:
        total = total + c * c
    return total


def solve_w_given_v(design: DesignMatrices, v, ridge: float = 0.0) -> np.ndarray:
    """Donor weights minimising ``(x1 - X0 w)' diag(v) (x1 - X0 w)`` over the simplex."""
    v = _as_v(v, design.k)
    root = np.sqrt(v)
    sol = simplex_least_squares(root[:, None] * design.x0, root * design.x1, ridge)
    return sol.w


def w_objective(design: DesignMatrices, v, w) -> float:
    v = _as_v(v, design.k)
    gap = design.x1 - design.x0 @ np.asarray(w, dtype=float)
    return float(gap @ (v * gap))


def synthetic_path(panel: PanelData, w) -> np.ndarray:
    return panel.donor_paths @ np.asarray(w, dtype=float)


def rmspe(panel: PanelData, w) -> float:
    """Root mean squared pre-treatment gap between treated and synthetic paths."""
    gap = panel.treated_path[: panel.t0] - synthetic_path(panel, w)[: panel.t0]
    return float(np.sqrt(np.mean(gap**2)))


def att(panel: PanelData, w) -> tuple[np.ndarray, float]:
    gap = panel.treated_path[panel.t0 :] - synthetic_path(panel, w)[panel.t0 :]
    return gap, float(np.mean(gap))


def check_feasible(w, tol: float = FEASIBILITY_TOL) -> None:
    w = np.asarray(w)
    if w.min() < -1e-12 or abs(w.sum() - 1.0) > tol:
        raise SolverError(f"infeasible donor weights (min {w.min():.3g}, sum {w.sum():.12f})", best=w)


@dataclass
class SynthFit:
    w: np.ndarray
    v: np.ndarray
    synthetic_path: np.ndarray
    rmspe_pre: float
    att_series: np.ndarray
    att_mean: float
    objective: float
    optimizer_trace: list[float] = field(default_factory=list)
    column_names: tuple[str, ...] = ()
    donor_ids: tuple = ()
    method: str = ""
    v_fallback: bool = False

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "att_mean": self.att_mean,
            "rmspe_pre": self.rmspe_pre,
            "objective": self.objective,
            "att_series": self.att_series.tolist(),
            "synthetic_path": self.synthetic_path.tolist(),
            "weights": {str(d): float(x) for d, x in zip(self.donor_ids, self.w)},
            "v": {n: float(x) for n, x in zip(self.column_names, self.v)},
            "v_fallback": self.v_fallback,
            "optimizer_trace": list(self.optimizer_trace),
        }


def _make_fit(panel, design, w, v, trace, method, v_fallback=False) -> SynthFit:
    check_feasible(w)
    path = synthetic_path(panel, w)
    series, mean = att(panel, w)
    r = rmspe(panel, w)
    donor_ids = tuple(panel.unit_ids[i] for i in panel.donors)
    return SynthFit(
        w=w,
        v=v,
        synthetic_path=path,
        rmspe_pre=r,
        att_series=series,
        att_mean=mean,
        objective=float(np.mean((panel.treated_path[: panel.t0] - path[: panel.t0]) ** 2)),
        optimizer_trace=list(trace),
        column_names=design.column_names,
        donor_ids=donor_ids,
        method=method,
        v_fallback=v_fallback,
    )


def fixed_v_fit(
    panel: PanelData,
    design: DesignMatrices,
    v,
    *,
    standardize: bool = True,
    method: str = "synth_fixed_v",
) -> SynthFit:
    """Single inner solve at the supplied V (the regression-weights mode)."""
    v = _as_v(v, design.k)
    inner = design.standardized() if standardize else design
    w = solve_w_given_v(inner, v)
    fit = _make_fit(panel, design, w, v, [], method)
    fit.optimizer_trace = [fit.objective]
    return fit


@dataclass(frozen=True)
class NestedOptions:
    restarts: int = 3
    max_inner_solves: int = 500
    seed: int = 0
    standardize: bool = True
    xatol: float = 1e-4
    fatol: float = 1e-10


def _softmax(u: np.ndarray) -> np.ndarray:
    e = np.exp(u - u.max())
    return e / e.sum()


def nested_fit(
    panel: PanelData,
    design: DesignMatrices,
    init,
    opts: NestedOptions | None = None,
    *,
    method: str = "synth_nested",
) -> SynthFit:
    """Outer Nelder-Mead over V (softmax coordinates) around the inner W solve.

    The search starts from ``init`` and from ``opts.restarts`` random points;
    each start gets ``opts.max_inner_solves`` evaluations. The returned fit is
    the best pre-treatment MSPE found, and ``optimizer_trace`` records the
    running best after every outer iteration.
    """
    opts = opts or NestedOptions()
    init = _as_v(init, design.k)
    inner = design.standardized() if opts.standardize else design
    y1 = panel.treated_path[: panel.t0]
    y0 = panel.donor_paths[: panel.t0]

    def mspe(w):
        gap = y1 - y0 @ w
        return float(gap @ gap) / len(gap)

    w0 = solve_w_given_v(inner, init)
    best = {"f": mspe(w0), "v": init, "w": w0}
    trace = [best["f"]]
    # an exact pre-period fit cannot be improved on; stop before searching
    negligible = EXACT_FIT * float(np.mean(y1 * y1))
    if design.k == 1 or best["f"] <= negligible:
        return _make_fit(panel, design, w0, init, trace, method)

    scale = best["f"] if best["f"] > 0 else 1.0
    cache: dict[bytes, float] = {}

    def objective(u):
        key = u.tobytes()
        if key in cache:
            return cache[key]
        v = _softmax(u)
        w = solve_w_given_v(inner, v)
        f = mspe(w)
        if f < best["f"]:
            best.update(f=f, v=v, w=w)
        cache[key] = f / scale
        return cache[key]

    def record(_xk):
        trace.append(best["f"])

    rng = np.random.default_rng(opts.seed)
    starts = [np.log(np.maximum(init, 1e-12))]
    starts += [rng.normal(size=design.k) for _ in range(opts.restarts)]
    for u0 in starts:
        if best["f"] <= negligible:
            break
        minimize(
            objective,
            u0,
            method="Nelder-Mead",
            callback=record,
            options={"maxfev": opts.max_inner_solves, "xatol": opts.xatol, "fatol": opts.fatol},
        )
    return _make_fit(panel, design, best["w"], best["v"], trace, method)
