import numpy as np
import pytest

from scmyth.augment import (
    DEFAULT_GRID,
    AugMode,
    CovariateRankError,
    augmented_fit,
    select_penalty,
)
from scmyth.panel import NO_COVARIATES, OmissionChoice, PanelData, build_design, enumerate_omissions
from scmyth.simplex import simplex_least_squares

OMIT = OmissionChoice.from_mapping({"race": "white", "education": "lths", "industry": "ind0"})


def _brute_force_cv(D, y, grid):
    """Leave-one-out ridge with intercept, solved by explicit normal equations."""
    p, J = D.shape
    errs = []
    for lam in grid:
        total = 0.0
        for j in range(J):
            keep = [i for i in range(J) if i != j]
            X = D[:, keep].T
            t = y[keep]
            xm, tm = X.mean(axis=0), t.mean()
            Xc = X - xm
            beta = np.linalg.solve(Xc.T @ Xc + lam * np.eye(p), Xc.T @ (t - tm))
            total += (y[j] - (tm + (D[:, j] - xm) @ beta)) ** 2
        errs.append(total / J)
    return np.array(errs)


def test_select_penalty_matches_brute_force():
    rng = np.random.default_rng(0)
    D = rng.normal(size=(4, 12))
    y = D[0] - 0.5 * D[2] + rng.normal(scale=0.5, size=12)
    grid = [0.01, 0.1, 1.0, 10.0, 100.0]
    lam, errs = select_penalty(D, y, grid)
    ref = _brute_force_cv(D, y, grid)
    assert np.allclose(errs, ref, rtol=1e-9)
    assert lam == grid[int(np.argmin(ref))]


def test_select_penalty_ties_go_to_larger():
    D = np.zeros((2, 5))
    y = np.arange(5.0)
    lam, errs = select_penalty(D, y, [0.1, 1.0, 10.0])
    assert lam == 10.0
    assert np.ptp(errs) == 0


def test_select_penalty_validation():
    with pytest.raises(ValueError):
        select_penalty(np.ones((1, 3)), np.ones(3), [])
    with pytest.raises(ValueError):
        select_penalty(np.ones((1, 3)), np.ones(3), [-1.0, 1.0])


@pytest.fixture(scope="module")
def ds_design(state_offset_ds):
    panel, spec = state_offset_ds.panel, state_offset_ds.spec
    return panel, spec, build_design(panel, spec, OMIT)


def test_infinite_penalty_is_base_sc(ds_design):
    panel, _, design = ds_design
    fit = augmented_fit(panel, design, AugMode.NO_COVARIATES, np.inf)
    assert np.allclose(fit.augmented_weights, fit.w)
    assert np.allclose(fit.correction_series, 0)
    assert np.allclose(fit.synthetic_path, panel.donor_paths @ fit.w)


def test_base_weights_are_dispersion_penalised_simplex_fit(ds_design):
    panel, _, design = ds_design
    fit = augmented_fit(panel, design, AugMode.NO_COVARIATES, np.inf, dispersion=0.0)
    P0, p1 = panel.donor_paths[: panel.t0], panel.treated_path[: panel.t0]
    ref = simplex_least_squares(P0, p1).w
    assert np.allclose(fit.w, ref, atol=1e-9)


def test_zero_penalty_reaches_treated_pre_path_when_overparameterised():
    rng = np.random.default_rng(2)
    T, N, t0 = 12, 30, 6
    y = rng.normal(size=(T, N))
    y[:, 0] += 5.0  # far outside the donor hull
    panel = PanelData(tuple(range(N)), np.arange(1, T + 1), y, t0)
    fit = augmented_fit(panel, build_design(panel, NO_COVARIATES), AugMode.NO_COVARIATES, 1e-12)
    assert fit.rmspe_pre < 1e-6
    assert fit.augmented_weights.min() < 0  # extrapolation


def test_ridge_weights_sum_to_one(ds_design):
    panel, _, design = ds_design
    for mode in AugMode:
        fit = augmented_fit(panel, design, mode)
        assert fit.augmented_weights.sum() == pytest.approx(1.0, abs=1e-9)


def test_pooled_and_per_period_share_mean(ds_design):
    panel, _, design = ds_design
    pooled = augmented_fit(panel, design, AugMode.ALL_COVARIATES)
    per = augmented_fit(panel, design, AugMode.ALL_COVARIATES, per_period=True)
    assert pooled.att_mean == pytest.approx(per.att_mean, abs=1e-12)
    assert np.ptp(pooled.correction_series) == 0
    # implied-weights identity for the per-period path
    assert np.allclose(per.synthetic_path, panel.donor_paths @ per.augmented_weights)


def test_residualized_balances_covariates_exactly(ds_design):
    panel, spec, design = ds_design
    fit = augmented_fit(panel, design, AugMode.RESIDUALIZED)
    base = fit.augmented_weights  # the ridge term is orthogonal to the covariates
    cov = design.covariate_mask
    assert np.max(np.abs(design.x0[cov] @ base - design.x1[cov])) <= 1e-8
    assert base.sum() == pytest.approx(1.0, abs=1e-10)


def test_residualized_invariant_across_all_omissions(state_offset_ds):
    panel, spec = state_offset_ds.panel, state_offset_ds.spec
    atts = [
        augmented_fit(panel, build_design(panel, spec, o), AugMode.RESIDUALIZED).att_mean
        for o in enumerate_omissions(spec)
    ]
    assert len(atts) == 60
    assert np.ptp(atts) <= 1e-8


def test_all_covariates_mode_depends_on_omission(state_offset_ds):
    panel, spec = state_offset_ds.panel, state_offset_ds.spec
    oms = enumerate_omissions(spec)
    a = augmented_fit(panel, build_design(panel, spec, oms[0]), AugMode.ALL_COVARIATES).att_mean
    b = augmented_fit(panel, build_design(panel, spec, oms[-1]), AugMode.ALL_COVARIATES).att_mean
    assert a != b


def test_residualized_rejects_unbalanceable_covariates():
    rng = np.random.default_rng(4)
    T, N = 6, 4
    covs = {f"x{i}": rng.normal(size=(T, N)) for i in range(5)}
    panel = PanelData(tuple(range(N)), np.arange(1, T + 1), rng.normal(size=(T, N)), 3, covs)
    from scmyth.panel import CompositionalSpec

    design = build_design(panel, CompositionalSpec((), tuple(covs)))
    with pytest.raises(CovariateRankError):
        augmented_fit(panel, design, AugMode.RESIDUALIZED)


def test_identical_units_give_exact_counterfactual():
    base = np.linspace(0.05, 0.1, 10)
    y = np.tile(base[:, None], (1, 8))
    y[6:, 0] += 0.017
    panel = PanelData(tuple(range(8)), np.arange(1, 11), y, 6)
    for grid in (None, DEFAULT_GRID):
        fit = augmented_fit(panel, build_design(panel, NO_COVARIATES), AugMode.NO_COVARIATES, grid)
        assert fit.att_mean == pytest.approx(0.017, abs=1e-12)


def test_fit_to_dict(ds_design):
    panel, _, design = ds_design
    d = augmented_fit(panel, design, AugMode.ALL_COVARIATES).to_dict()
    assert d["mode"] == "ALL_COVARIATES" and len(d["augmented_weights"]) == panel.n_units - 1
