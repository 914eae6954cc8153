"""Simulation engine: Dirichlet-regression covariates, outcome models, treatment injection."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .calibration import CalibrationError, CalibrationSet, Family
from .panel import NO_COVARIATES, CompositionalSpec, PanelData

MAX_LOG_ALPHA = 700.0
_MEAN = re.compile(r"^mean\((\w+)\)$")
_YEAR_MEAN = re.compile(r"^year\*mean\((\w+)\)$")


class Overlap(str, enum.Enum):
    FULL_OVERLAP = "FULL_OVERLAP"
    TREATMENT_OFFSET = "TREATMENT_OFFSET"
    STATE_OFFSET = "STATE_OFFSET"
    RANDOM_OFFSET = "RANDOM_OFFSET"


class OutcomeKind(str, enum.Enum):
    LINEAR = "LINEAR"
    FACTOR = "FACTOR"


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation cell. ``tau=None`` takes the calibration's effect size,
    unless ``tau_multiplier`` is set, in which case the effect is that many
    reference standard deviations."""

    overlap: Overlap = Overlap.FULL_OVERLAP
    outcome_kind: OutcomeKind = OutcomeKind.FACTOR
    n_units: int = 51
    T: int = 100
    t0: int = 50
    tau: float | None = None
    tau_multiplier: float | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "overlap", Overlap(self.overlap))
        object.__setattr__(self, "outcome_kind", OutcomeKind(self.outcome_kind))
        if not 1 <= self.t0 < self.T:
            raise ValueError(f"need 1 <= t0 < T (t0={self.t0}, T={self.T})")
        if self.n_units < 2:
            raise ValueError("need at least 2 units")

    @property
    def scenario_id(self) -> str:
        return self.overlap.value

    def effect_size(self, calib: CalibrationSet) -> float:
        if self.tau is not None:
            return float(self.tau)
        if self.tau_multiplier is not None:
            return float(self.tau_multiplier * calib.reference_sd)
        return float(calib.tau)


@dataclass(frozen=True, eq=False)
class SimulatedDataset:
    panel: PanelData
    spec: CompositionalSpec
    true_tau: float
    counterfactual: np.ndarray
    draws: dict = field(default_factory=dict)
    scenario: ScenarioConfig | None = None

    def treated_gap(self) -> np.ndarray:
        return self.panel.treated_path - self.counterfactual


def draw_coefficients(eta_hat, sigma_hat, rng: np.random.Generator) -> np.ndarray:
    """Multivariate normal draw through an eigen factorisation of the covariance.

    A zero covariance returns ``eta_hat`` exactly without touching ``rng``.
    """
    eta = np.asarray(eta_hat, dtype=float)
    flat = eta.reshape(-1)
    cov = np.asarray(sigma_hat, dtype=float)
    if cov.shape != (flat.size, flat.size):
        raise CalibrationError("covariance shape does not match coefficient vector")
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise CalibrationError("covariance is not symmetric")
    if not np.any(cov):
        return eta.copy()
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() < -1e-10:
        raise CalibrationError(f"covariance is not positive semidefinite (min eigenvalue {vals.min():.3g})")
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return (flat + root @ rng.standard_normal(flat.size)).reshape(eta.shape)


def sample_composition(alpha, rng: np.random.Generator) -> np.ndarray:
    """Dirichlet draw(s) along the last axis via normalised gamma variates."""
    alpha = np.asarray(alpha, dtype=float)
    if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
        raise ValueError("Dirichlet parameters must be finite and positive")
    g = rng.standard_gamma(alpha)
    total = g.sum(axis=-1, keepdims=True)
    if np.any(g <= 0):
        # gamma underflow for tiny alpha; fall back to the log-space sampler
        logg = np.log(rng.uniform(size=alpha.shape)) / alpha + np.log(rng.standard_gamma(alpha + 1.0))
        logg -= logg.max(axis=-1, keepdims=True)
        g = np.exp(logg)
        total = g.sum(axis=-1, keepdims=True)
    return g / total


def year_variable(T: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, T) if T > 1 else np.zeros(1)


def predictor_matrix(names, covariates: dict, year: np.ndarray, t0: int) -> np.ndarray:
    """Evaluate predictor names into a ``T x N x p`` array."""
    T = year.shape[0]
    N = next(iter(covariates.values())).shape[1] if covariates else 1
    yr = np.broadcast_to(year[:, None], (T, N))
    cols = []
    for name in names:
        if name == "const":
            cols.append(np.ones((T, N)))
        elif name == "year":
            cols.append(yr)
        elif (m := _MEAN.match(name)) is not None:
            cols.append(np.broadcast_to(covariates[m.group(1)][:t0].mean(axis=0), (T, N)))
        elif (m := _YEAR_MEAN.match(name)) is not None:
            cols.append(yr * covariates[m.group(1)][:t0].mean(axis=0))
        elif name in covariates:
            cols.append(covariates[name])
        else:
            raise CalibrationError(f"unknown predictor {name!r}")
    return np.stack(cols, axis=-1)


def _state_offsets(family: Family, scenario: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """Offsets per unit (``N x k`` or ``N``) for the overlap scenario.

    All random numbers are drawn in every scenario so that scenarios sharing a
    seed stay aligned draw for draw.
    """
    n = scenario.n_units
    shape = (n,) + family.state_effects.shape[1:]
    noise = rng.standard_normal(shape)
    random = rng.standard_normal(shape) * family.sigma_lambda / 3.0
    if scenario.overlap is Overlap.RANDOM_OFFSET:
        return random
    if n > family.state_effects.shape[0]:
        raise CalibrationError(f"calibration has effects for {family.state_effects.shape[0]} states, need {n}")
    fitted = family.state_effects[:n] + family.state_effect_se * noise
    if scenario.overlap is Overlap.FULL_OVERLAP:
        return np.zeros(shape)
    if scenario.overlap is Overlap.TREATMENT_OFFSET:
        out = np.zeros(shape)
        out[0] = fitted[0]
        return out
    return fitted


def simulate_covariates(scenario: ScenarioConfig, calib: CalibrationSet, rng: np.random.Generator):
    """Industry, then education | industry, race | both, wage | all; ``(covariates, draws)``."""
    T, n = scenario.T, scenario.n_units
    year = year_variable(T)
    covs: dict[str, np.ndarray] = {}
    draws: dict[str, np.ndarray] = {}
    coef_rng, offset_rng, comp_rng, wage_rng = rng.spawn(4)
    for name in ("industry", "education", "race"):
        fam = calib.family(name)
        beta = draw_coefficients(fam.coef_mean, fam.coef_cov, coef_rng)
        offsets = _state_offsets(fam, scenario, offset_rng)
        X = predictor_matrix(fam.predictors, covs, year, scenario.t0)
        log_alpha = X @ beta.T + offsets[None, :, :]
        if np.max(log_alpha) > MAX_LOG_ALPHA:
            raise CalibrationError(f"{name}: exp(X beta + lambda) overflows; check the calibration")
        alpha = np.exp(log_alpha)
        shares = sample_composition(alpha, comp_rng) if calib.composition_noise else alpha / alpha.sum(-1, keepdims=True)
        for j, cat in enumerate(fam.categories):
            covs[cat] = shares[..., j]
        draws[f"{name}_coef"] = beta
        draws[f"{name}_offsets"] = offsets
    fam = calib.family("wage")
    beta = draw_coefficients(fam.coef_mean, fam.coef_cov, coef_rng)
    offsets = _state_offsets(fam, scenario, offset_rng)
    X = predictor_matrix(fam.predictors, covs, year, scenario.t0)
    noise = wage_rng.standard_normal((T, n)) * fam.resid_sd
    covs["wage"] = X @ beta + offsets[None, :] + noise
    draws.update(wage_coef=beta, wage_offsets=offsets, wage_noise=noise)
    return covs, draws


def simulate_outcome(covariates: dict, kind, calib: CalibrationSet, rng: np.random.Generator, t0: int):
    """Untreated outcome panel ``(T x N)`` from one of the calibrated outcome models.

    Every unit shares the same coefficient draw. Returns ``(outcome, draws)``.
    """
    model = calib.outcome(OutcomeKind(kind).value)
    T = next(iter(covariates.values())).shape[0]
    coef_rng, noise_rng = rng.spawn(2)
    beta = draw_coefficients(model.coef_mean, model.coef_cov, coef_rng)
    X = predictor_matrix(model.predictors, covariates, year_variable(T), t0)
    noise = noise_rng.standard_normal(X.shape[:2]) * model.resid_sd
    return X @ beta + noise, {"outcome_coef": beta, "outcome_noise": noise}


def inject_treatment(dataset: SimulatedDataset, tau: float) -> SimulatedDataset:
    """Add a constant effect to the treated unit after ``t0``; keep the untreated path."""
    if not np.isfinite(tau):
        raise ValueError("tau must be finite")
    panel = dataset.panel
    y = panel.outcome.copy()
    counterfactual = dataset.counterfactual.copy()
    y[panel.t0 :, panel.treated_unit] = counterfactual[panel.t0 :] + tau
    return replace(dataset, panel=panel.with_outcome(y), true_tau=float(tau), counterfactual=counterfactual)


def unit_labels(n: int) -> tuple[str, ...]:
    return ("treated",) + tuple(f"donor{j:02d}" for j in range(1, n))


def simulate_dataset(scenario: ScenarioConfig, calib: CalibrationSet, seed=None) -> SimulatedDataset:
    """Covariates, untreated outcome and injected effect for one replication.

    ``seed`` defaults to ``scenario.seed``. Covariates come from a stream that
    does not depend on the outcome kind, so LINEAR and FACTOR datasets built
    from the same seed share covariate values exactly.
    """
    seed = scenario.seed if seed is None else seed
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    cov_ss, out_ss = ss.spawn(2)
    covs, draws = simulate_covariates(scenario, calib, np.random.default_rng(cov_ss))
    y, out_draws = simulate_outcome(covs, scenario.outcome_kind, calib, np.random.default_rng(out_ss), scenario.t0)
    draws.update(out_draws)
    panel = PanelData(unit_labels(scenario.n_units), np.arange(1, scenario.T + 1), y, scenario.t0, covs)
    base = SimulatedDataset(panel, calib.spec, 0.0, y[:, 0].copy(), draws, scenario)
    return inject_treatment(base, scenario.effect_size(calib))


def toy_overfit_scenario(n_controls: int, t_post: int, rng: np.random.Generator) -> SimulatedDataset:
    """Single pre-period: treated sits at level 1, donors at 0, all with N(0, 1) shocks; no effect."""
    if n_controls < 1 or t_post < 1:
        raise ValueError("need at least one control and one post period")
    T = 1 + t_post
    y = rng.standard_normal((T, n_controls + 1))
    y[:, 0] += 1.0
    panel = PanelData(unit_labels(n_controls + 1), np.arange(1, T + 1), y, 1)
    return SimulatedDataset(panel, NO_COVARIATES, 0.0, y[:, 0].copy(), {"shocks": y.copy()})
