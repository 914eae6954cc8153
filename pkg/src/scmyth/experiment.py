"""Monte Carlo harness: simulate, fit every method, aggregate into figure tables.

Each replication draws its dataset from ``SeedSequence([seed, rep])``, so the
same replication index sees the same covariates in every scenario and outcome
model, and results do not depend on the worker count. Records are collected in
task order, which keeps the output CSVs byte-identical across reruns.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .augment import AugMode, augmented_fit
from .calibration import CalibrationSet, load_calibration
from .dgp import OutcomeKind, Overlap, ScenarioConfig, simulate_dataset, toy_overfit_scenario
from .ife import ife_fit
from .io import dumps_json, fmt
from .metrics import mean_abs_bias, rank_matrix, refcat_sd_ratio_checked, rmse_over_reps, spearman_rho
from .panel import ALL_CATEGORIES, NO_COVARIATES, CompositionalSpec, OmissionChoice, PanelData, build_design, enumerate_omissions
from .synth import NestedOptions, fixed_v_fit, nested_fit, regression_v_or_uniform, uniform_v

logger = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = 1

METHODS = (
    "SYNTH_NESTED",
    "SYNTH_REGWEIGHTS",
    "SYNTH_ALLCATS",
    "SYNTH_NOCOV",
    "AUGSYNTH",
    "AUGSYNTH_ALLCATS",
    "AUGSYNTH_NOCOV",
    "AUGSYNTH_RESID",
    "IFE_COV",
    "IFE_NOCOV",
)
# methods whose covariate set depends on the reference-category choice
OMISSION_METHODS = frozenset({"SYNTH_NESTED", "SYNTH_REGWEIGHTS", "AUGSYNTH", "AUGSYNTH_RESID", "IFE_COV"})
OMISSION_POLICIES = ("SWEEP_ALL", "SINGLE", "ALL_CATEGORIES", "NONE")
# one arm per estimator family and covariate treatment (no omission sweep)
RANK_METHODS = (
    "SYNTH_ALLCATS",
    "SYNTH_NOCOV",
    "AUGSYNTH_ALLCATS",
    "AUGSYNTH_NOCOV",
    "AUGSYNTH_RESID",
    "IFE_COV",
    "IFE_NOCOV",
)
FAMILIES = {
    "SYNTH": ("SYNTH_ALLCATS", "SYNTH_NOCOV"),
    "AUGSYNTH": ("AUGSYNTH_ALLCATS", "AUGSYNTH_NOCOV", "AUGSYNTH_RESID"),
    "IFE": ("IFE_COV", "IFE_NOCOV"),
}
TOY = "TOY_OVERFIT"
RECORD_FIELDS = ("scenario", "outcome_kind", "rep", "method", "omission", "att_mean", "rmspe_pre", "bias")
FAILURE_FIELDS = ("scenario", "outcome_kind", "rep", "method", "omission", "error", "message")
DATASET_FIELDS = ("scenario", "outcome_kind", "rep", "true_tau", "outcome_sd")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ToyScenario:
    """Single pre-period overfitting toy; see :func:`scmyth.dgp.toy_overfit_scenario`."""

    n_controls: int = 200
    t_post: int = 1

    scenario_id = TOY
    outcome_label = "NONE"


@dataclass(frozen=True)
class EstimateRecord:
    scenario: str
    outcome_kind: str
    rep: int
    method: str
    omission: str
    att_mean: float
    rmspe_pre: float
    bias: float
    mse_post: float = math.nan

    def row(self) -> list[str]:
        return [fmt(getattr(self, f)) for f in RECORD_FIELDS]


@dataclass(frozen=True)
class FailureRecord:
    scenario: str
    outcome_kind: str
    rep: int
    method: str
    omission: str
    error: str
    message: str


@dataclass(frozen=True)
class DatasetRecord:
    scenario: str
    outcome_kind: str
    rep: int
    true_tau: float
    outcome_sd: float


@dataclass(frozen=True)
class FitOptions:
    nested_restarts: int = 3
    max_inner_solves: int = 500
    aug_per_period: bool = False
    ife_factors: int = 0


# ---------------------------------------------------------------- methods


def _omission_label(method: str, omit: OmissionChoice | None) -> str:
    if method not in OMISSION_METHODS:
        return "NONE" if method.endswith("NOCOV") else "ALL"
    if omit is None or not omit.omitted:
        return "NONE"
    if all(c == ALL_CATEGORIES for _, c in omit.omitted):
        return "ALL"
    return omit.label


def fit_method(method: str, panel: PanelData, spec: CompositionalSpec, omit: OmissionChoice | None,
               opts: FitOptions = FitOptions(), seed: int = 0):
    """Fit one registered method; the result has ``att_mean``, ``att_series`` and ``rmspe_pre``.

    ``omit`` only matters for omission-taking methods; ``None`` there means
    "no covariates at all".
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    nested = NestedOptions(restarts=opts.nested_restarts, max_inner_solves=opts.max_inner_solves, seed=seed)
    if method in OMISSION_METHODS:
        cov_spec = spec if omit is not None else NO_COVARIATES
        design = build_design(panel, cov_spec, omit if omit is not None else None)
    elif method.endswith("NOCOV"):
        cov_spec, design = NO_COVARIATES, build_design(panel, NO_COVARIATES)
    else:
        cov_spec, design = spec, build_design(panel, spec)

    if method in ("SYNTH_NESTED", "SYNTH_REGWEIGHTS"):
        v, fallback = regression_v_or_uniform(design, panel)
        if method == "SYNTH_NESTED":
            fit = nested_fit(panel, design, v, nested, method=method)
        else:
            fit = fixed_v_fit(panel, design, v, method=method)
        fit.v_fallback = fallback
        return fit
    if method == "SYNTH_ALLCATS":
        # the full category set is collinear by construction: skip the regression
        return nested_fit(panel, design, uniform_v(design), nested, method=method)
    if method == "SYNTH_NOCOV":
        return fixed_v_fit(panel, design, uniform_v(design), method=method)
    if method.startswith("AUGSYNTH"):
        mode = {
            "AUGSYNTH": AugMode.ALL_COVARIATES,
            "AUGSYNTH_ALLCATS": AugMode.ALL_COVARIATES,
            "AUGSYNTH_NOCOV": AugMode.NO_COVARIATES,
            "AUGSYNTH_RESID": AugMode.RESIDUALIZED,
        }[method]
        return augmented_fit(panel, design, mode, per_period=opts.aug_per_period, method=method)
    mode = "ALL" if method == "IFE_COV" and not cov_spec.is_empty else "NONE"
    return ife_fit(panel, cov_spec, omit if mode == "ALL" else None, mode, r=opts.ife_factors, method=method)


def omissions_for(policy: str, spec: CompositionalSpec, single: str | None = None) -> list[OmissionChoice | None]:
    """Omission choices an omission-taking method is run under."""
    if spec.is_empty or policy == "NONE":
        return [None]
    if policy == "SWEEP_ALL":
        return list(enumerate_omissions(spec))
    if policy == "ALL_CATEGORIES":
        return [OmissionChoice.all_categories(spec)]
    if single is None:
        return [enumerate_omissions(spec)[0]]
    choice = OmissionChoice.parse(single)
    choice.validate(spec)
    return [choice]


# ---------------------------------------------------------------- config


def _scenario_from_dict(d, defaults: dict) -> ScenarioConfig | ToyScenario:
    if isinstance(d, str):
        overlap, _, kind = d.partition(":")
        d = {"overlap": overlap, **({"outcome_kind": kind} if kind else {})}
    if not isinstance(d, dict):
        raise ConfigError(f"scenario must be an object or 'OVERLAP:KIND', got {d!r}")
    d = dict(d)
    if d.get("overlap") == TOY:
        extra = set(d) - {"overlap", "n_controls", "t_post"}
        if extra:
            raise ConfigError(f"unknown toy scenario fields {sorted(extra)}")
        return ToyScenario(int(d.get("n_controls", 200)), int(d.get("t_post", 1)))
    allowed = {"overlap", "outcome_kind", "n_units", "T", "t0", "tau", "tau_multiplier"}
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown scenario fields {sorted(extra)}")
    merged = {**{k: v for k, v in defaults.items() if v is not None}, **d}
    try:
        return ScenarioConfig(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario {d!r}: {exc}") from None


def _scenario_to_dict(s) -> dict:
    if isinstance(s, ToyScenario):
        return {"overlap": TOY, "n_controls": s.n_controls, "t_post": s.t_post}
    d = asdict(s)
    d.pop("seed")
    d["overlap"] = s.overlap.value
    d["outcome_kind"] = s.outcome_kind.value
    return d


@dataclass(frozen=True)
class ExperimentConfig:
    scenarios: tuple = (ScenarioConfig(Overlap.STATE_OFFSET, OutcomeKind.FACTOR),)
    methods: tuple[str, ...] = METHODS
    omission_policy: str = "SINGLE"
    omission: str | None = None
    replications: int = 100
    seed: int = 0
    calibration: str | None = None
    output_dir: str = "scmyth-out"
    workers: int = 1
    nested_restarts: int = 3
    max_inner_solves: int = 500
    aug_per_period: bool = False
    ife_factors: int = 0
    per_period_rmse: bool = False
    rank_methods: tuple[str, ...] = RANK_METHODS

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.scenarios:
            raise ConfigError("at least one scenario is required")
        if not self.methods:
            raise ConfigError("at least one method is required")
        for m in (*self.methods, *self.rank_methods):
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods must not repeat")
        if self.omission_policy not in OMISSION_POLICIES:
            raise ConfigError(f"omission_policy must be one of {', '.join(OMISSION_POLICIES)}")
        if self.nested_restarts < 0 or self.max_inner_solves < 1 or self.ife_factors < 0:
            raise ConfigError("nested_restarts, max_inner_solves and ife_factors must be nonnegative")

    @property
    def fit_options(self) -> FitOptions:
        return FitOptions(self.nested_restarts, self.max_inner_solves, self.aug_per_period, self.ife_factors)

    @classmethod
    def from_dict(cls, doc: dict, overrides: dict | None = None) -> "ExperimentConfig":
        """Build from a JSON document; non-``None`` ``overrides`` win over file values."""
        doc = {**doc, **{k: v for k, v in (overrides or {}).items() if v is not None}}
        version = doc.pop("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema_version {version!r}")
        defaults = {k: doc.pop(k, None) for k in ("n_units", "T", "t0", "tau", "tau_multiplier")}
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config fields {sorted(extra)}")
        scen = doc.pop("scenarios", None)
        if scen is None:
            # only the cell identity; sizes come from the top-level defaults
            scen = [{k: _scenario_to_dict(s)[k] for k in ("overlap", "outcome_kind")} for s in cls.scenarios]
        if not isinstance(scen, list):
            raise ConfigError("scenarios must be a list")
        kwargs = {k: tuple(v) if k in ("methods", "rank_methods") else v for k, v in doc.items()}
        try:
            return cls(scenarios=tuple(_scenario_from_dict(s, defaults) for s in scen), **kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scenarios"] = [_scenario_to_dict(s) for s in self.scenarios]
        d["methods"] = list(self.methods)
        d["rank_methods"] = list(self.rank_methods)
        return {"schema_version": CONFIG_SCHEMA_VERSION, **d}

    def config_hash(self) -> str:
        """Hash of everything that affects results (not paths or worker count)."""
        d = self.to_dict()
        for k in ("output_dir", "workers", "calibration"):
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------- running


@dataclass
class ReplicationResult:
    records: list[EstimateRecord]
    failures: list[FailureRecord]
    dataset: DatasetRecord


def _dataset(scenario, calib: CalibrationSet, ss: np.random.SeedSequence):
    if isinstance(scenario, ToyScenario):
        ds = toy_overfit_scenario(scenario.n_controls, scenario.t_post, np.random.default_rng(ss))
        return ds, TOY, ToyScenario.outcome_label
    ds = simulate_dataset(scenario, calib, seed=ss)
    return ds, scenario.scenario_id, scenario.outcome_kind.value


def replication_seed(master: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master), int(rep)])


def run_replication(config: ExperimentConfig, scenario, rep: int, calib: CalibrationSet) -> ReplicationResult:
    ss = replication_seed(config.seed, rep)
    ds, sid, kind = _dataset(scenario, calib, ss)
    panel, spec = ds.panel, ds.spec
    fit_seed = int(np.random.SeedSequence([int(config.seed), int(rep), 1]).generate_state(1)[0])
    records, failures = [], []
    choices = omissions_for(config.omission_policy, spec, config.omission)
    opts = config.fit_options
    for method in config.methods:
        for omit in choices if method in OMISSION_METHODS else [None]:
            label = _omission_label(method, omit)
            try:
                fit = fit_method(method, panel, spec, omit, opts, seed=fit_seed)
                bias = fit.att_mean - ds.true_tau
                if not (math.isfinite(bias) and math.isfinite(fit.rmspe_pre)):
                    raise FloatingPointError("non-finite estimate")
            except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
                logger.warning(
                    "fit failed", extra={"event": "fit_failure", "scenario": sid, "outcome_kind": kind,
                                         "rep": rep, "method": method, "omission": label, "error": repr(exc)}
                )
                failures.append(FailureRecord(sid, kind, rep, method, label, type(exc).__name__, str(exc)))
                continue
            mse_post = float(np.mean((np.asarray(fit.att_series) - ds.true_tau) ** 2))
            records.append(EstimateRecord(sid, kind, rep, method, label, fit.att_mean, fit.rmspe_pre, bias, mse_post))
    sd = float(np.std(panel.outcome, ddof=1))
    return ReplicationResult(records, failures, DatasetRecord(sid, kind, rep, ds.true_tau, sd))


def _task(args):
    return run_replication(*args)


@dataclass
class ExperimentReport:
    records: list[EstimateRecord]
    failures: list[FailureRecord]
    datasets: list[DatasetRecord]
    tables: dict[str, list[dict]] = field(default_factory=dict)

    def summary(self) -> list[str]:
        lines = [f"{len(self.records)} estimates, {len(self.failures)} failed fits"]
        for row in self.tables.get("fig1_rmse", []):
            lines.append(
                f"{row['scenario']:>16} {row['outcome_kind']:>6} {row['method']:<17} rmse={row['rmse']:.6g}"
            )
        return lines


def check_omission(config: ExperimentConfig, spec: CompositionalSpec) -> None:
    """Reject an omission label that does not name one category per group of ``spec``."""
    try:
        omissions_for(config.omission_policy, spec, config.omission)
    except ValueError as exc:
        raise ConfigError(f"invalid omission {config.omission!r}: {exc}") from None


def run_experiment(config: ExperimentConfig, calib: CalibrationSet | None = None) -> ExperimentReport:
    """Simulate every (scenario, replication), fit every method, aggregate."""
    if calib is None:
        calib = load_calibration(config.calibration)
    check_omission(config, calib.spec)
    tasks = [(config, s, rep, calib) for s in config.scenarios for rep in range(config.replications)]
    records, failures, datasets = [], [], []

    def collect(res: ReplicationResult):
        records.extend(res.records)
        failures.extend(res.failures)
        datasets.append(res.dataset)
        d = res.dataset
        logger.info(
            "replication done",
            extra={"event": "replication", "scenario": d.scenario, "outcome_kind": d.outcome_kind,
                   "rep": d.rep, "n_estimates": len(res.records), "n_failures": len(res.failures)},
        )

    if config.workers == 1 or len(tasks) == 1:
        for t in tasks:
            collect(_task(t))
    else:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for res in pool.map(_task, tasks, chunksize=1):
                collect(res)
    report = ExperimentReport(records, failures, datasets)
    report.tables = build_tables(records, failures, datasets, config.rank_methods, config.per_period_rmse)
    return report


# ---------------------------------------------------------------- aggregation


def _groups(records: Sequence[EstimateRecord]):
    """Records grouped by (scenario, outcome_kind, method), first-seen order."""
    out: dict[tuple, list[EstimateRecord]] = {}
    for r in records:
        out.setdefault((r.scenario, r.outcome_kind, r.method), []).append(r)
    return out


def _ordered_unique(values):
    return list(dict.fromkeys(values))


def fig1_table(records, failures, per_period: bool = False) -> list[dict]:
    """RMSE over replications, averaged over omission choices."""
    fail_counts = defaultdict(int)
    for f in failures:
        fail_counts[(f.scenario, f.outcome_kind, f.method)] += 1
    rows = []
    for key, recs in _groups(records).items():
        by_om = defaultdict(list)
        for r in recs:
            by_om[r.omission].append(r)
        rmses = [rmse_over_reps([r.bias for r in rs]) for rs in by_om.values()]
        row = {
            "scenario": key[0],
            "outcome_kind": key[1],
            "method": key[2],
            "n_omissions": len(by_om),
            "n_records": len(recs),
            "n_failures": fail_counts[key],
            "rmse": float(np.mean(rmses)),
            "mean_abs_bias": mean_abs_bias([r.bias for r in recs]),
        }
        if per_period:
            row["rmse_per_period"] = float(np.mean([np.sqrt(np.mean([r.mse_post for r in rs])) for rs in by_om.values()]))
        rows.append(row)
    return rows


def fig2_table(records, datasets) -> list[dict]:
    """SD of ATT across omission choices relative to the outcome SD, per replication."""
    sd = {(d.scenario, d.outcome_kind, d.rep): d.outcome_sd for d in datasets}
    rows = []
    for key, recs in _groups(records).items():
        expected = _ordered_unique(r.omission for r in recs)
        if len(expected) < 2:
            continue
        by_rep = defaultdict(dict)
        for r in recs:
            by_rep[r.rep][r.omission] = r.att_mean
        ratios, incomplete = [], 0
        for rep, est in by_rep.items():
            try:
                ratios.append(refcat_sd_ratio_checked(est, expected, sd[(key[0], key[1], rep)]))
            except KeyError:
                incomplete += 1
        if not ratios:
            continue
        rows.append({
            "scenario": key[0],
            "outcome_kind": key[1],
            "method": key[2],
            "n_omissions": len(expected),
            "n_reps": len(ratios),
            "n_incomplete": incomplete,
            "mean_ratio": float(np.mean(ratios)),
            "median_ratio": float(np.median(ratios)),
            "max_ratio": float(np.max(ratios)),
        })
    return rows


def _per_rep(records) -> dict:
    """``(scenario, kind, rep) -> {method: record}``, keeping the first omission per method."""
    out: dict[tuple, dict] = {}
    for r in records:
        out.setdefault((r.scenario, r.outcome_kind, r.rep), {}).setdefault(r.method, r)
    return out


def fig4_table(records, families=None) -> list[dict]:
    """Mean |bias| of each arm, conditional on which arm had the lowest pre-period imbalance."""
    families = FAMILIES if families is None else families
    reps = _per_rep(records)
    cells = _ordered_unique((k[0], k[1]) for k in reps)
    rows = []
    for scen, kind in cells:
        keys = [k for k in reps if k[:2] == (scen, kind)]
        for fam, arms in families.items():
            complete = [reps[k] for k in keys if all(a in reps[k] for a in arms)]
            if not complete:
                continue
            by_winner = defaultdict(list)
            for rec in complete:
                imb = [rec[a].rmspe_pre for a in arms]
                by_winner[arms[int(np.argmin(imb))]].append(rec)
            for winner in arms:
                group = by_winner.get(winner, [])
                for arm in arms:
                    rows.append({
                        "scenario": scen,
                        "outcome_kind": kind,
                        "family": fam,
                        "lowest_imbalance": winner,
                        "n_reps": len(group),
                        "share": len(group) / len(complete),
                        "method": arm,
                        "mean_abs_bias": mean_abs_bias([g[arm].bias for g in group]) if group else math.nan,
                    })
    return rows


def fig6_table(records) -> list[dict]:
    rows = []
    for key, recs in _groups(records).items():
        rho = spearman_rho([r.rmspe_pre for r in recs], [abs(r.bias) for r in recs]) if len(recs) >= 2 else math.nan
        rows.append({"scenario": key[0], "outcome_kind": key[1], "method": key[2], "n": len(recs), "spearman_rho": rho})
    return rows


def fig8_table(records, methods: Sequence[str] = RANK_METHODS) -> list[dict]:
    """Rank-proportion matrices per (scenario, outcome) and pooled over everything."""
    reps = _per_rep(records)
    present = [m for m in methods if any(m in v for v in reps.values())]
    if len(present) < 2:
        return []
    cells = _ordered_unique((k[0], k[1]) for k in reps)
    rows = []
    for scen, kind in [*cells, ("ALL", "ALL")]:
        keys = [k for k in reps if (scen, kind) == ("ALL", "ALL") or k[:2] == (scen, kind)]
        complete = [reps[k] for k in keys if all(m in reps[k] for m in present)]
        if not complete:
            continue
        imb = np.array([[rec[m].rmspe_pre for m in present] for rec in complete])
        bias = np.array([[abs(rec[m].bias) for m in present] for rec in complete])
        mat = rank_matrix(imb, bias)
        for i in range(len(present)):
            for j in range(len(present)):
                rows.append({
                    "scenario": scen,
                    "outcome_kind": kind,
                    "n_reps": len(complete),
                    "methods": ";".join(present),
                    "imbalance_rank": i + 1,
                    "bias_rank": j + 1,
                    "proportion": float(mat[i, j]),
                })
    return rows


def build_tables(records, failures, datasets, rank_methods=RANK_METHODS, per_period=False) -> dict:
    return {
        "fig1_rmse": fig1_table(records, failures, per_period),
        "fig2_refcat": fig2_table(records, datasets),
        "fig4_conditional_bias": fig4_table(records),
        "fig6_spearman": fig6_table(records),
        "fig8_rankmatrix": fig8_table(records, rank_methods),
    }


# ---------------------------------------------------------------- files


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])


_TABLE_HEADERS = {
    "fig1_rmse": ("scenario", "outcome_kind", "method", "n_omissions", "n_records", "n_failures", "rmse", "mean_abs_bias"),
    "fig2_refcat": ("scenario", "outcome_kind", "method", "n_omissions", "n_reps", "n_incomplete",
                    "mean_ratio", "median_ratio", "max_ratio"),
    "fig4_conditional_bias": ("scenario", "outcome_kind", "family", "lowest_imbalance", "n_reps", "share",
                              "method", "mean_abs_bias"),
    "fig6_spearman": ("scenario", "outcome_kind", "method", "n", "spearman_rho"),
    "fig8_rankmatrix": ("scenario", "outcome_kind", "n_reps", "methods", "imbalance_rank", "bias_rank", "proportion"),
}


def write_tables(tables: dict, outdir: Path) -> list[str]:
    names = []
    for name, rows in tables.items():
        header = list(_TABLE_HEADERS[name])
        if name == "fig1_rmse" and rows and "rmse_per_period" in rows[0]:
            header.append("rmse_per_period")
        _write_csv(outdir / f"{name}.csv", header, ([r[h] for h in header] for r in rows))
        names.append(f"{name}.csv")
    return names


def write_raw(report: ExperimentReport, outdir: Path, per_period: bool = False) -> list[str]:
    _write_csv(outdir / "records.csv", RECORD_FIELDS, (r.row()[:] for r in report.records))
    _write_csv(outdir / "failures.csv", FAILURE_FIELDS,
               ([getattr(f, k) for k in FAILURE_FIELDS] for f in report.failures))
    _write_csv(outdir / "datasets.csv", DATASET_FIELDS,
               ([getattr(d, k) for k in DATASET_FIELDS] for d in report.datasets))
    names = ["records.csv", "failures.csv", "datasets.csv"]
    if per_period:
        _write_csv(outdir / "period_mse.csv", ("scenario", "outcome_kind", "rep", "method", "omission", "mse_post"),
                   ([r.scenario, r.outcome_kind, r.rep, r.method, r.omission, r.mse_post] for r in report.records))
        names.append("period_mse.csv")
    return names


def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(outdir: Path, config: ExperimentConfig, files: Sequence[str], status: str = "ok",
                   error: str | None = None, extra: dict | None = None) -> None:
    doc = {
        "status": status,
        "package_version": __version__,
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "files": {f: file_digest(outdir / f) for f in files if (outdir / f).exists()},
    }
    if error is not None:
        doc["error"] = error
    if extra:
        doc.update(extra)
    (outdir / "manifest.json").write_text(dumps_json(doc))


def write_experiment(report: ExperimentReport, config: ExperimentConfig, outdir) -> list[str]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    files = write_raw(report, outdir, config.per_period_rmse)
    files += write_tables(report.tables, outdir)
    write_manifest(outdir, config, files, extra={"n_records": len(report.records),
                                                 "n_failures": len(report.failures)})
    return files


def _read_rows(path: Path, fields: Sequence[str]) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames[: len(fields)]) != list(fields):
            raise ValueError(f"{path}: expected header {','.join(fields)}")
        return list(reader)


def read_records(path) -> list[EstimateRecord]:
    return [
        EstimateRecord(r["scenario"], r["outcome_kind"], int(r["rep"]), r["method"], r["omission"],
                       float(r["att_mean"]), float(r["rmspe_pre"]), float(r["bias"]))
        for r in _read_rows(Path(path), RECORD_FIELDS)
    ]


def read_failures(path) -> list[FailureRecord]:
    return [
        FailureRecord(r["scenario"], r["outcome_kind"], int(r["rep"]), r["method"], r["omission"], r["error"],
                      r["message"])
        for r in _read_rows(Path(path), FAILURE_FIELDS)
    ]


def read_datasets(path) -> list[DatasetRecord]:
    return [
        DatasetRecord(r["scenario"], r["outcome_kind"], int(r["rep"]), float(r["true_tau"]), float(r["outcome_sd"]))
        for r in _read_rows(Path(path), DATASET_FIELDS)
    ]


def regenerate_report(outdir, rank_methods: Sequence[str] | None = None) -> dict:
    """Rebuild every figure table from the raw CSVs in ``outdir`` and rewrite them."""
    outdir = Path(outdir)
    records = read_records(outdir / "records.csv")
    failures = read_failures(outdir / "failures.csv") if (outdir / "failures.csv").exists() else []
    datasets = read_datasets(outdir / "datasets.csv") if (outdir / "datasets.csv").exists() else []
    per_period = False
    if (outdir / "period_mse.csv").exists():
        mse = {}
        with open(outdir / "period_mse.csv", newline="") as fh:
            for r in csv.DictReader(fh):
                mse[(r["scenario"], r["outcome_kind"], int(r["rep"]), r["method"], r["omission"])] = float(r["mse_post"])
        records = [
            EstimateRecord(**{**asdict(r), "mse_post": mse.get((r.scenario, r.outcome_kind, r.rep, r.method, r.omission), math.nan)})
            for r in records
        ]
        per_period = True
    if rank_methods is None:
        rank_methods = RANK_METHODS
        manifest = outdir / "manifest.json"
        if manifest.exists():
            rank_methods = tuple(json.loads(manifest.read_text()).get("config", {}).get("rank_methods", RANK_METHODS))
    tables = build_tables(records, failures, datasets, rank_methods, per_period)
    write_tables(tables, outdir)
    return tables
