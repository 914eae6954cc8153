"""Command-line entry point: ``scmyth simulate|fit|experiment|report``.

Settings come from built-in defaults, then the ``--config`` JSON file, then
command-line flags (flags win). The calibration defaults to
``$SCMYTH_CALIBRATION`` when neither the file nor a flag names one.

Exit codes: 0 success, 2 configuration error, 3 fit failure, 4 I/O or input
format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .augment import CovariateRankError
from .calibration import CalibrationError, load_calibration
from .dgp import simulate_dataset
from .experiment import (
    METHODS,
    OMISSION_METHODS,
    OMISSION_POLICIES,
    TOY,
    ConfigError,
    ExperimentConfig,
    ToyScenario,
    check_omission,
    fit_method,
    omissions_for,
    regenerate_report,
    replication_seed,
    run_experiment,
    write_experiment,
    write_manifest,
)
from .io import PanelFormatError, dumps_json, panel_to_csv, read_panel_csv
from .panel import CompositionalSpec, PanelError
from .simplex import SolverError

EXIT_OK, EXIT_CONFIG, EXIT_FIT, EXIT_IO = 0, 2, 3, 4
_STANDARD_ATTRS = set(vars(logging.LogRecord("", 0, "", 0, "", (), None))) | {"message", "asctime"}


class JsonFormatter(logging.Formatter):
    """One JSON object per line; ``extra=`` fields are carried through."""

    def format(self, record: logging.LogRecord) -> str:
        doc = {"level": record.levelname, "logger": record.name, "msg": record.getMessage()}
        doc.update({k: v for k, v in vars(record).items() if k not in _STANDARD_ATTRS})
        return json.dumps(doc, default=str, sort_keys=True)


def _setup_logging(quiet: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter())
    root = logging.getLogger("scmyth")
    root.handlers[:] = [handler]
    root.setLevel(logging.WARNING if quiet else logging.INFO)
    root.propagate = False


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str, **details):
        super().__init__(message)
        self.code, self.kind, self.details = code, kind, details


def _load_config(args) -> ExperimentConfig:
    doc = {}
    if args.config is not None:
        try:
            doc = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise CliError(EXIT_IO, "io_error", f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_CONFIG, "config_error", f"config is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise CliError(EXIT_CONFIG, "config_error", "config must be a JSON object")
    overrides = {
        "replications": args.reps,
        "seed": args.seed,
        "calibration": args.calibration,
        "output_dir": args.out,
        "workers": getattr(args, "workers", None),
        "omission_policy": getattr(args, "omission_policy", None),
        "omission": getattr(args, "omission", None),
        "methods": getattr(args, "methods", None),
        "t0": args.t0,
        "scenarios": args.scenario,
    }
    try:
        config = ExperimentConfig.from_dict(doc, overrides)
    except (ConfigError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, "config_error", str(exc)) from None
    if config.calibration is not None and not Path(config.calibration).is_file():
        raise CliError(EXIT_CONFIG, "config_error", f"calibration file {config.calibration!r} does not exist")
    return config


def _load_calibration(path):
    try:
        return load_calibration(path)
    except CalibrationError as exc:
        raise CliError(EXIT_CONFIG, "config_error", f"invalid calibration: {exc}") from None
    except OSError as exc:
        raise CliError(EXIT_IO, "io_error", f"cannot read calibration: {exc}") from None


# ---------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    config = _load_config(args)
    calib = _load_calibration(config.calibration)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries, files = [], []
    for scenario in config.scenarios:
        if isinstance(scenario, ToyScenario):
            raise CliError(EXIT_CONFIG, "config_error", f"{TOY} datasets are generated inside experiments only")
        for rep in range(config.replications):
            ds = simulate_dataset(scenario, calib, seed=replication_seed(config.seed, rep))
            name = f"panel_{scenario.scenario_id}_{scenario.outcome_kind.value}_rep{rep:04d}.csv"
            panel_to_csv(ds.panel, out / name)
            files.append(name)
            entries.append({
                "file": name,
                "scenario": scenario.scenario_id,
                "outcome_kind": scenario.outcome_kind.value,
                "rep": rep,
                "seed": [config.seed, rep],
                "true_tau": ds.true_tau,
                "t0": ds.panel.t0,
                "counterfactual": ds.counterfactual,
            })
            logging.getLogger("scmyth.cli").info("panel written", extra={"event": "simulate", "file": name})
    write_manifest(out, config, files, extra={"command": "simulate", "datasets": entries})
    print(f"wrote {len(files)} panel(s) to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- fit


def _parse_groups(values) -> CompositionalSpec | None:
    if not values:
        return None
    groups = []
    for item in values:
        name, sep, cats = item.partition("=")
        if not sep or not cats:
            raise CliError(EXIT_CONFIG, "config_error", f"--group expects NAME=cat1,cat2,..., got {item!r}")
        groups.append((name, tuple(c.strip() for c in cats.split(","))))
    return groups


def _fit_spec(panel, args) -> CompositionalSpec:
    groups = _parse_groups(args.group)
    scalars = tuple(args.scalar or ())
    if groups is not None or scalars:
        try:
            return CompositionalSpec(tuple(groups or ()), scalars)
        except (PanelError, ValueError) as exc:
            raise CliError(EXIT_CONFIG, "config_error", str(exc)) from None
    calib_spec = _load_calibration(args.calibration).spec
    if set(calib_spec.covariate_names).issubset(panel.covariates):
        return calib_spec
    return CompositionalSpec((), tuple(panel.covariates))


def cmd_fit(args) -> int:
    try:
        panel = read_panel_csv(args.panel)
    except OSError as exc:
        raise CliError(EXIT_IO, "io_error", f"cannot read panel: {exc}") from None
    except PanelFormatError as exc:
        raise CliError(EXIT_IO, "parse_error", str(exc), line=exc.line, column=exc.column) from None
    except PanelError as exc:
        raise CliError(EXIT_IO, "parse_error", str(exc)) from None
    if args.t0 is not None:
        try:
            panel = panel.with_t0(args.t0)
        except PanelError as exc:
            raise CliError(EXIT_CONFIG, "config_error", str(exc)) from None
    spec = _fit_spec(panel, args)
    omit = None
    if args.method in OMISSION_METHODS and not spec.is_empty:
        # same default as the experiment's SINGLE policy
        try:
            omit = omissions_for("SINGLE", spec, args.omission)[0]
        except PanelError as exc:
            raise CliError(EXIT_CONFIG, "config_error", str(exc)) from None
    try:
        fit = fit_method(args.method, panel, spec, omit, seed=args.seed or 0)
    except (SolverError, CovariateRankError, np.linalg.LinAlgError, ArithmeticError, ValueError) as exc:
        raise CliError(EXIT_FIT, "fit_failure", str(exc), method=args.method) from None
    doc = {
        "method": args.method,
        "omission": omit.label if omit is not None else ("NONE" if spec.is_empty else "ALL"),
        "panel": str(args.panel),
        "t0": panel.t0,
        "treated_unit": panel.unit_ids[panel.treated_unit],
        "fit": fit.to_dict(),
    }
    text = dumps_json(doc)
    if args.out is not None:
        try:
            Path(args.out).write_text(text)
        except OSError as exc:
            raise CliError(EXIT_IO, "io_error", f"cannot write fit: {exc}") from None
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- experiment / report


def cmd_experiment(args) -> int:
    config = _load_config(args)
    calib = _load_calibration(config.calibration)
    try:
        check_omission(config, calib.spec)
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, "config_error", str(exc)) from None
    out = Path(config.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, "io_error", f"cannot create output directory: {exc}") from None
    try:
        report = run_experiment(config, calib)
        write_experiment(report, config, out)
    except OSError as exc:
        write_manifest(out, config, [], status="failed", error=str(exc))
        raise CliError(EXIT_IO, "io_error", str(exc)) from None
    except Exception as exc:
        write_manifest(out, config, [], status="failed", error=f"{type(exc).__name__}: {exc}")
        raise
    if not args.quiet:
        print("\n".join(report.summary()))
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.dir)
    if not (out / "records.csv").is_file():
        raise CliError(EXIT_IO, "io_error", f"{out / 'records.csv'} not found")
    try:
        tables = regenerate_report(out)
    except (ValueError, KeyError) as exc:
        raise CliError(EXIT_IO, "parse_error", str(exc)) from None
    print(f"regenerated {len(tables)} tables in {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_run_options(p: argparse.ArgumentParser, experiment: bool) -> None:
    p.add_argument("--config", help="JSON config file (schema_version 1)")
    p.add_argument("--reps", type=int, help="replications per scenario")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--calibration", help="calibration JSON (default: $SCMYTH_CALIBRATION or the shipped file)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--t0", type=int, help="override the last pre-treatment period")
    p.add_argument("--scenario", action="append",
                   help="OVERLAP:KIND, e.g. STATE_OFFSET:FACTOR (repeatable; replaces the config's list)")
    if experiment:
        p.add_argument("--workers", type=int, help="worker processes")
        p.add_argument("--methods", nargs="+", choices=METHODS)
        p.add_argument("--omission-policy", choices=OMISSION_POLICIES)
        p.add_argument("--omission", help="omission label for the SINGLE policy, e.g. race=white|education=hs|industry=ind0")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scmyth", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--quiet", action="store_true", help="only warnings and errors on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write simulated panel CSVs and a manifest")
    _add_run_options(p, experiment=False)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit one method to a panel CSV")
    p.add_argument("panel")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--omission", help="omission label, e.g. race=white|education=hs|industry=ind0")
    p.add_argument("--group", action="append", help="compositional group NAME=cat1,cat2,... (repeatable)")
    p.add_argument("--scalar", action="append", help="scalar covariate column (repeatable)")
    p.add_argument("--calibration", help="calibration whose covariate spec is used when no --group is given")
    p.add_argument("--t0", type=int, help="override the panel's treatment timing")
    p.add_argument("--seed", type=int, help="seed for the nested optimizer's restarts")
    p.add_argument("--out", help="write the fit JSON here instead of stdout")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("experiment", help="run a full Monte Carlo experiment")
    _add_run_options(p, experiment=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="rebuild figure tables from raw records")
    p.add_argument("dir", help="experiment output directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.quiet)
    try:
        return args.func(args)
    except CliError as exc:
        sys.stderr.write(json.dumps({"error": exc.kind, "message": str(exc), **exc.details}, sort_keys=True) + "\n")
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
