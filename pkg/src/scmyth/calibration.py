"""Calibration sets: coefficient means/covariances that parameterise the simulator.

A calibration is a JSON document (``schema_version`` 1). Predictor names use a
tiny vocabulary evaluated by :func:`scmyth.dgp.predictor_matrix`:

* ``const`` and ``year`` (year rescaled to [0, 1] over the horizon)
* any covariate column name, e.g. ``wage`` or ``ind1`` (contemporaneous)
* ``mean(x)``: the unit's pre-treatment mean of covariate ``x``
* ``year*mean(x)``: its interaction with year

Dirichlet families store ``coef_mean`` as a ``categories x predictors``
matrix and ``state_effects`` as ``states x categories``; the wage family and
outcome models store flat vectors. ``coef_cov`` is the covariance of the
row-major flattened coefficient vector.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .panel import CompositionalSpec

SCHEMA_VERSION = 1
ENV_VAR = "SCMYTH_CALIBRATION"
DIRICHLET_FAMILIES = ("industry", "education", "race")
OUTCOME_KINDS = ("LINEAR", "FACTOR")


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Family:
    name: str
    categories: tuple[str, ...]  # empty for the scalar wage family
    predictors: tuple[str, ...]
    coef_mean: np.ndarray  # (k, p) for Dirichlet families, (p,) otherwise
    coef_cov: np.ndarray
    state_effects: np.ndarray  # (S, k) or (S,)
    sigma_lambda: float
    state_effect_se: float = 0.0
    resid_sd: float = 0.0

    @property
    def is_dirichlet(self) -> bool:
        return bool(self.categories)


@dataclass(frozen=True, eq=False)
class OutcomeModel:
    kind: str
    predictors: tuple[str, ...]
    coef_mean: np.ndarray
    coef_cov: np.ndarray
    resid_sd: float


@dataclass(frozen=True, eq=False)
class CalibrationSet:
    name: str
    n_states: int
    groups: tuple[tuple[str, tuple[str, ...]], ...]
    families: dict
    outcomes: dict
    tau: float
    reference_sd: float
    composition_noise: bool = True
    description: str = ""

    @property
    def spec(self) -> CompositionalSpec:
        return CompositionalSpec(self.groups, ("wage",))

    def family(self, name: str) -> Family:
        return self.families[name]

    def outcome(self, kind: str) -> OutcomeModel:
        try:
            return self.outcomes[kind]
        except KeyError:
            raise CalibrationError(f"calibration has no outcome model {kind!r}") from None

    def zero_noise(self) -> "CalibrationSet":
        """Deterministic variant: no coefficient, residual or composition randomness."""
        fams = {
            n: Family(
                f.name, f.categories, f.predictors, f.coef_mean, np.zeros_like(f.coef_cov),
                f.state_effects, f.sigma_lambda, 0.0, 0.0,
            )
            for n, f in self.families.items()
        }
        outs = {
            k: OutcomeModel(o.kind, o.predictors, o.coef_mean, np.zeros_like(o.coef_cov), 0.0)
            for k, o in self.outcomes.items()
        }
        return CalibrationSet(
            self.name + "-zero-noise", self.n_states, self.groups, fams, outs,
            self.tau, self.reference_sd, False, self.description,
        )

    def to_dict(self) -> dict:
        def fam(f: Family):
            d = {
                "predictors": list(f.predictors),
                "coef_mean": f.coef_mean.tolist(),
                "coef_cov": f.coef_cov.tolist(),
                "state_effects": f.state_effects.tolist(),
                "sigma_lambda": f.sigma_lambda,
                "state_effect_se": f.state_effect_se,
            }
            if f.is_dirichlet:
                d["categories"] = list(f.categories)
            else:
                d["resid_sd"] = f.resid_sd
            return d

        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "description": self.description,
            "n_states": self.n_states,
            "groups": {g: list(c) for g, c in self.groups},
            "families": {n: fam(f) for n, f in self.families.items()},
            "outcome": {
                k: {
                    "predictors": list(o.predictors),
                    "coef_mean": o.coef_mean.tolist(),
                    "coef_cov": o.coef_cov.tolist(),
                    "resid_sd": o.resid_sd,
                }
                for k, o in self.outcomes.items()
            },
            "tau": self.tau,
            "reference_sd": self.reference_sd,
            "composition_noise": self.composition_noise,
        }


def _check_cov(name: str, cov: np.ndarray, n: int) -> None:
    if cov.shape != (n, n):
        raise CalibrationError(f"{name}: coef_cov must be {n}x{n}, got {cov.shape}")
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise CalibrationError(f"{name}: coef_cov is not symmetric")
    if n and np.linalg.eigvalsh(cov).min() < -1e-10:
        raise CalibrationError(f"{name}: coef_cov is not positive semidefinite")


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise CalibrationError(f"{where}: missing field {key!r}")
    return d[key]


def calibration_from_dict(doc: dict) -> CalibrationSet:
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise CalibrationError(f"unsupported calibration schema_version {version!r}")
    n_states = int(_require(doc, "n_states", "calibration"))
    groups_doc = _require(doc, "groups", "calibration")
    groups = tuple((g, tuple(c)) for g, c in groups_doc.items())
    for fam in DIRICHLET_FAMILIES:
        if fam not in groups_doc:
            raise CalibrationError(f"groups must declare {fam!r}")

    families = {}
    fam_docs = _require(doc, "families", "calibration")
    for name in (*DIRICHLET_FAMILIES, "wage"):
        fd = _require(fam_docs, name, "families")
        preds = tuple(_require(fd, "predictors", name))
        mean = np.asarray(_require(fd, "coef_mean", name), dtype=float)
        cov = np.asarray(_require(fd, "coef_cov", name), dtype=float)
        effects = np.asarray(_require(fd, "state_effects", name), dtype=float)
        if name in DIRICHLET_FAMILIES:
            cats = tuple(fd.get("categories", groups_doc[name]))
            if cats != tuple(groups_doc[name]):
                raise CalibrationError(f"{name}: categories disagree with groups")
            if mean.shape != (len(cats), len(preds)):
                raise CalibrationError(f"{name}: coef_mean must be {len(cats)}x{len(preds)}")
            if effects.shape != (n_states, len(cats)):
                raise CalibrationError(f"{name}: state_effects must be {n_states}x{len(cats)}")
            resid = 0.0
        else:
            cats = ()
            if mean.shape != (len(preds),):
                raise CalibrationError(f"{name}: coef_mean must have {len(preds)} entries")
            if effects.shape != (n_states,):
                raise CalibrationError(f"{name}: state_effects must have {n_states} entries")
            resid = float(_require(fd, "resid_sd", name))
        _check_cov(name, cov, mean.size)
        sigma = fd.get("sigma_lambda")
        sigma = float(np.std(effects, ddof=1)) if sigma is None else float(sigma)
        families[name] = Family(
            name, cats, preds, mean, cov, effects, sigma, float(fd.get("state_effect_se", 0.0)), resid
        )

    outcomes = {}
    out_doc = _require(doc, "outcome", "calibration")
    for kind in OUTCOME_KINDS:
        od = _require(out_doc, kind, "outcome")
        preds = tuple(_require(od, "predictors", kind))
        mean = np.asarray(_require(od, "coef_mean", kind), dtype=float)
        if mean.shape != (len(preds),):
            raise CalibrationError(f"{kind}: coef_mean must have {len(preds)} entries")
        cov = np.asarray(_require(od, "coef_cov", kind), dtype=float)
        _check_cov(kind, cov, len(preds))
        outcomes[kind] = OutcomeModel(kind, preds, mean, cov, float(_require(od, "resid_sd", kind)))

    return CalibrationSet(
        name=str(doc.get("name", "unnamed")),
        n_states=n_states,
        groups=groups,
        families=families,
        outcomes=outcomes,
        tau=float(_require(doc, "tau", "calibration")),
        reference_sd=float(doc.get("reference_sd", 0.0)),
        composition_noise=bool(doc.get("composition_noise", True)),
        description=str(doc.get("description", "")),
    )


def load_calibration(path: str | os.PathLike | None = None) -> CalibrationSet:
    """Load a calibration file; ``None`` means ``$SCMYTH_CALIBRATION`` or the shipped default."""
    if path is None:
        path = os.environ.get(ENV_VAR)
    if path is None:
        text = resources.files("scmyth.data").joinpath("default_calibration.json").read_text()
    else:
        text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CalibrationError(f"calibration is not valid JSON: {exc}") from exc
    return calibration_from_dict(doc)


def save_calibration(calib: CalibrationSet, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(calib.to_dict(), indent=1) + "\n")


def clone(calib: CalibrationSet) -> CalibrationSet:
    return calibration_from_dict(copy.deepcopy(calib.to_dict()))
