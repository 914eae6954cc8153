"""Panel data container, compositional covariate bookkeeping and design matrices."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

ALL_CATEGORIES = "ALL"
CLOSURE_TOL = 1e-9

COLUMN_SCALAR = "scalar"
COLUMN_CATEGORY = "category"
COLUMN_OUTCOME = "outcome"


class PanelError(ValueError):
    """Raised for malformed panels, specs or omission choices."""


@dataclass(frozen=True)
class CompositionalSpec:
    """Covariate layout: compositional groups plus free-standing scalar covariates.

    ``groups`` is a sequence of ``(group_name, category_names)`` pairs. Category
    names double as covariate column names in the panel, so they must be unique
    across the whole spec.
    """

    groups: tuple[tuple[str, tuple[str, ...]], ...] = ()
    scalar_covariates: tuple[str, ...] = ()

    def __post_init__(self):
        groups = tuple((str(g), tuple(str(c) for c in cats)) for g, cats in self.groups)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "scalar_covariates", tuple(self.scalar_covariates))
        seen: set[str] = set(self.scalar_covariates)
        if len(seen) != len(self.scalar_covariates):
            raise PanelError("duplicate scalar covariate names")
        group_names = [g for g, _ in groups]
        if len(set(group_names)) != len(group_names):
            raise PanelError("duplicate group names")
        for name, cats in groups:
            if len(cats) < 2:
                raise PanelError(f"group {name!r} needs at least 2 categories")
            if len(set(cats)) != len(cats):
                raise PanelError(f"duplicate category names in group {name!r}")
            clash = seen.intersection(cats)
            if clash:
                raise PanelError(f"column names reused across groups: {sorted(clash)}")
            seen.update(cats)

    @classmethod
    def from_mapping(cls, groups: Mapping[str, Sequence[str]], scalars: Sequence[str] = ()):
        return cls(tuple((g, tuple(c)) for g, c in groups.items()), tuple(scalars))

    @property
    def group_names(self) -> tuple[str, ...]:
        return tuple(g for g, _ in self.groups)

    def categories(self, group: str) -> tuple[str, ...]:
        for g, cats in self.groups:
            if g == group:
                return cats
        raise PanelError(f"unknown group {group!r}")

    @property
    def covariate_names(self) -> tuple[str, ...]:
        names = list(self.scalar_covariates)
        for _, cats in self.groups:
            names.extend(cats)
        return tuple(names)

    @property
    def is_empty(self) -> bool:
        return not self.groups and not self.scalar_covariates


NO_COVARIATES = CompositionalSpec()


@dataclass(frozen=True)
class OmissionChoice:
    """Which category each group drops; ``ALL_CATEGORIES`` keeps the whole group."""

    omitted: tuple[tuple[str, str], ...] = ()

    @classmethod
    def all_categories(cls, spec: CompositionalSpec) -> "OmissionChoice":
        return cls(tuple((g, ALL_CATEGORIES) for g in spec.group_names))

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, str]) -> "OmissionChoice":
        return cls(tuple((str(g), str(c)) for g, c in mapping.items()))

    @classmethod
    def parse(cls, label: str) -> "OmissionChoice":
        """Inverse of :attr:`label`."""
        if label in ("", "NONE"):
            return cls()
        pairs = []
        for part in label.split("|"):
            group, sep, cat = part.partition("=")
            if not sep:
                raise PanelError(f"bad omission label {label!r}")
            pairs.append((group, cat))
        return cls(tuple(pairs))

    def as_dict(self) -> dict[str, str]:
        return dict(self.omitted)

    def for_group(self, group: str) -> str:
        return self.as_dict().get(group, ALL_CATEGORIES)

    @property
    def label(self) -> str:
        if not self.omitted:
            return "NONE"
        return "|".join(f"{g}={c}" for g, c in self.omitted)

    def validate(self, spec: CompositionalSpec) -> None:
        names = set(spec.group_names)
        for group, cat in self.omitted:
            if group not in names:
                raise PanelError(f"omission refers to unknown group {group!r}")
            if cat != ALL_CATEGORIES and cat not in spec.categories(group):
                raise PanelError(f"unknown omitted category {cat!r} in group {group!r}")

    def kept_columns(self, spec: CompositionalSpec) -> list[str]:
        """Scalar covariates followed by the retained category columns."""
        self.validate(spec)
        cols = list(spec.scalar_covariates)
        for group, cats in spec.groups:
            drop = self.for_group(group)
            cols.extend(c for c in cats if c != drop)
        return cols


def enumerate_omissions(spec: CompositionalSpec) -> list[OmissionChoice]:
    """Every way of dropping exactly one category from each group.

    Ordered lexicographically by the categories' declared positions, so the
    output is stable across runs. An empty spec yields a single empty choice.
    """
    names = spec.group_names
    cats = [spec.categories(g) for g in names]
    return [OmissionChoice(tuple(zip(names, combo))) for combo in itertools.product(*cats)]


@dataclass(frozen=True, eq=False)
class PanelData:
    """Balanced panel with one treated unit.

    ``outcome`` is ``T x N`` (rows are periods); covariates map a column name to
    a ``T x N`` array. The treated unit index defaults to 0 and ``t0`` is the
    last pre-treatment period, counted from 1.
    """

    unit_ids: tuple
    times: np.ndarray
    outcome: np.ndarray
    t0: int
    covariates: Mapping[str, np.ndarray] = field(default_factory=dict)
    treated_unit: int = 0

    def __post_init__(self):
        outcome = np.array(self.outcome, dtype=float)
        times = np.array(self.times)
        unit_ids = tuple(self.unit_ids)
        if outcome.ndim != 2:
            raise PanelError("outcome must be a T x N matrix")
        T, N = outcome.shape
        if len(unit_ids) != N or len(set(unit_ids)) != N:
            raise PanelError("unit_ids must be unique and match outcome columns")
        if times.shape != (T,) or (T > 1 and np.any(np.diff(times) <= 0)):
            raise PanelError("times must be strictly increasing with one entry per row")
        if not 1 <= int(self.t0) < T:
            raise PanelError(f"t0 must satisfy 1 <= t0 < T (got t0={self.t0}, T={T})")
        if N < 2:
            raise PanelError("panel needs a treated unit and at least one donor")
        if not 0 <= self.treated_unit < N:
            raise PanelError("treated_unit out of range")
        if not np.all(np.isfinite(outcome)):
            raise PanelError("outcome has missing or non-finite cells")
        covs = {}
        for name, values in self.covariates.items():
            arr = np.array(values, dtype=float)
            if arr.shape != (T, N):
                raise PanelError(f"covariate {name!r} must be T x N")
            if not np.all(np.isfinite(arr)):
                raise PanelError(f"covariate {name!r} has missing cells")
            arr.setflags(write=False)
            covs[name] = arr
        outcome.setflags(write=False)
        times.setflags(write=False)
        object.__setattr__(self, "outcome", outcome)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "unit_ids", unit_ids)
        object.__setattr__(self, "t0", int(self.t0))
        object.__setattr__(self, "covariates", covs)

    @property
    def n_periods(self) -> int:
        return self.outcome.shape[0]

    @property
    def n_units(self) -> int:
        return self.outcome.shape[1]

    @property
    def donors(self) -> np.ndarray:
        return np.array([i for i in range(self.n_units) if i != self.treated_unit])

    @property
    def treated_path(self) -> np.ndarray:
        return self.outcome[:, self.treated_unit]

    @property
    def donor_paths(self) -> np.ndarray:
        """``T x J`` outcome matrix of the donor pool."""
        return self.outcome[:, self.donors]

    def covariate(self, name: str) -> np.ndarray:
        try:
            return self.covariates[name]
        except KeyError:
            raise PanelError(f"panel has no covariate {name!r}") from None

    def check_closure(self, spec: CompositionalSpec, tol: float = CLOSURE_TOL) -> None:
        for group, cats in spec.groups:
            total = sum(self.covariate(c) for c in cats)
            err = float(np.max(np.abs(total - 1.0)))
            if err > tol:
                raise PanelError(f"group {group!r} shares do not sum to 1 (max error {err:.3g})")

    def with_outcome(self, outcome: np.ndarray) -> "PanelData":
        return PanelData(self.unit_ids, self.times, outcome, self.t0, self.covariates, self.treated_unit)

    def with_t0(self, t0: int) -> "PanelData":
        return PanelData(self.unit_ids, self.times, self.outcome, t0, self.covariates, self.treated_unit)


def pre_outcome_summary(panel: PanelData, unit: int) -> float:
    """Mean outcome of ``unit`` over periods ``1..t0``."""
    return float(np.mean(panel.outcome[: panel.t0, unit]))


@dataclass(frozen=True, eq=False)
class DesignMatrices:
    """Predictor matrices for the treated unit (``x1``) and the donors (``x0``, k x J)."""

    x1: np.ndarray
    x0: np.ndarray
    column_names: tuple[str, ...]
    column_kinds: tuple[str, ...]

    def __post_init__(self):
        x1 = np.array(self.x1, dtype=float).reshape(-1)
        x0 = np.array(self.x0, dtype=float)
        if x0.ndim == 1:
            x0 = x0.reshape(1, -1)
        k = x1.shape[0]
        if x0.shape[0] != k or len(self.column_names) != k or len(self.column_kinds) != k:
            raise PanelError("x1, x0 and column labels disagree on k")
        if x0.shape[1] < 1:
            raise PanelError("empty donor pool")
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "column_names", tuple(self.column_names))
        object.__setattr__(self, "column_kinds", tuple(self.column_kinds))

    @property
    def k(self) -> int:
        return self.x1.shape[0]

    @property
    def n_donors(self) -> int:
        return self.x0.shape[1]

    @property
    def covariate_mask(self) -> np.ndarray:
        return np.array([kind != COLUMN_OUTCOME for kind in self.column_kinds], dtype=bool)

    def select(self, mask) -> "DesignMatrices":
        mask = np.asarray(mask, dtype=bool)
        names = tuple(n for n, m in zip(self.column_names, mask) if m)
        kinds = tuple(n for n, m in zip(self.column_kinds, mask) if m)
        return DesignMatrices(self.x1[mask], self.x0[mask], names, kinds)

    def standardized(self) -> "DesignMatrices":
        """Rows divided by their standard deviation across all units (treated + donors).

        Constant rows are left as they are.
        """
        full = np.column_stack([self.x1, self.x0])
        sd = full.std(axis=1, ddof=1) if full.shape[1] > 1 else np.ones(self.k)
        sd = np.where(sd > 0, sd, 1.0)
        return DesignMatrices(self.x1 / sd, self.x0 / sd[:, None], self.column_names, self.column_kinds)


def unit_covariate_means(panel: PanelData, names: Sequence[str]) -> np.ndarray:
    """``len(names) x N`` matrix of pre-treatment time means."""
    if not names:
        return np.zeros((0, panel.n_units))
    return np.vstack([panel.covariate(n)[: panel.t0].mean(axis=0) for n in names])


def build_design(
    panel: PanelData,
    spec: CompositionalSpec,
    omit: OmissionChoice | None = None,
    outcome_blocks: Sequence[tuple[int, int]] | None = None,
) -> DesignMatrices:
    """Assemble X1/X0 from covariate pre-treatment means and outcome summaries.

    Columns are ordered scalars, then each group's retained categories in
    declared order, then the outcome summaries. ``outcome_blocks`` lists
    inclusive ``(first, last)`` period numbers (1-based) to average; by default
    a single block covering ``1..t0``.
    """
    if omit is None:
        omit = OmissionChoice.all_categories(spec)
    if panel.n_units < 2:
        raise PanelError("empty donor pool")
    panel.check_closure(spec)
    cov_cols = omit.kept_columns(spec)
    kinds = [COLUMN_SCALAR] * len(spec.scalar_covariates)
    kinds += [COLUMN_CATEGORY] * (len(cov_cols) - len(spec.scalar_covariates))

    blocks = list(outcome_blocks) if outcome_blocks is not None else [(1, panel.t0)]
    summaries = []
    names = list(cov_cols)
    for first, last in blocks:
        if not 1 <= first <= last <= panel.t0:
            raise PanelError(f"outcome block {(first, last)} leaves the pre-treatment window")
        summaries.append(panel.outcome[first - 1 : last].mean(axis=0))
        names.append("outcome_mean" if len(blocks) == 1 else f"outcome_mean_{first}_{last}")
        kinds.append(COLUMN_OUTCOME)

    full = np.vstack([unit_covariate_means(panel, cov_cols), *summaries]) if names else np.zeros((0, panel.n_units))
    donors = panel.donors
    return DesignMatrices(full[:, panel.treated_unit], full[:, donors], tuple(names), tuple(kinds))
