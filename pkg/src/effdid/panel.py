"""
Panel Data Module

Loads, validates and differences balanced long-format panels. A panel holds
outcomes Y[i][t], (possibly vector-valued) treatments D[i][t] and
time-invariant covariates X[i]; periods are remapped to 1..T internally.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import (
    MissingColumnError,
    NonNumericError,
    PanelError,
    PeriodOrderError,
    SpecificationError,
    TimeVaryingCovariateError,
    UnbalancedPanelError,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PanelSchema:
    """Column mapping for a long-format panel CSV"""
    unit_column: str
    period_column: str
    outcome_column: str
    treatment_columns: Tuple[str, ...]
    covariate_columns: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "treatment_columns", tuple(self.treatment_columns))
        object.__setattr__(self, "covariate_columns", tuple(self.covariate_columns))
        if not self.treatment_columns:
            raise SpecificationError("schema needs at least one treatment column")
        names = self.columns()
        if len(set(names)) != len(names):
            raise SpecificationError(f"schema column names must be distinct: {names}")

    def columns(self) -> List[str]:
        return [self.unit_column, self.period_column, self.outcome_column,
                *self.treatment_columns, *self.covariate_columns]


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class PanelDataset:
    """
    Balanced panel with N units and T periods.

    Arrays are read-only; `treatments` has shape (N, T, k) and `covariates`
    has shape (N, p) with p possibly 0.
    """
    outcomes: np.ndarray
    treatments: np.ndarray
    covariates: np.ndarray
    unit_ids: Tuple[str, ...]
    period_labels: Tuple[str, ...]
    covariate_names: Tuple[str, ...] = ()
    treatment_names: Tuple[str, ...] = ()
    outcome_name: str = "y"

    def __post_init__(self):
        Y = _frozen(self.outcomes)
        if Y.ndim != 2:
            raise PanelError("outcomes must be an N x T matrix")
        N, T = Y.shape
        D = np.asarray(self.treatments, dtype=float)
        if D.ndim == 2:
            D = D[:, :, None]
        if D.shape[:2] != (N, T):
            raise PanelError(f"treatments shape {D.shape} does not match outcomes {Y.shape}")
        X = np.asarray(self.covariates, dtype=float)
        if X.size == 0:
            X = np.zeros((N, 0))
        elif X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != N:
            raise PanelError(f"covariates have {X.shape[0]} rows, expected {N}")
        if len(self.unit_ids) != N or len(self.period_labels) != T:
            raise PanelError("unit_ids / period_labels do not match the outcome matrix")
        if not (np.isfinite(Y).all() and np.isfinite(D).all() and np.isfinite(X).all()):
            raise NonNumericError("panel contains non-finite values")

        object.__setattr__(self, "outcomes", Y)
        object.__setattr__(self, "treatments", _frozen(D))
        object.__setattr__(self, "covariates", _frozen(X))
        object.__setattr__(self, "unit_ids", tuple(str(u) for u in self.unit_ids))
        object.__setattr__(self, "period_labels", tuple(str(p) for p in self.period_labels))
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        object.__setattr__(self, "covariate_names", names)
        tnames = tuple(self.treatment_names) or tuple(f"d{j + 1}" for j in range(D.shape[2]))
        object.__setattr__(self, "treatment_names", tnames)

    @property
    def n_units(self) -> int:
        return self.outcomes.shape[0]

    @property
    def n_periods(self) -> int:
        return self.outcomes.shape[1]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    def treated_mask(self) -> np.ndarray:
        """(N, T) boolean: any treatment component nonzero (exact comparison)."""
        return (self.treatments != 0.0).any(axis=2)

    def design_matrix(self) -> np.ndarray:
        """Covariates with a leading intercept column."""
        return np.column_stack([np.ones(self.n_units), self.covariates])

    @classmethod
    def from_arrays(cls, outcomes: np.ndarray, treatments: np.ndarray,
                    covariates: Optional[np.ndarray] = None,
                    unit_ids: Optional[Sequence[str]] = None) -> "PanelDataset":
        """Build a panel from in-memory arrays with periods labelled 1..T."""
        Y = np.asarray(outcomes, dtype=float)
        N, T = Y.shape
        X = np.zeros((N, 0)) if covariates is None else np.asarray(covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        ids = tuple(unit_ids) if unit_ids is not None else tuple(str(i + 1) for i in range(N))
        return cls(outcomes=Y, treatments=treatments, covariates=X,
                   unit_ids=ids, period_labels=tuple(str(t) for t in range(1, T + 1)))


def _period_order(labels: Sequence[str]) -> List[str]:
    """Sort period labels numerically when every label parses as a number."""
    unique = sorted(set(labels))
    numeric = pd.to_numeric(pd.Series(unique), errors="coerce")
    if numeric.notna().all():
        values = numeric.to_numpy()
        if len(set(values)) != len(values):
            raise PeriodOrderError(f"period labels map to duplicate values: {unique}")
        return [label for _, label in sorted(zip(values, unique))]
    return unique


def _parse_float(cell: str) -> float:
    try:
        return float(cell)
    except ValueError:
        return np.nan


def _numeric_column(frame: pd.DataFrame, column: str) -> np.ndarray:
    raw = frame[column]
    empty = raw.str.strip() == ""
    if empty.any():
        row = int(np.flatnonzero(empty.to_numpy())[0]) + 2
        raise NonNumericError(f"empty cell in column '{column}' (line {row})",
                              {"column": column, "line": row})
    # correctly rounded parse, so values written with 17 significant digits load back bit-exact
    try:
        values = raw.astype(float).to_numpy()
    except ValueError:
        values = np.array([_parse_float(cell) for cell in raw], dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise NonNumericError(f"non-numeric value '{raw.iloc[row]}' in column '{column}' (line {row + 2})",
                              {"column": column, "line": row + 2})
    return values


def load_panel_csv(path: Union[str, Path], schema: PanelSchema) -> PanelDataset:
    """
    Load and validate a long-format panel CSV.

    Args:
        path: UTF-8, comma-separated file with a header row
        schema: Column mapping

    Returns:
        Validated PanelDataset with periods remapped to 1..T

    Raises:
        MissingColumnError, NonNumericError, UnbalancedPanelError,
        TimeVaryingCovariateError
    """
    path = Path(path)
    if not path.exists():
        raise PanelError(f"input file not found: {path}")

    logger.info(f"Loading panel from {path}")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8", sep=",")

    missing = [c for c in schema.columns() if c not in frame.columns]
    if missing:
        raise MissingColumnError(f"missing column(s): {', '.join(missing)}", {"columns": missing})

    units = frame[schema.unit_column].astype(str)
    periods = frame[schema.period_column].astype(str)
    if (units.str.strip() == "").any() or (periods.str.strip() == "").any():
        raise NonNumericError("empty unit or period identifier")

    y = _numeric_column(frame, schema.outcome_column)
    d = np.column_stack([_numeric_column(frame, c) for c in schema.treatment_columns])
    x = (np.column_stack([_numeric_column(frame, c) for c in schema.covariate_columns])
         if schema.covariate_columns else np.zeros((len(frame), 0)))

    period_labels = _period_order(periods.tolist())
    unit_labels = sorted(set(units.tolist()))
    N, T = len(unit_labels), len(period_labels)
    unit_index = {u: i for i, u in enumerate(unit_labels)}
    period_index = {p: t for t, p in enumerate(period_labels)}
    ui = units.map(unit_index).to_numpy()
    ti = periods.map(period_index).to_numpy()

    counts = np.zeros((N, T), dtype=int)
    np.add.at(counts, (ui, ti), 1)
    if (counts > 1).any():
        i, t = np.argwhere(counts > 1)[0]
        raise UnbalancedPanelError(f"unit '{unit_labels[i]}' has duplicate rows for period '{period_labels[t]}'")
    if (counts == 0).any():
        i, t = np.argwhere(counts == 0)[0]
        raise UnbalancedPanelError(f"unbalanced panel: unit '{unit_labels[i]}' missing period '{period_labels[t]}'",
                                   {"unit": unit_labels[i], "period": period_labels[t]})

    Y = np.empty((N, T))
    Y[ui, ti] = y
    D = np.empty((N, T, d.shape[1]))
    D[ui, ti, :] = d
    Xfull = np.empty((N, T, x.shape[1]))
    Xfull[ui, ti, :] = x
    varying = (Xfull != Xfull[:, :1, :]).any(axis=1)
    if varying.any():
        i, j = np.argwhere(varying)[0]
        raise TimeVaryingCovariateError(
            f"time-varying covariate '{schema.covariate_columns[j]}' for unit '{unit_labels[i]}'",
            {"unit": unit_labels[i], "column": schema.covariate_columns[j]})

    panel = PanelDataset(
        outcomes=Y,
        treatments=D,
        covariates=Xfull[:, 0, :],
        unit_ids=tuple(unit_labels),
        period_labels=tuple(period_labels),
        covariate_names=schema.covariate_columns,
        treatment_names=schema.treatment_columns,
        outcome_name=schema.outcome_column,
    )
    logger.info(f"Loaded panel: N={N}, T={T}, dim(D)={d.shape[1]}, dim(X)={x.shape[1]}")
    return panel


def write_panel_csv(panel: PanelDataset, path: Union[str, Path],
                    schema: Optional[PanelSchema] = None) -> PanelSchema:
    """
    Write a panel in long format (one row per unit-period).

    Returns:
        The schema used, so the file can be reloaded with `load_panel_csv`
    """
    schema = schema or PanelSchema(
        unit_column="unit",
        period_column="period",
        outcome_column=panel.outcome_name,
        treatment_columns=panel.treatment_names,
        covariate_columns=panel.covariate_names,
    )
    N, T = panel.n_units, panel.n_periods
    data = {
        schema.unit_column: np.repeat(panel.unit_ids, T),
        schema.period_column: np.tile(panel.period_labels, N),
        schema.outcome_column: panel.outcomes.reshape(-1),
    }
    for j, name in enumerate(schema.treatment_columns):
        data[name] = panel.treatments[:, :, j].reshape(-1)
    for j, name in enumerate(schema.covariate_columns):
        data[name] = np.repeat(panel.covariates[:, j], T)
    # repr-precision floats so a reload is numerically identical
    pd.DataFrame(data).to_csv(Path(path), index=False, float_format="%.17g")
    return schema


def outcome_difference(panel: PanelDataset, t: int, s: int) -> np.ndarray:
    """
    Outcome change Y[i][t] - Y[i][s] for every unit.

    Args:
        panel: Panel data
        t: Later period (1-based)
        s: Earlier period (1-based), 1 <= s < t <= T

    Returns:
        Length-N vector of differences
    """
    if not (1 <= s < t <= panel.n_periods):
        raise SpecificationError(f"outcome_difference needs 1 <= s < t <= T, got t={t}, s={s}")
    return panel.outcomes[:, t - 1] - panel.outcomes[:, s - 1]
