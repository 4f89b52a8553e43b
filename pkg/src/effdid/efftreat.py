"""
Effective Treatment Module

Maps each unit's treatment path to a low-dimensional effective treatment
E[i][t] and builds the mover/stayer frames that every estimator consumes.

Built-in specifications:
- once:   E_it = 1{D_i1..D_i,t+delta has a nonzero entry}
- event:  E_it = first period s <= t+delta with D_is != 0, else 0
- number: E_it = number of periods s <= t+delta with D_is != 0

Custom specifications take a callable (path, t, delta) -> int code.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptyCellError, SpecificationError, WarningRecord, record_warning
from .panel import PanelDataset, outcome_difference

logger = logging.getLogger(__name__)

BUILTIN_KINDS = ("once", "event", "number")

# (path of shape (T, k), t 1-based, delta) -> integer code; 0 means comparison unit
CustomMapping = Callable[[np.ndarray, int, int], int]


@dataclass(frozen=True)
class EffectiveTreatmentSpec:
    """Choice of effective-treatment function plus anticipation window"""
    kind: str = "once"
    anticipation_delta: int = 0
    mapping: Optional[CustomMapping] = None

    def __post_init__(self):
        if self.kind not in BUILTIN_KINDS + ("custom",):
            raise SpecificationError(f"unknown effective-treatment kind '{self.kind}'")
        if self.kind == "custom" and self.mapping is None:
            raise SpecificationError("custom specification needs a mapping callable")
        if int(self.anticipation_delta) != self.anticipation_delta or self.anticipation_delta < 0:
            raise SpecificationError(f"anticipation delta must be a nonnegative integer, got {self.anticipation_delta}")

    @classmethod
    def custom(cls, mapping: CustomMapping, anticipation_delta: int = 0) -> "EffectiveTreatmentSpec":
        return cls(kind="custom", anticipation_delta=anticipation_delta, mapping=mapping)


@dataclass(frozen=True)
class EffectivePanel:
    """Realized effective treatments and the nonzero support per period"""
    values: np.ndarray
    support_per_period: Dict[int, Tuple[int, ...]]
    spec: EffectiveTreatmentSpec
    warnings: Tuple[WarningRecord, ...] = ()

    @property
    def n_units(self) -> int:
        return self.values.shape[0]

    @property
    def n_periods(self) -> int:
        return self.values.shape[1]

    def column(self, t: int) -> np.ndarray:
        return self.values[:, t - 1]


@dataclass(frozen=True)
class Cell:
    """Evaluation period t, baseline s, intensity e, optional pre-trend period r"""
    t: int
    s: int
    e: int
    r: Optional[int] = None

    def __post_init__(self):
        if not (1 <= self.s < self.t):
            raise SpecificationError(f"cell needs 1 <= s < t, got {self.label()}")
        if self.e == 0:
            raise SpecificationError(f"cell intensity must be nonzero, got {self.label()}")
        if self.r is not None and not (2 <= self.r <= self.s):
            raise SpecificationError(f"pre-trend period must satisfy 2 <= r <= s, got {self.label()}")

    @property
    def is_pretrend(self) -> bool:
        return self.r is not None

    def label(self) -> str:
        base = f"t={self.t},s={self.s},e={self.e}"
        return base if self.r is None else f"{base},r={self.r}"

    def key(self) -> Tuple[int, int, int, int]:
        """Sort key placing post cells before their pre-trend cells."""
        return (self.t, self.s, self.e, 0 if self.r is None else self.r)

    def post(self) -> "Cell":
        return Cell(self.t, self.s, self.e)

    def with_pretrend(self, r: int) -> "Cell":
        return Cell(self.t, self.s, self.e, r)


@dataclass(frozen=True)
class MoverStayerFrame:
    """Per-unit indicators and outcome changes for one cell"""
    cell: Cell
    movers: np.ndarray
    stayers: np.ndarray
    dy: np.ndarray
    x_design: np.ndarray

    @property
    def n_units(self) -> int:
        return self.movers.shape[0]

    @property
    def n_movers(self) -> int:
        return int(self.movers.sum())

    @property
    def n_stayers(self) -> int:
        return int(self.stayers.sum())


def _window_ends(T: int, delta: int) -> np.ndarray:
    """Last inspected period (1-based) for each t, clipped at T."""
    return np.minimum(np.arange(1, T + 1) + delta, T)


def _builtin_values(treated: np.ndarray, kind: str, delta: int) -> np.ndarray:
    N, T = treated.shape
    ends = _window_ends(T, delta)
    counts = np.cumsum(treated, axis=1)
    in_window = counts[:, ends - 1]
    if kind == "once":
        return (in_window > 0).astype(np.int64)
    if kind == "number":
        return in_window.astype(np.int64)
    # event: first treated period if it falls inside the window
    any_treated = treated.any(axis=1)
    first = np.where(any_treated, treated.argmax(axis=1) + 1, 0)
    return np.where((first[:, None] > 0) & (first[:, None] <= ends[None, :]), first[:, None], 0).astype(np.int64)


def _custom_values(panel: PanelDataset, spec: EffectiveTreatmentSpec) -> np.ndarray:
    N, T = panel.n_units, panel.n_periods
    values = np.zeros((N, T), dtype=np.int64)
    for i in range(N):
        path = panel.treatments[i]
        for t in range(1, T + 1):
            code = spec.mapping(path, t, spec.anticipation_delta)
            try:
                integral = not isinstance(code, (bool, np.bool_)) and int(code) == code
            except (TypeError, ValueError, OverflowError):
                integral = False
            if not integral:
                raise SpecificationError(f"custom mapping must return integers, got {code!r} "
                                         f"for unit {panel.unit_ids[i]}, t={t}")
            if code < 0:
                raise SpecificationError(f"custom mapping returned negative code {code} (reserved) "
                                         f"for unit {panel.unit_ids[i]}, t={t}")
            values[i, t - 1] = int(code)
    return values


def violates_monotonicity(values: np.ndarray) -> np.ndarray:
    """Units with E_it = 0 but E_i,t-1 != 0 for some t."""
    return ((values[:, 1:] == 0) & (values[:, :-1] != 0)).any(axis=1)


def compute_effective_treatment(panel: PanelDataset, spec: EffectiveTreatmentSpec) -> EffectivePanel:
    """
    Compute realized effective treatments for every unit and period.

    Args:
        panel: Validated panel
        spec: Effective-treatment specification

    Returns:
        EffectivePanel with integer codes and per-period nonzero support
    """
    records: List[WarningRecord] = []
    T = panel.n_periods
    delta = int(spec.anticipation_delta)

    if delta > 0:
        clipped = [t for t in range(1, T + 1) if t + delta > T]
        if clipped:
            record_warning(records, logger, "window_clipped",
                           f"anticipation window t+{delta} exceeds T={T} for t in {clipped}; clipped to T",
                           periods=clipped, delta=delta)

    if spec.kind in BUILTIN_KINDS:
        values = _builtin_values(panel.treated_mask(), spec.kind, delta)
    else:
        values = _custom_values(panel, spec)
        bad = violates_monotonicity(values)
        if bad.any():
            record_warning(records, logger, "monotonicity_violated",
                           f"custom specification: {int(bad.sum())} unit(s) return to comparison status "
                           "after a nonzero code",
                           n_units=int(bad.sum()))

    support = {t: tuple(int(v) for v in np.unique(values[:, t - 1]) if v != 0) for t in range(1, T + 1)}
    values.setflags(write=False)
    logger.debug(f"Effective treatment '{spec.kind}' computed, support: {support}")
    return EffectivePanel(values=values, support_per_period=support, spec=spec, warnings=tuple(records))


def mover_stayer_indicators(eff: EffectivePanel, t: int, s: int, e: int) -> Tuple[np.ndarray, np.ndarray]:
    """M_i = 1{E_it = e, E_is = 0}, S_i = 1{E_it = 0, E_is = 0} as float arrays."""
    Et, Es = eff.column(t), eff.column(s)
    movers = ((Et == e) & (Es == 0)).astype(float)
    stayers = ((Et == 0) & (Es == 0)).astype(float)
    return movers, stayers


def build_cell_frame(panel: PanelDataset, eff: EffectivePanel, cell: Cell) -> MoverStayerFrame:
    """
    Build mover/stayer indicators and the outcome change for one cell.

    For a pre-trend cell the indicators use (t, s) while the outcome change
    uses (r, r-1).

    Raises:
        EmptyCellError: no movers or no stayers
    """
    if cell.t > eff.n_periods:
        raise SpecificationError(f"cell {cell.label()} exceeds T={eff.n_periods}")
    movers, stayers = mover_stayer_indicators(eff, cell.t, cell.s, cell.e)
    if movers.sum() == 0:
        raise EmptyCellError(f"no movers for cell {cell.label()}", {"cell": cell.label()})
    if stayers.sum() == 0:
        raise EmptyCellError(f"no stayers for cell {cell.label()}", {"cell": cell.label()})

    if cell.r is None:
        dy = outcome_difference(panel, cell.t, cell.s)
    else:
        dy = outcome_difference(panel, cell.r, cell.r - 1)
    return MoverStayerFrame(cell=cell, movers=movers, stayers=stayers, dy=dy,
                            x_design=panel.design_matrix())


def _candidate_cells(eff: EffectivePanel, kind: str) -> List[Cell]:
    T = eff.n_periods
    support = eff.support_per_period
    if kind == "once":
        return [Cell(t, 1, 1) for t in range(2, T + 1)]
    if kind == "event":
        return [Cell(t, e - 1, e) for e in range(2, T + 1) for t in range(e, T + 1) if e in support[t]]
    # number and custom: baseline period 1, every realized intensity with t >= e + 1
    cells = []
    for t in range(2, T + 1):
        for e in support[t]:
            if kind == "number" and t < e + 1:
                continue
            cells.append(Cell(t, 1, e))
    return sorted(cells, key=lambda c: (c.e, c.t))


def default_design(eff: EffectivePanel, spec: EffectiveTreatmentSpec, include_pretrends: bool = False,
                   records: Optional[List[WarningRecord]] = None) -> List[Cell]:
    """
    Enumerate the standard cells for a specification.

    once -> (t,1,1); event -> (t,e-1,e) with t >= e; number/custom -> (t,1,e)
    with t >= e+1. Pre-trend cells (r = 2..s) follow each post cell when
    requested. Cells without movers or stayers are dropped with a warning.

    Args:
        eff: Effective panel
        spec: Specification that produced `eff`
        include_pretrends: Append pre-trend cells
        records: Optional list collecting dropped-cell warnings

    Returns:
        Ordered list of cells (possibly empty)
    """
    records = records if records is not None else []
    cells: List[Cell] = []
    for cell in _candidate_cells(eff, spec.kind):
        movers, stayers = mover_stayer_indicators(eff, cell.t, cell.s, cell.e)
        if movers.sum() == 0 or stayers.sum() == 0:
            record_warning(records, logger, "cell_dropped",
                           f"dropping cell {cell.label()}: {int(movers.sum())} movers, {int(stayers.sum())} stayers",
                           cell=cell.label())
            continue
        cells.append(cell)
        if include_pretrends:
            cells.extend(cell.with_pretrend(r) for r in range(2, cell.s + 1))
    if not cells:
        record_warning(records, logger, "empty_design", f"default {spec.kind} design has no estimable cells")
    return cells


def custom_design(eff: EffectivePanel, cells: Sequence[Cell]) -> List[Cell]:
    """Validate user-chosen cells against the realized support."""
    out = []
    for cell in cells:
        if cell.t > eff.n_periods:
            raise SpecificationError(f"cell {cell.label()} exceeds T={eff.n_periods}")
        if cell.e not in eff.support_per_period[cell.t]:
            raise SpecificationError(f"intensity e={cell.e} is not realized in period t={cell.t}")
        out.append(cell)
    return out
