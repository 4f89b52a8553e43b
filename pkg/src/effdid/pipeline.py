"""
Estimation Pipeline Module

Coordinates one analysis of an observed panel: effective treatments, cell
design, first-step fits, second-step estimates, aggregation and the joint
multiplier bootstrap.
"""

import concurrent.futures
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

from .config import BootstrapConfig, EstimateConfig, NuisanceConfig
from .efftreat import (
    Cell,
    EffectivePanel,
    EffectiveTreatmentSpec,
    MoverStayerFrame,
    build_cell_frame,
    compute_effective_treatment,
    custom_design,
    default_design,
)
from .errors import WarningRecord
from .estimator import (
    AggregateEstimate,
    AtemEstimate,
    aggregate_by_period,
    aggregate_time_average,
    atem_dr,
    atem_ipw,
    atem_or,
    atem_pretrend,
)
from .inference import BootstrapResult, PretrendsVerdict, multiplier_bootstrap, pretrends_report
from .nuisance import fit_gps, fit_or_stayers, trim_frame
from .panel import PanelDataset, outcome_difference

logger = logging.getLogger(__name__)


@dataclass
class EstimationRun:
    """Everything produced by one analysis"""
    spec: EffectiveTreatmentSpec
    cells: List[Cell]
    estimates: List[AtemEstimate]
    aggregates: List[AggregateEstimate] = field(default_factory=list)
    bootstrap: Optional[BootstrapResult] = None
    pretrend_bootstrap: Optional[BootstrapResult] = None
    verdict: Optional[PretrendsVerdict] = None
    warnings: List[WarningRecord] = field(default_factory=list)

    def post_estimates(self) -> List[AtemEstimate]:
        return [e for e in self.estimates if not e.is_pretrend]

    def pretrend_estimates(self) -> List[AtemEstimate]:
        return [e for e in self.estimates if e.is_pretrend]


def _estimate_group(panel: PanelDataset, eff: EffectivePanel, post: Cell, pretrends: Sequence[Cell],
                    nuisance: NuisanceConfig, estimand: str) -> Tuple[List[AtemEstimate], List[WarningRecord]]:
    """Estimate a post cell and the pre-trend cells that share its movers and stayers."""
    records: List[WarningRecord] = []
    frame = build_cell_frame(panel, eff, post)
    gps_fit = None
    if estimand in ("DR", "IPW") or nuisance.trim is not None:
        gps_fit = fit_gps(frame, nuisance)
        records.extend(gps_fit.warnings)
        if nuisance.trim is not None:
            trimmed = trim_frame(frame, gps_fit, nuisance.trim, records)
            if trimmed is not frame:
                frame = trimmed
                gps_fit = fit_gps(frame, nuisance)

    results = [_estimate_frame(frame, gps_fit, nuisance, estimand)]
    for cell in pretrends:
        pre_frame = replace(frame, cell=cell, dy=outcome_difference(panel, cell.r, cell.r - 1))
        results.append(_estimate_frame(pre_frame, gps_fit, nuisance, estimand))
    return results, records


def _estimate_frame(frame: MoverStayerFrame, gps_fit, nuisance: NuisanceConfig, estimand: str) -> AtemEstimate:
    if estimand == "IPW":
        return atem_ipw(frame, gps_fit)
    or_fit = fit_or_stayers(frame, nuisance)
    if estimand == "OR":
        return atem_or(frame, or_fit)
    if frame.cell.is_pretrend:
        return atem_pretrend(frame, or_fit, gps_fit)
    return atem_dr(frame, or_fit, gps_fit)


def estimate_cells(panel: PanelDataset, eff: EffectivePanel, cells: Sequence[Cell],
                   nuisance: Optional[NuisanceConfig] = None, estimand: str = "DR", threads: int = 1,
                   records: Optional[List[WarningRecord]] = None) -> List[AtemEstimate]:
    """
    Estimate every cell; pre-trend cells reuse the propensity fit of their post cell.

    Args:
        panel: Observed panel
        eff: Effective treatments for the chosen specification
        cells: Design (post cells and optional pre-trend cells)
        nuisance: First-step settings
        estimand: "DR", "OR" or "IPW"
        threads: Worker threads across post cells
        records: Optional list collecting warning records

    Returns:
        Estimates in the order of `cells`
    """
    nuisance = nuisance or NuisanceConfig()
    groups: Dict[Cell, List[Cell]] = {}
    for cell in cells:
        groups.setdefault(cell.post(), [])
        if cell.is_pretrend:
            groups[cell.post()].append(cell)
    posts = list(groups)

    logger.info(f"Estimating {len(cells)} cell(s) ({estimand}) across {len(posts)} mover/stayer group(s)")
    outputs: List[Optional[Tuple[List[AtemEstimate], List[WarningRecord]]]] = [None] * len(posts)
    if threads <= 1 or len(posts) == 1:
        for k, post in enumerate(posts):
            outputs[k] = _estimate_group(panel, eff, post, groups[post], nuisance, estimand)
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as executor:
            futures = {executor.submit(_estimate_group, panel, eff, post, groups[post], nuisance, estimand): k
                       for k, post in enumerate(posts)}
            for future in concurrent.futures.as_completed(futures):
                outputs[futures[future]] = future.result()

    by_cell: Dict[Cell, AtemEstimate] = {}
    for k, post in enumerate(posts):
        estimates, group_records = outputs[k]
        if records is not None:
            records.extend(group_records)
        for est in estimates:
            by_cell[est.cell] = est
    return [by_cell[cell] for cell in cells if cell in by_cell]


def run_estimation(panel: PanelDataset, estimate_config: Optional[EstimateConfig] = None,
                   nuisance: Optional[NuisanceConfig] = None, bootstrap: Optional[BootstrapConfig] = None,
                   cells: Optional[Sequence[Cell]] = None, spec: Optional[EffectiveTreatmentSpec] = None,
                   run_bootstrap: bool = True) -> EstimationRun:
    """
    Full analysis: design, estimation and (for DR) joint bootstrap inference.

    Args:
        panel: Observed panel
        estimate_config: Specification, anticipation, pre-trends and estimand choice
        nuisance: First-step settings
        bootstrap: Bootstrap settings
        cells: Explicit design; the default design of the specification when omitted
        spec: Explicit specification (e.g. custom); built from `estimate_config` when omitted
        run_bootstrap: Skip inference when False

    Returns:
        EstimationRun
    """
    estimate_config = estimate_config or EstimateConfig()
    bootstrap = bootstrap or BootstrapConfig()
    spec = spec or EffectiveTreatmentSpec(kind=estimate_config.spec, anticipation_delta=estimate_config.delta)

    records: List[WarningRecord] = []
    eff = compute_effective_treatment(panel, spec)
    records.extend(eff.warnings)
    if cells is None:
        design = default_design(eff, spec, estimate_config.include_pretrends, records)
    else:
        design = custom_design(eff, cells)

    estimates = estimate_cells(panel, eff, design, nuisance, estimate_config.estimand,
                               estimate_config.threads, records)
    run = EstimationRun(spec=spec, cells=list(design), estimates=estimates, warnings=records)

    if not run_bootstrap or not estimates:
        return run
    if estimate_config.estimand != "DR":
        logger.info(f"{estimate_config.estimand} estimates are diagnostic; bootstrap inference runs for DR only")
        return run

    pre = run.pretrend_estimates()
    if pre and not bootstrap.pretrends_in_uniform:
        run.bootstrap = multiplier_bootstrap(run.post_estimates(), bootstrap)
        run.pretrend_bootstrap = multiplier_bootstrap(pre, bootstrap)
        rows = run.bootstrap.rows() + run.pretrend_bootstrap.rows()
    else:
        run.bootstrap = multiplier_bootstrap(estimates, bootstrap)
        rows = run.bootstrap.rows()
    if pre:
        run.verdict = pretrends_report([r for r in rows if not r.is_pretrend], [r for r in rows if r.is_pretrend])
    return run


def run_aggregation(panel: PanelDataset, kind: str = "time_average",
                    estimate_config: Optional[EstimateConfig] = None,
                    nuisance: Optional[NuisanceConfig] = None, bootstrap: Optional[BootstrapConfig] = None,
                    uniform_with_components: bool = False) -> EstimationRun:
    """
    Estimate an aggregate and band it with the joint bootstrap.

    kind "time_average" averages once cells (t,1,1); "event" and "number"
    weight event cells (t,1,e) or number cells (t,1,e) by mover shares at each t.
    The aggregate's band uses a critical value over the aggregates alone unless
    `uniform_with_components` adds the component cells to the max-t set.
    """
    estimate_config = estimate_config or EstimateConfig()
    bootstrap = bootstrap or BootstrapConfig()
    spec_kind = {"time_average": "once", "event": "event", "number": "number"}[kind]
    spec = EffectiveTreatmentSpec(kind=spec_kind, anticipation_delta=estimate_config.delta)

    records: List[WarningRecord] = []
    eff = compute_effective_treatment(panel, spec)
    records.extend(eff.warnings)
    if kind == "event":
        # common baseline s = 1: same movers and stayers as (t, e-1, e)
        cells = [Cell(c.t, 1, c.e) for c in default_design(eff, spec, False, records)]
    else:
        cells = default_design(eff, spec, False, records)

    estimates = estimate_cells(panel, eff, cells, nuisance, "DR", estimate_config.threads, records)
    if kind == "time_average":
        aggregates = [aggregate_time_average(estimates, panel.n_periods)]
    else:
        aggregates = aggregate_by_period(estimates, kind)

    run = EstimationRun(spec=spec, cells=cells, estimates=estimates, aggregates=aggregates, warnings=records)
    targets = (list(estimates) + list(aggregates)) if uniform_with_components else list(aggregates)
    run.bootstrap = multiplier_bootstrap(targets, bootstrap)
    return run
