"""
ATEM Estimator Module

Second-step estimators for one cell and their aggregations.

- DR:  E_N[(w^M - w^S(pi)) (dY - m(X; gamma))]
- OR:  E_N[w^M (dY - m(X; gamma))]
- IPW: E_N[(w^M - w^S(pi)) dY]

with w^M = M / E_N[M] and w^S = r(X; pi) S / E_N[r(X; pi) S]. Each estimate
carries its per-unit influence values, which drive all downstream inference.
The influence function of the DR estimator is psi = psi^M - psi^S - psi^est,
where psi^est corrects for first-step estimation of gamma and pi.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .efftreat import Cell, MoverStayerFrame
from .errors import AggregationError, EstimationError, SpecificationError
from .nuisance import GpsFit, OrFit

logger = logging.getLogger(__name__)

# influence values whose spread is below this are treated as constant
DEGENERATE_TOL = 1e-14


@dataclass(frozen=True)
class InfluenceDecomposition:
    """Components of the DR influence function"""
    psi_m: np.ndarray
    psi_s: np.ndarray
    psi_est: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    w_m: np.ndarray
    w_s: np.ndarray
    w_s_dot: np.ndarray


@dataclass(frozen=True)
class AtemEstimate:
    """Point estimate and influence values for one cell"""
    cell: Cell
    estimand_kind: str
    point: float
    influence: np.ndarray
    analytic_se: float
    n_movers: int
    n_stayers: int
    is_pretrend: bool = False
    degenerate: bool = False
    decomposition: Optional[InfluenceDecomposition] = field(default=None, repr=False, compare=False)

    @property
    def n_units(self) -> int:
        return self.influence.shape[0]

    def label(self) -> str:
        return self.cell.label()


@dataclass(frozen=True)
class AggregateEstimate:
    """Weighted combination of cell estimates"""
    kind: str
    point: float
    influence: np.ndarray
    components: Tuple[Tuple[Cell, float], ...]
    analytic_se: float
    t: Optional[int] = None
    # weight estimation is not propagated into the influence values
    fixed_weights: bool = True
    degenerate: bool = False

    @property
    def n_units(self) -> int:
        return self.influence.shape[0]

    def label(self) -> str:
        if self.kind == "time_average":
            return "ATEM^A"
        return f"ATEM^{'E' if self.kind == 'event' else 'N'}(t={self.t})"


def analytic_se(influence: np.ndarray) -> float:
    """sqrt(E_N[psi^2] / N)."""
    n = influence.shape[0]
    return float(np.sqrt(np.mean(influence ** 2) / n))


def is_degenerate(influence: np.ndarray) -> bool:
    return bool(np.ptp(influence) <= DEGENERATE_TOL * max(1.0, float(np.max(np.abs(influence)))))


def _mover_weights(frame: MoverStayerFrame) -> np.ndarray:
    mean_m = frame.movers.mean()
    if mean_m == 0:
        raise EstimationError(f"no movers for cell {frame.cell.label()}")
    return frame.movers / mean_m


def _stayer_weights(frame: MoverStayerFrame, gps_fit: GpsFit) -> Tuple[np.ndarray, np.ndarray]:
    """w^S and its derivative in pi."""
    rs = gps_fit.r_hat * frame.stayers
    norm = rs.mean()
    if not np.isfinite(norm) or norm <= 0:
        raise EstimationError(f"stayer weights cannot be normalized for cell {frame.cell.label()}")
    w_s = rs / norm
    w_s_dot = gps_fit.r_dot * (frame.stayers / norm)[:, None]
    return w_s, w_s_dot


def _centered(weights: np.ndarray, values: np.ndarray) -> Tuple[np.ndarray, float]:
    """w*v - w*E_N[w*v] and E_N[w*v]."""
    level = float(np.mean(weights * values))
    return weights * values - weights * level, level


def _check_same_frame(frame: MoverStayerFrame, n: int, what: str):
    if frame.n_units != n:
        raise EstimationError(f"{what} was fitted on {n} units but the frame for cell "
                              f"{frame.cell.label()} has {frame.n_units}")


def _finish(frame: MoverStayerFrame, kind: str, point: float, influence: np.ndarray,
            decomposition: Optional[InfluenceDecomposition] = None) -> AtemEstimate:
    label = frame.cell.label()
    if not np.isfinite(point) or not np.isfinite(influence).all():
        raise EstimationError(f"non-finite {kind} estimate for cell {label}", {"cell": label})
    degenerate = is_degenerate(influence)
    if degenerate:
        logger.warning(f"cell {label}: influence values are constant; analytic SE is 0")
    return AtemEstimate(
        cell=frame.cell,
        estimand_kind=kind,
        point=float(point),
        influence=influence,
        analytic_se=0.0 if degenerate else analytic_se(influence),
        n_movers=frame.n_movers,
        n_stayers=frame.n_stayers,
        is_pretrend=frame.cell.is_pretrend,
        degenerate=degenerate,
        decomposition=decomposition,
    )


def atem_dr(frame: MoverStayerFrame, or_fit: OrFit, gps_fit: GpsFit) -> AtemEstimate:
    """
    Doubly robust ATEM estimate with its influence values.

    Args:
        frame: Mover/stayer frame (outcome change for (t, s), or (r, r-1) for pre-trends)
        or_fit: Outcome regression fitted on `frame`
        gps_fit: Propensity fit for the cell's movers and stayers

    Returns:
        AtemEstimate of kind "DR"
    """
    _check_same_frame(frame, or_fit.fitted.shape[0], "outcome regression")
    _check_same_frame(frame, gps_fit.p_hat.shape[0], "propensity score")

    resid = frame.dy - or_fit.fitted
    w_m = _mover_weights(frame)
    w_s, w_s_dot = _stayer_weights(frame, gps_fit)

    point = float(np.mean((w_m - w_s) * resid))

    psi_m, _ = _centered(w_m, resid)
    psi_s, eta_s = _centered(w_s, resid)
    m1 = np.mean((w_m - w_s)[:, None] * or_fit.gradient_rows, axis=0)
    m2 = np.mean(w_s_dot * resid[:, None], axis=0) - np.mean(w_s_dot, axis=0) * eta_s
    psi_est = or_fit.psi_gamma @ m1 + gps_fit.psi_pi @ m2
    influence = psi_m - psi_s - psi_est

    decomposition = InfluenceDecomposition(psi_m=psi_m, psi_s=psi_s, psi_est=psi_est, m1=m1, m2=m2,
                                           w_m=w_m, w_s=w_s, w_s_dot=w_s_dot)
    return _finish(frame, "DR", point, influence, decomposition)


def atem_or(frame: MoverStayerFrame, or_fit: OrFit) -> AtemEstimate:
    """Outcome-regression ATEM (diagnostic; no double robustness)."""
    _check_same_frame(frame, or_fit.fitted.shape[0], "outcome regression")
    resid = frame.dy - or_fit.fitted
    w_m = _mover_weights(frame)
    point = float(np.mean(w_m * resid))
    psi_m, _ = _centered(w_m, resid)
    m1 = np.mean(w_m[:, None] * or_fit.gradient_rows, axis=0)
    influence = psi_m - or_fit.psi_gamma @ m1
    return _finish(frame, "OR", point, influence)


def atem_ipw(frame: MoverStayerFrame, gps_fit: GpsFit) -> AtemEstimate:
    """Inverse-probability-weighted ATEM (diagnostic; no double robustness)."""
    _check_same_frame(frame, gps_fit.p_hat.shape[0], "propensity score")
    dy = frame.dy
    w_m = _mover_weights(frame)
    w_s, w_s_dot = _stayer_weights(frame, gps_fit)
    point = float(np.mean((w_m - w_s) * dy))
    psi_m, _ = _centered(w_m, dy)
    psi_s, eta_s = _centered(w_s, dy)
    m2 = np.mean(w_s_dot * dy[:, None], axis=0) - np.mean(w_s_dot, axis=0) * eta_s
    influence = psi_m - psi_s - gps_fit.psi_pi @ m2
    return _finish(frame, "IPW", point, influence)


def atem_pretrend(frame: MoverStayerFrame, or_fit_r: OrFit, gps_fit: GpsFit) -> AtemEstimate:
    """
    DR pre-trend estimate ATEM(t, s, r, e).

    `frame` must carry a pre-trend period r (outcome change over (r, r-1));
    `or_fit_r` regresses that change on covariates over the (t, s) stayers and
    `gps_fit` is the propensity fit of the post cell.
    """
    cell = frame.cell
    if cell.r is None:
        raise SpecificationError(f"cell {cell.label()} has no pre-trend period r")
    if not (2 <= cell.r <= cell.s < cell.t):
        raise SpecificationError(f"pre-trend period out of range for cell {cell.label()}")
    return atem_dr(frame, or_fit_r, gps_fit)


# --- aggregation ---

def _aggregate(kind: str, estimates: Sequence[AtemEstimate], weights: np.ndarray,
               t: Optional[int] = None) -> AggregateEstimate:
    n = {e.n_units for e in estimates}
    if len(n) != 1:
        raise AggregationError(f"components have different unit counts: {sorted(n)}")
    point = float(np.dot(weights, [e.point for e in estimates]))
    influence = np.sum([w * e.influence for w, e in zip(weights, estimates)], axis=0)
    degenerate = is_degenerate(influence)
    return AggregateEstimate(
        kind=kind,
        point=point,
        influence=influence,
        components=tuple((e.cell, float(w)) for e, w in zip(estimates, weights)),
        analytic_se=0.0 if degenerate else analytic_se(influence),
        t=t,
        degenerate=degenerate,
    )


def aggregate_time_average(once_estimates: Sequence[AtemEstimate],
                           n_periods: Optional[int] = None) -> AggregateEstimate:
    """
    Time-series average of once-specification cells (t, 1, 1), t = 2..T.

    Args:
        once_estimates: One estimate per t
        n_periods: T; inferred from the largest t when omitted

    Returns:
        AggregateEstimate of kind "time_average"
    """
    if not once_estimates:
        raise AggregationError("time average needs at least one component")
    for e in once_estimates:
        if e.is_pretrend or (e.cell.s, e.cell.e) != (1, 1):
            raise AggregationError(f"time average takes once cells (t,1,1) only, got {e.label()}")
    ts = sorted(e.cell.t for e in once_estimates)
    T = n_periods or ts[-1]
    expected = list(range(2, T + 1))
    if ts != expected:
        missing = sorted(set(expected) - set(ts))
        raise AggregationError(f"time average needs one estimate for each t = 2..{T}; missing t = {missing}"
                               if missing else f"duplicate periods among components: {ts}")
    ordered = sorted(once_estimates, key=lambda e: e.cell.t)
    weights = np.full(len(ordered), 1.0 / len(ordered))
    return _aggregate("time_average", ordered, weights)


def _family(estimates: Sequence[AtemEstimate]) -> str:
    if all(e.cell.s == e.cell.e - 1 for e in estimates):
        return "event"
    if all(e.cell.s == 1 for e in estimates):
        return "number"
    raise AggregationError("components must share a family: event (s = e-1) or common baseline s = 1")


def aggregate_weighted(estimates: Sequence[AtemEstimate], frame_counts: Optional[Sequence[float]] = None,
                       kind: Optional[str] = None) -> AggregateEstimate:
    """
    Mover-share weighted average over intensities e at a fixed t.

    Weights are E_N[M_e] / sum of E_N[M_e~]; they are treated as fixed in the
    influence values.

    Args:
        estimates: Cells sharing t (event cells with s = e-1 or s = 1, or number cells with s = 1)
        frame_counts: Mover counts per component (defaults to each estimate's n_movers)
        kind: "event" or "number"; inferred from the baselines when omitted

    Returns:
        AggregateEstimate of kind "event" or "number"
    """
    if not estimates:
        raise AggregationError("weighted aggregate needs at least one component")
    ts = {e.cell.t for e in estimates}
    if len(ts) != 1:
        raise AggregationError(f"weighted aggregate components must share t, got {sorted(ts)}")
    if any(e.is_pretrend for e in estimates):
        raise AggregationError("pre-trend cells cannot be aggregated")
    if len({e.cell.e for e in estimates}) != len(estimates):
        raise AggregationError("duplicate intensities among aggregate components")
    family = kind or _family(estimates)
    if family not in ("event", "number"):
        raise AggregationError(f"unknown aggregate kind '{family}'")
    if family == "number" and any(e.cell.s != 1 for e in estimates):
        raise AggregationError("number aggregate components need baseline s = 1")

    counts = np.asarray(frame_counts if frame_counts is not None else [e.n_movers for e in estimates], dtype=float)
    if counts.shape[0] != len(estimates) or (counts < 0).any() or counts.sum() <= 0:
        raise AggregationError("mover counts must be nonnegative, one per component, with a positive total")
    weights = counts / counts.sum()
    ordered = sorted(range(len(estimates)), key=lambda i: estimates[i].cell.e)
    return _aggregate(family, [estimates[i] for i in ordered], weights[ordered], t=ts.pop())


def _at_period(estimates: Sequence[AtemEstimate], t: int) -> List[AtemEstimate]:
    selected = [e for e in estimates if not e.is_pretrend and e.cell.t == t]
    if not selected:
        raise AggregationError(f"no post cells at t={t}")
    return selected


def aggregate_event(estimates: Sequence[AtemEstimate], t: int) -> AggregateEstimate:
    """ATEM^E(t): mover-share weighted event cells at period t."""
    return aggregate_weighted(_at_period(estimates, t), kind="event")


def aggregate_number(estimates: Sequence[AtemEstimate], t: int) -> AggregateEstimate:
    """ATEM^N(t, 1): mover-share weighted number cells (t, 1, e) at period t."""
    return aggregate_weighted(_at_period(estimates, t), kind="number")


def aggregate_by_period(estimates: Sequence[AtemEstimate], kind: str) -> List[AggregateEstimate]:
    """Weighted aggregates for every t present among post cells."""
    build = aggregate_event if kind == "event" else aggregate_number
    return [build(estimates, t) for t in sorted({e.cell.t for e in estimates if not e.is_pretrend})]
