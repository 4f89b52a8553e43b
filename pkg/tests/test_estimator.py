"""Tests for the DR/OR/IPW estimators, influence values and aggregation."""

import numpy as np
import pytest

from effdid import (
    Cell,
    EffectiveTreatmentSpec,
    NuisanceConfig,
    PanelDataset,
    aggregate_event,
    aggregate_number,
    aggregate_time_average,
    aggregate_weighted,
    atem_dr,
    atem_ipw,
    atem_or,
    atem_pretrend,
    build_cell_frame,
    compute_effective_treatment,
    default_design,
    fit_gps,
    fit_or_stayers,
)
from effdid.errors import AggregationError, SpecificationError
from effdid.pipeline import estimate_cells

from .conftest import random_panel

INTERCEPT_ONLY = NuisanceConfig(or_covariates=[], gps_covariates=[])


def _dr(panel, cell, spec="once", config=None):
    eff = compute_effective_treatment(panel, EffectiveTreatmentSpec(spec))
    frame = build_cell_frame(panel, eff, cell)
    return atem_dr(frame, fit_or_stayers(frame, config), fit_gps(frame, config))


def _centered(influence):
    return abs(influence.mean()) <= 1e-8 * max(influence.std(), 1e-300)


# =============================================================================
# Exact equivalence without covariates
# =============================================================================


def test_no_covariates_all_estimators_equal_difference_of_means(rng):
    checked = 0
    for _ in range(100):
        panel = random_panel(rng, n_units=int(rng.integers(10, 51)), n_periods=int(rng.integers(2, 6)),
                             n_covariates=0)
        spec = EffectiveTreatmentSpec("once")
        eff = compute_effective_treatment(panel, spec)
        for cell in default_design(eff, spec):
            frame = build_cell_frame(panel, eff, cell)
            or_fit, gps_fit = fit_or_stayers(frame), fit_gps(frame)
            dr = atem_dr(frame, or_fit, gps_fit)
            oracle = frame.dy[frame.movers > 0].mean() - frame.dy[frame.stayers > 0].mean()

            assert dr.point == pytest.approx(oracle, abs=1e-10)
            assert atem_or(frame, or_fit).point == pytest.approx(oracle, abs=1e-10)
            assert atem_ipw(frame, gps_fit).point == pytest.approx(oracle, abs=1e-10)
            assert dr.degenerate or _centered(dr.influence)
            checked += 1
    assert checked > 100


def test_influence_centered_with_covariates(sim_panel):
    spec = EffectiveTreatmentSpec("event")
    eff = compute_effective_treatment(sim_panel.panel, spec)
    for cell in default_design(eff, spec, include_pretrends=True):
        frame = build_cell_frame(sim_panel.panel, eff, cell)
        est = atem_dr(frame, fit_or_stayers(frame), fit_gps(build_cell_frame(sim_panel.panel, eff, cell.post())))
        assert _centered(est.influence), cell.label()


def test_decomposition_adds_up(sim_panel):
    est = _dr(sim_panel.panel, Cell(3, 1, 1))
    d = est.decomposition
    np.testing.assert_allclose(est.influence, d.psi_m - d.psi_s - d.psi_est)
    assert d.w_m.mean() == pytest.approx(1.0)
    assert d.w_s.mean() == pytest.approx(1.0)


def test_analytic_se(sim_panel):
    est = _dr(sim_panel.panel, Cell(2, 1, 1))
    assert est.analytic_se == pytest.approx(np.sqrt(np.mean(est.influence ** 2) / est.n_units))
    assert 0.05 < est.analytic_se < 1.0


def test_degenerate_influence_flagged():
    # every unit has the same outcome change
    D = np.array([[0, 1]] * 3 + [[0, 0]] * 3, dtype=float)
    Y = np.column_stack([np.zeros(6), np.ones(6)])
    panel = PanelDataset.from_arrays(outcomes=Y, treatments=D)
    est = _dr(panel, Cell(2, 1, 1))
    assert est.point == pytest.approx(0.0)
    assert est.degenerate
    assert est.analytic_se == 0.0


# =============================================================================
# Invariances
# =============================================================================


def test_location_shift_invariance(sim_panel):
    panel = sim_panel.panel
    shifted = PanelDataset.from_arrays(outcomes=panel.outcomes + 17.0, treatments=panel.treatments,
                                       covariates=panel.covariates)
    a, b = _dr(panel, Cell(4, 1, 1)), _dr(shifted, Cell(4, 1, 1))
    assert b.point == pytest.approx(a.point, abs=1e-10)
    np.testing.assert_allclose(b.influence, a.influence, atol=1e-9)


def test_unit_permutation_invariance(rng, sim_panel):
    panel = sim_panel.panel
    perm = rng.permutation(panel.n_units)
    permuted = PanelDataset.from_arrays(outcomes=panel.outcomes[perm], treatments=panel.treatments[perm],
                                        covariates=panel.covariates[perm])
    a, b = _dr(panel, Cell(3, 1, 1)), _dr(permuted, Cell(3, 1, 1))
    assert b.point == pytest.approx(a.point, abs=1e-10)
    np.testing.assert_allclose(b.influence, a.influence[perm], atol=1e-9)


def test_pretrend_needs_r(sim_panel):
    eff = compute_effective_treatment(sim_panel.panel, EffectiveTreatmentSpec("event"))
    frame = build_cell_frame(sim_panel.panel, eff, Cell(4, 3, 4))
    with pytest.raises(SpecificationError):
        atem_pretrend(frame, fit_or_stayers(frame), fit_gps(frame))


def test_pretrend_estimate(sim_panel):
    eff = compute_effective_treatment(sim_panel.panel, EffectiveTreatmentSpec("event"))
    post = build_cell_frame(sim_panel.panel, eff, Cell(4, 3, 4))
    pre = build_cell_frame(sim_panel.panel, eff, Cell(4, 3, 4, 2))
    est = atem_pretrend(pre, fit_or_stayers(pre), fit_gps(post))
    assert est.is_pretrend
    assert est.label() == "t=4,s=3,e=4,r=2"


# =============================================================================
# Aggregation
# =============================================================================


def test_time_average(sim_panel):
    panel = sim_panel.panel
    spec = EffectiveTreatmentSpec("once")
    eff = compute_effective_treatment(panel, spec)
    ests = estimate_cells(panel, eff, default_design(eff, spec))
    agg = aggregate_time_average(ests, panel.n_periods)

    assert agg.label() == "ATEM^A"
    assert agg.point == pytest.approx(np.mean([e.point for e in ests]))
    np.testing.assert_allclose(agg.influence, np.mean([e.influence for e in ests], axis=0))
    assert agg.fixed_weights


def test_time_average_needs_every_period(sim_panel):
    panel = sim_panel.panel
    spec = EffectiveTreatmentSpec("once")
    eff = compute_effective_treatment(panel, spec)
    ests = estimate_cells(panel, eff, default_design(eff, spec))
    with pytest.raises(AggregationError, match="missing t"):
        aggregate_time_average(ests[:2], panel.n_periods)


def test_time_average_identical_components_keep_statistics(sim_panel):
    est = _dr(sim_panel.panel, Cell(2, 1, 1))
    clones = [est.__class__(**{**est.__dict__, "cell": Cell(t, 1, 1)}) for t in (2, 3, 4)]
    agg = aggregate_time_average(clones, 4)
    assert agg.point == pytest.approx(est.point)
    assert agg.analytic_se == pytest.approx(est.analytic_se)


def test_event_aggregate_equals_once_without_covariates(rng):
    for _ in range(50):
        panel = random_panel(rng, n_units=int(rng.integers(30, 80)), n_periods=int(rng.integers(3, 6)))
        once = compute_effective_treatment(panel, EffectiveTreatmentSpec("once"))
        event = compute_effective_treatment(panel, EffectiveTreatmentSpec("event"))
        for t in range(2, panel.n_periods + 1):
            if not (once.column(t) == 0).any() or not (once.column(t) != 0).any():
                continue
            cells = [Cell(t, 1, e) for e in event.support_per_period[t]]
            ests = estimate_cells(panel, event, cells, INTERCEPT_ONLY)
            target = estimate_cells(panel, once, [Cell(t, 1, 1)], INTERCEPT_ONLY)[0]

            assert aggregate_event(ests, t).point == pytest.approx(target.point, abs=1e-10)


def test_number_aggregate(sim_panel):
    panel = sim_panel.panel
    spec = EffectiveTreatmentSpec("number")
    eff = compute_effective_treatment(panel, spec)
    ests = estimate_cells(panel, eff, default_design(eff, spec))
    agg = aggregate_number(ests, 4)

    components = [e for e in ests if e.cell.t == 4]
    weights = np.array([e.n_movers for e in components], dtype=float)
    weights /= weights.sum()
    assert agg.label() == "ATEM^N(t=4)"
    assert agg.point == pytest.approx(np.dot(weights, [e.point for e in components]))
    assert sum(w for _, w in agg.components) == pytest.approx(1.0)


def test_weighted_aggregate_rejects_mixed_periods(sim_panel):
    panel = sim_panel.panel
    spec = EffectiveTreatmentSpec("number")
    eff = compute_effective_treatment(panel, spec)
    ests = estimate_cells(panel, eff, default_design(eff, spec))
    with pytest.raises(AggregationError, match="share t"):
        aggregate_weighted(ests)
