"""Tests for the multiplier bootstrap and pre-trend verdicts."""

import math

import numpy as np
import pytest
from scipy.stats import norm

from effdid import (
    AtemEstimate,
    BootstrapConfig,
    Cell,
    analytic_band,
    mammen_draw,
    multiplier_bootstrap,
    pretrends_report,
)
from effdid.errors import BootstrapSizeError, DegenerateInfluenceError, NoPretrendCellsError
from effdid.inference import KAPPA, MAMMEN_P_LOW, Z_IQR, BandRow, rademacher_draw


def make_estimate(influence, point=0.0, cell=None):
    influence = np.asarray(influence, dtype=float)
    return AtemEstimate(cell=cell or Cell(2, 1, 1), estimand_kind="DR", point=point, influence=influence,
                        analytic_se=float(np.sqrt(np.mean(influence ** 2) / len(influence))),
                        n_movers=1, n_stayers=1, is_pretrend=bool(cell and cell.is_pretrend))


def correlated_estimates(rng, n=300, k=4):
    base = rng.standard_normal(n)
    cells = [Cell(t, 1, 1) for t in range(2, 2 + k)]
    return [make_estimate(base + rng.standard_normal(n) * (j + 1) * 0.5, point=0.1 * j, cell=c)
            for j, c in enumerate(cells)]


class CountingGenerator:
    """Stand-in stream whose uniforms depend only on the repetition index."""

    def __init__(self, rep):
        self.rep = rep

    def random(self, n):
        return (np.arange(n) * 0.6180339887 + self.rep * 0.137) % 1.0


# =============================================================================
# Weights
# =============================================================================


def test_mammen_constants():
    assert KAPPA == pytest.approx((math.sqrt(5) + 1) / 2)
    assert Z_IQR / 2 == pytest.approx(0.6744898, abs=1e-7)
    mean = (1 - KAPPA) * MAMMEN_P_LOW + KAPPA * (1 - MAMMEN_P_LOW)
    second = (1 - KAPPA) ** 2 * MAMMEN_P_LOW + KAPPA ** 2 * (1 - MAMMEN_P_LOW)
    assert mean == pytest.approx(0.0, abs=1e-15)
    assert second == pytest.approx(1.0)


def test_mammen_support_and_sample_mean():
    draws = mammen_draw(1_000_000, np.random.default_rng(3))
    assert set(np.unique(draws).round(4)) == {-0.618, 1.618}
    assert abs(draws.mean()) < 0.005
    assert draws.var() == pytest.approx(1.0, abs=0.01)


def test_rademacher_support():
    draws = rademacher_draw(10_000, np.random.default_rng(3))
    assert set(np.unique(draws)) == {-1.0, 1.0}


# =============================================================================
# Bootstrap
# =============================================================================


def test_bands_are_symmetric_and_positive(rng):
    ests = correlated_estimates(rng)
    result = multiplier_bootstrap(ests, BootstrapConfig(n_reps=499, seed=1))

    assert result.critical_value > 0
    assert np.all(result.per_cell_se > 0)
    np.testing.assert_allclose(result.bands.mean(axis=1), result.points)
    np.testing.assert_allclose(result.per_cell_se, (result.q75 - result.q25) / Z_IQR)
    assert [r.label for r in result.rows()] == [e.label() for e in ests]


def test_bootstrap_se_close_to_analytic(rng):
    est = make_estimate(rng.standard_normal(2000))
    result = multiplier_bootstrap([est], BootstrapConfig(n_reps=1999, seed=5))
    assert result.per_cell_se[0] == pytest.approx(est.analytic_se, rel=0.1)


def test_uniform_critical_value_exceeds_pointwise(rng):
    result = multiplier_bootstrap(correlated_estimates(rng, k=6), BootstrapConfig(n_reps=999, seed=2))
    assert result.critical_value > norm.ppf(0.975) - 0.1


def test_same_seed_same_result_across_threads(rng):
    ests = correlated_estimates(rng)
    a = multiplier_bootstrap(ests, BootstrapConfig(n_reps=301, seed=9, threads=1))
    b = multiplier_bootstrap(ests, BootstrapConfig(n_reps=301, seed=9, threads=4))
    np.testing.assert_array_equal(a.per_cell_se, b.per_cell_se)
    np.testing.assert_array_equal(a.bands, b.bands)
    assert a.critical_value == b.critical_value


def test_different_seed_different_draws(rng):
    ests = correlated_estimates(rng)
    a = multiplier_bootstrap(ests, BootstrapConfig(n_reps=201, seed=1))
    b = multiplier_bootstrap(ests, BootstrapConfig(n_reps=201, seed=2))
    assert not np.array_equal(a.per_cell_se, b.per_cell_se)


def test_weights_shared_across_cells(rng):
    ests = correlated_estimates(rng, n=50, k=3)
    result = multiplier_bootstrap(ests, BootstrapConfig(n_reps=40, seed=0), stream_factory=CountingGenerator,
                                  keep_draws=True)
    psi = np.column_stack([e.influence for e in ests])
    for b in (0, 17, 39):
        v = mammen_draw(50, CountingGenerator(b))
        np.testing.assert_allclose(result.draws[b], v @ psi / 50)


def test_scale_equivariance(rng):
    ests = correlated_estimates(rng)
    scaled = [make_estimate(3.0 * e.influence, point=3.0 * e.point, cell=e.cell) for e in ests]
    cfg = BootstrapConfig(n_reps=299, seed=4)
    a, b = multiplier_bootstrap(ests, cfg), multiplier_bootstrap(scaled, cfg)

    np.testing.assert_allclose(b.per_cell_se, 3.0 * a.per_cell_se)
    assert b.critical_value == pytest.approx(a.critical_value)
    np.testing.assert_allclose(b.bands[:, 1] - b.points, 3.0 * (a.bands[:, 1] - a.points))


def test_critical_value_nonincreasing_in_alpha(rng):
    ests = correlated_estimates(rng)
    crit = [multiplier_bootstrap(ests, BootstrapConfig(n_reps=499, seed=3, alpha=a)).critical_value
            for a in (0.01, 0.05, 0.1, 0.2)]
    assert crit == sorted(crit, reverse=True)


def test_single_cell_band_uses_its_own_quantile(rng):
    est = make_estimate(rng.standard_normal(400), point=1.0)
    result = multiplier_bootstrap([est], BootstrapConfig(n_reps=999, seed=8), keep_draws=True)
    t_stats = np.abs(result.draws[:, 0]) / result.per_cell_se[0]
    assert result.critical_value == pytest.approx(np.quantile(t_stats, 0.95))


def test_degenerate_influence_rejected():
    with pytest.raises(DegenerateInfluenceError, match="t=2,s=1,e=1"):
        multiplier_bootstrap([make_estimate(np.zeros(100))], BootstrapConfig(n_reps=99))


def test_too_few_reps_for_alpha(rng):
    with pytest.raises(BootstrapSizeError):
        multiplier_bootstrap([make_estimate(rng.standard_normal(50))], BootstrapConfig(n_reps=10, alpha=0.05))


def test_coverage_of_known_mean(rng):
    covered = 0
    reps = 200
    for rep in range(reps):
        z = rng.standard_normal(500)
        est = make_estimate(z - z.mean(), point=z.mean())
        result = multiplier_bootstrap([est], BootstrapConfig(n_reps=199, seed=rep))
        covered += result.rows()[0].contains(0.0)
    assert 0.89 <= covered / reps <= 0.995


@pytest.mark.slow
def test_coverage_of_known_mean_desk_scale(rng):
    covered = 0
    reps = 2000
    for rep in range(reps):
        z = rng.standard_normal(500)
        est = make_estimate(z - z.mean(), point=z.mean())
        result = multiplier_bootstrap([est], BootstrapConfig(n_reps=999, seed=rep))
        covered += result.rows()[0].contains(0.0)
    assert 0.93 <= covered / reps <= 0.97


def test_analytic_band(rng):
    est = make_estimate(rng.standard_normal(100), point=2.0)
    lo, hi = analytic_band(est, 0.05)
    assert hi - 2.0 == pytest.approx(2.0 - lo)
    assert hi - lo == pytest.approx(2 * 1.959964 * est.analytic_se, rel=1e-6)


# =============================================================================
# Pre-trend verdicts
# =============================================================================


def _row(label, lower, upper, pretrend=True):
    return BandRow(label=label, cell=None, point=(lower + upper) / 2, se=1.0, lower=lower, upper=upper,
                   is_pretrend=pretrend)


def test_pretrends_consistent():
    post = [_row("post", 0.5, 1.5, pretrend=False)]
    pre = [_row(f"p{j}", -0.2, 0.3) for j in range(3)]
    verdict = pretrends_report(post, pre)
    assert verdict.consistent
    assert verdict.excluding_zero == ()
    assert "necessary condition only" in verdict.summary()


def test_pretrends_inconsistent_lists_cells():
    pre = [_row(f"p{j}", -0.2, 0.3) for j in range(5)] + [_row("bad", 0.1, 0.4)]
    verdict = pretrends_report([], pre)
    assert not verdict.consistent
    assert verdict.excluding_zero == ("bad",)
    assert verdict.n_pretrend == 6


def test_pretrends_need_cells():
    with pytest.raises(NoPretrendCellsError):
        pretrends_report([_row("post", 0, 1, pretrend=False)], [])
