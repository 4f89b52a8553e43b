"""Tests for effective treatments, cells and mover/stayer frames."""

import numpy as np
import pytest

from effdid import (
    Cell,
    EffectiveTreatmentSpec,
    PanelDataset,
    build_cell_frame,
    compute_effective_treatment,
    custom_design,
    default_design,
)
from effdid.efftreat import violates_monotonicity
from effdid.errors import EmptyCellError, SpecificationError

from .conftest import random_panel


def _single_path(path, delta=0, kind="once"):
    D = np.asarray(path, dtype=float)[None, :]
    panel = PanelDataset.from_arrays(outcomes=np.zeros_like(D), treatments=D)
    eff = compute_effective_treatment(panel, EffectiveTreatmentSpec(kind=kind, anticipation_delta=delta))
    return eff.values[0].tolist()


# =============================================================================
# Effective treatment values
# =============================================================================


@pytest.mark.parametrize("kind,expected", [
    ("once", [0, 1, 1, 1]),
    ("event", [0, 2, 2, 2]),
    ("number", [0, 1, 1, 2]),
])
def test_builtin_specifications(kind, expected):
    assert _single_path([0, 1, 0, 1], kind=kind) == expected


def test_anticipation_shifts_window():
    assert _single_path([0, 0, 1, 0], delta=1, kind="once") == [0, 1, 1, 1]
    assert _single_path([0, 0, 1, 0], delta=1, kind="event") == [0, 3, 3, 3]


def test_window_clipping_records_warning():
    D = np.array([[0, 0, 1]], dtype=float)
    panel = PanelDataset.from_arrays(outcomes=np.zeros_like(D), treatments=D)
    eff = compute_effective_treatment(panel, EffectiveTreatmentSpec("once", anticipation_delta=2))

    assert eff.values[0].tolist() == [1, 1, 1]
    assert [w.code for w in eff.warnings] == ["window_clipped"]


def test_continuous_doses_count_as_treated():
    assert _single_path([0.0, 0.3, 0.0, 2.7], kind="number") == [0, 1, 1, 2]


def test_vector_treatment_any_component():
    D = np.zeros((1, 3, 2))
    D[0, 1, 1] = 5.0
    panel = PanelDataset.from_arrays(outcomes=np.zeros((1, 3)), treatments=D)
    eff = compute_effective_treatment(panel, EffectiveTreatmentSpec("event"))
    assert eff.values[0].tolist() == [0, 2, 2]


def test_support_per_period(small_panel):
    eff = compute_effective_treatment(small_panel, EffectiveTreatmentSpec("event"))
    for t in range(1, 5):
        column = eff.column(t)
        assert set(eff.support_per_period[t]) == set(column[column != 0].tolist())


def test_coarseness_and_monotonicity_on_random_paths(rng):
    for _ in range(1000):
        T = int(rng.integers(2, 9))
        continuous = bool(rng.integers(0, 2))
        raw = rng.random(T) < 0.3
        path = np.where(raw, rng.uniform(0.1, 3.0, T) if continuous else 1.0, 0.0)
        delta = int(rng.integers(0, 3))
        D = path[None, :]
        panel = PanelDataset.from_arrays(outcomes=np.zeros_like(D), treatments=D)
        values = {k: compute_effective_treatment(panel, EffectiveTreatmentSpec(k, delta)).values[0]
                  for k in ("once", "event", "number")}

        np.testing.assert_array_equal(values["once"], (values["event"] != 0).astype(int))
        np.testing.assert_array_equal(values["once"], (values["number"] != 0).astype(int))
        for v in values.values():
            assert not violates_monotonicity(v[None, :]).any()


def test_custom_specification():
    # intensity = current dose rounded, for a dose that never decreases
    spec = EffectiveTreatmentSpec.custom(lambda path, t, delta: int(round(path[t - 1, 0])))
    D = np.array([[0, 1, 2, 2], [0, 0, 0, 1]], dtype=float)
    panel = PanelDataset.from_arrays(outcomes=np.zeros_like(D), treatments=D)
    eff = compute_effective_treatment(panel, spec)

    assert eff.values.tolist() == [[0, 1, 2, 2], [0, 0, 0, 1]]
    assert eff.support_per_period[3] == (2,)
    assert eff.warnings == ()


def test_custom_specification_negative_code():
    spec = EffectiveTreatmentSpec.custom(lambda path, t, delta: -1)
    panel = PanelDataset.from_arrays(outcomes=np.zeros((1, 2)), treatments=np.zeros((1, 2)))
    with pytest.raises(SpecificationError, match="negative"):
        compute_effective_treatment(panel, spec)


@pytest.mark.parametrize("code", [None, "a", "1", 1.5, True, [1]])
def test_custom_specification_non_integer_code(code):
    spec = EffectiveTreatmentSpec.custom(lambda path, t, delta: code)
    panel = PanelDataset.from_arrays(outcomes=np.zeros((1, 2)), treatments=np.zeros((1, 2)))
    with pytest.raises(SpecificationError, match="must return integers"):
        compute_effective_treatment(panel, spec)


def test_custom_specification_non_monotone_warns():
    spec = EffectiveTreatmentSpec.custom(lambda path, t, delta: int(path[t - 1, 0] != 0))
    D = np.array([[0, 1, 0]], dtype=float)
    panel = PanelDataset.from_arrays(outcomes=np.zeros_like(D), treatments=D)
    eff = compute_effective_treatment(panel, spec)
    assert [w.code for w in eff.warnings] == ["monotonicity_violated"]


def test_invalid_spec():
    with pytest.raises(SpecificationError):
        EffectiveTreatmentSpec("sometimes")
    with pytest.raises(SpecificationError):
        EffectiveTreatmentSpec("once", anticipation_delta=-1)


# =============================================================================
# Cells and frames
# =============================================================================


@pytest.mark.parametrize("t,s,e,r", [(2, 2, 1, None), (3, 1, 0, None), (4, 3, 4, 1), (4, 2, 1, 3)])
def test_invalid_cells(t, s, e, r):
    with pytest.raises(SpecificationError):
        Cell(t, s, e, r)


def test_cell_label():
    assert Cell(3, 1, 2).label() == "t=3,s=1,e=2"
    assert Cell(4, 3, 4, 2).label() == "t=4,s=3,e=4,r=2"


def test_mover_stayer_frame():
    D = np.array([[0, 1], [0, 0]], dtype=float)
    Y = np.array([[1.0, 3.0], [2.0, 2.5]])
    panel = PanelDataset.from_arrays(outcomes=Y, treatments=D)
    eff = compute_effective_treatment(panel, EffectiveTreatmentSpec("once"))
    frame = build_cell_frame(panel, eff, Cell(2, 1, 1))

    np.testing.assert_array_equal(frame.movers, [1, 0])
    np.testing.assert_array_equal(frame.stayers, [0, 1])
    np.testing.assert_array_equal(frame.dy, [2.0, 0.5])
    assert (frame.movers * frame.stayers == 0).all()


def test_no_stayers_is_an_error():
    D = np.array([[0, 1], [0, 1]], dtype=float)
    panel = PanelDataset.from_arrays(outcomes=np.zeros_like(D), treatments=D)
    eff = compute_effective_treatment(panel, EffectiveTreatmentSpec("once"))
    with pytest.raises(EmptyCellError, match="t=2,s=1,e=1"):
        build_cell_frame(panel, eff, Cell(2, 1, 1))


def test_pretrend_frame_uses_earlier_periods(rng):
    panel = random_panel(rng, n_units=80, n_periods=4)
    eff = compute_effective_treatment(panel, EffectiveTreatmentSpec("event"))
    post = build_cell_frame(panel, eff, Cell(4, 3, 4))
    pre = build_cell_frame(panel, eff, Cell(4, 3, 4, 2))

    np.testing.assert_array_equal(pre.movers, post.movers)
    np.testing.assert_array_equal(pre.stayers, post.stayers)
    np.testing.assert_array_equal(pre.dy, panel.outcomes[:, 1] - panel.outcomes[:, 0])


# =============================================================================
# Designs
# =============================================================================


@pytest.mark.parametrize("kind,expected", [
    ("once", [(2, 1, 1), (3, 1, 1), (4, 1, 1)]),
    ("event", [(2, 1, 2), (3, 1, 2), (4, 1, 2), (3, 2, 3), (4, 2, 3), (4, 3, 4)]),
    ("number", [(2, 1, 1), (3, 1, 1), (4, 1, 1), (3, 1, 2), (4, 1, 2), (4, 1, 3)]),
])
def test_default_design(sim_panel, kind, expected):
    spec = EffectiveTreatmentSpec(kind)
    eff = compute_effective_treatment(sim_panel.panel, spec)
    cells = default_design(eff, spec)
    assert [(c.t, c.s, c.e) for c in cells] == expected


def test_default_design_with_pretrends(sim_panel):
    spec = EffectiveTreatmentSpec("event")
    eff = compute_effective_treatment(sim_panel.panel, spec)
    cells = default_design(eff, spec, include_pretrends=True)

    pre = [c for c in cells if c.is_pretrend]
    assert [c.label() for c in pre] == ["t=3,s=2,e=3,r=2", "t=4,s=2,e=3,r=2",
                                        "t=4,s=3,e=4,r=2", "t=4,s=3,e=4,r=3"]
    assert len(cells) == 10


def test_default_design_drops_empty_cells():
    # nobody is still untreated at t=3
    D = np.array([[0, 1, 1], [0, 0, 1], [0, 0, 1]], dtype=float)
    panel = PanelDataset.from_arrays(outcomes=np.zeros_like(D), treatments=D)
    spec = EffectiveTreatmentSpec("once")
    eff = compute_effective_treatment(panel, spec)
    records = []
    cells = default_design(eff, spec, records=records)

    assert [c.label() for c in cells] == ["t=2,s=1,e=1"]
    assert [w.code for w in records] == ["cell_dropped"]


def test_custom_design_checks_support(sim_panel):
    eff = compute_effective_treatment(sim_panel.panel, EffectiveTreatmentSpec("number"))
    assert custom_design(eff, [Cell(4, 1, 3)]) == [Cell(4, 1, 3)]
    with pytest.raises(SpecificationError):
        custom_design(eff, [Cell(2, 1, 3)])
