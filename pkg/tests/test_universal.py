"""Universal series: enumeration, chained block assembly, stratified weight,
greedy subseries selection, and the convergence monitor."""

import json
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chrestenson.approx1d import BudgetError, GadgetBlock1D, GadgetMask1D
from chrestenson.approx2d import IntersectionMask1D
from chrestenson.exactnum import F0, F1
from chrestenson.grid import StepFunction
from chrestenson.universal import (
    CensusEnumerator,
    GreedySelection,
    MonitorTrace,
    StratifiedWeight,
    ThinEnumerator,
    UniversalSeries,
    block_budget,
    build_universal,
    build_weight,
    greedy_select,
    make_enumerator,
    monitor_convergence,
)

F14 = Fraction(1, 4)
F34 = Fraction(3, 4)


@pytest.fixture(scope="module")
def series2():
    return build_universal(2, 2, "strict")


@pytest.fixture(scope="module")
def series2_compact():
    return build_universal(2, 2, "compact")


@pytest.fixture(scope="module")
def series5():
    return build_universal(2, 5, "strict")


@pytest.fixture(scope="module")
def series5_compact():
    return build_universal(2, 5, "compact")


@pytest.fixture(scope="module")
def weight5_greedy(series5):
    return build_weight(series5, F34)


@pytest.fixture(scope="module")
def selection5(series5, weight5_greedy):
    return greedy_select(series5, weight5_greedy, ThinEnumerator(2).function(3), 3)


# ---------------------------------------------------------------------------
# clipped intersection measures (oracle: one native cell [0,1/2) at rank 1,
# refined rank 2, band width 1 -- each refined quarter loses half its mass)

def one_band_mask(nu1: int) -> GadgetMask1D:
    return GadgetMask1D(GadgetBlock1D(2, 4, 1, 2, 1, nu1, ((0, F1),)))


def test_measure_on_single_mask_oracle():
    m = IntersectionMask1D((one_band_mask(3),))
    assert m.measure() == Fraction(3, 4)
    assert m.measure_on(F0, F14) == Fraction(1, 8)
    assert m.measure_on(F0, Fraction(1, 2)) == F14
    assert m.measure_on(Fraction(1, 2), F1) == Fraction(1, 2)
    assert m.measure_on(Fraction(1, 8), Fraction(3, 8)) == Fraction(1, 8)
    assert m.measure_on(F14, F14) == F0


def test_measure_on_disjoint_band_intersection():
    m = IntersectionMask1D((one_band_mask(3), one_band_mask(5)))
    assert m.measure() == Fraction(5, 8)
    assert m.measure_on(F0, Fraction(1, 2)) == Fraction(1, 8)
    assert m.measure_on(Fraction(1, 2), F1) == Fraction(1, 2)


def test_measure_on_empty_factor_list():
    m = IntersectionMask1D(())
    assert m.measure_on(Fraction(1, 3), Fraction(2, 3)) == Fraction(1, 3)


@given(st.integers(0, 3))
@settings(max_examples=8, deadline=None)
def test_measure_on_partitions_refine_the_total(rank):
    m = IntersectionMask1D((one_band_mask(3), one_band_mask(5)))
    side = 2 ** rank
    parts = [m.measure_on(Fraction(i, side), Fraction(i + 1, side)) for i in range(side)]
    assert sum(parts) == m.measure()


# ---------------------------------------------------------------------------
# thin enumeration

def test_thin_slots_and_masses():
    e = ThinEnumerator(2)
    assert e.function(1).equals(StepFunction.zero(2, 2, 0))
    for s in range(2, 9):
        f = e.function(s)
        mass = sum(abs(Fraction(v)) for v in f.values) * f.cell_area()
        assert mass <= block_budget(s) / 32  # one split piece per block
        assert e.gamma(s) == Fraction(1, 2 ** (2 * s + 5))
    assert e.gamma(2) == Fraction(1, 512)


def test_thin_mass_saturates_the_piece_budget_at_order_two():
    e = ThinEnumerator(2)
    f = e.function(4)
    mass = sum(abs(Fraction(v)) for v in f.values) * f.cell_area()
    assert mass == block_budget(4) / 32


def test_thin_locate_round_trip():
    e = ThinEnumerator(2)
    for s in range(1, 9):
        assert e.locate(e.function(s)) == s
    e3 = ThinEnumerator(3)
    for s in range(1, 6):
        assert e3.locate(e3.function(s)) == s


def test_thin_locate_rejects_foreign_functions():
    e = ThinEnumerator(2)
    assert e.locate(StepFunction.constant(2, 2, Fraction(1, 3))) is None
    assert e.locate(StepFunction(2, 2, 1, [Fraction(1, 512), 0, 0, Fraction(1, 512)])) is None
    vals = [F0] * 4
    vals[3] = Fraction(1, 512)  # right height, wrong corner
    assert e.locate(StepFunction(2, 2, 1, vals)) is None


# ---------------------------------------------------------------------------
# census enumeration
#
# Stage counts at order 2 are frozen from the inclusion-exclusion closed
# form: stage 1 = 3 constants + (3^4 - 3) rank-1 tuples = 81; stage 2 =
# (7 - 3) constants + ((7^4 - 3^4) - (7 - 3)) rank-1 + (7^16 - 7^4) rank-2.

def test_census_stage_totals_oracle():
    c = CensusEnumerator(2)
    assert c.stage_total(1) == 81
    assert c.stage_total(2) == 4 + 2316 + (7 ** 16 - 7 ** 4)


def test_census_first_slots():
    c = CensusEnumerator(2)
    f1 = c.function(1)
    assert f1.m == 0 and Fraction(f1.values[0]) == -1
    assert c.function(2).equals(StepFunction.zero(2, 2, 0))
    f3 = c.function(3)
    assert f3.m == 0 and Fraction(f3.values[0]) == 1
    f4 = c.function(4)  # lex-first non-refinable rank-1 tuple over {-1,0,1}
    assert f4.m == 1
    assert [Fraction(v) for v in f4.values] == [-1, -1, -1, 0]


def test_census_locate_round_trip_first_slots():
    c = CensusEnumerator(2)
    for slot in range(1, 201):
        assert c.locate(c.function(slot)) == slot


def test_census_locate_round_trip_stage_two_border():
    c = CensusEnumerator(2)
    for slot in range(78, 90):  # straddles the stage-1 / stage-2 border
        assert c.locate(c.function(slot)) == slot


def test_census_locates_arbitrary_small_functions():
    c = CensusEnumerator(2)
    g = StepFunction(2, 2, 1, [Fraction(1, 2), 0, 0, Fraction(-1, 2)])
    slot = c.locate(g)
    assert c.function(slot).equals(g)
    const = StepFunction.constant(2, 2, Fraction(-1, 2))
    assert c.function(c.locate(const)).equals(const)


def test_census_locate_canonicalizes_refinable_input():
    c = CensusEnumerator(2)
    f = StepFunction.constant(2, 2, F1, m=2)  # rank-2 presentation of a constant
    assert c.locate(f) == 3


def test_census_stage_cap_is_honest():
    c = CensusEnumerator(2)
    with pytest.raises(BudgetError) as err:
        c.locate(StepFunction.constant(2, 2, Fraction(1, 1024)))
    assert err.value.condition == "enumeration"


def test_make_enumerator_names():
    assert make_enumerator("thin", 3).a == 3
    assert make_enumerator("census", 2).name == "census"
    with pytest.raises(ValueError):
        make_enumerator("dense", 2)


# ---------------------------------------------------------------------------
# series assembly

def test_series2_both_schedules_certify(series2, series2_compact):
    for ser in (series2, series2_compact):
        assert ser.ok, [e.name for e in ser.certificate.failures()]
        assert ser.S == 2 and len(ser.blocks) == 2
        assert ser.blocks[0].is_zero and not ser.blocks[1].is_zero


def test_series_block_requirements_present(series2):
    names = {e.name for e in series2.certificate.entries}
    for want in (
        "block-2:equality-on-kept-set",
        "block-2:kept-measure",
        "block-2:coeff-moduli-bounded",
        "block-2:power-sum-monotone-route",
        "block-2:power-sum-direct",
        "block-2:partial-sum-family",
        "native-floors",
        "enumeration-slots",
        "enumeration-injective",
    ):
        assert want in names, want


def test_series_block_budgets_and_measures(series5):
    assert series5.ok, [e.name for e in series5.certificate.failures()]
    for s in range(2, 6):
        blk = series5.block(s)
        assert blk.eps == block_budget(s) == Fraction(1, 4 ** (s + 1))
        assert blk.measure > 1 - blk.eps
        assert blk.mass == blk.sup * F14  # single corner piece of area 1/4
        assert blk.l1_dirty <= 3 * blk.mass


def test_series_windows_chain_and_bands_order(series5):
    names = {e.name: e.passed for e in series5.certificate.entries}
    for pair in ("2-to-3", "3-to-4", "4-to-5"):
        assert names[f"window-chain-{pair}"]
        assert names[f"band-ordering-{pair}"]
    ends = [b.window_end_exponent() for b in series5.blocks if not b.is_zero]
    assert all(x < y for x, y in zip(ends, ends[1:]))
    for prev, cur in zip(series5.blocks[1:], series5.blocks[2:]):
        assert all(xb.nu1 >= prev.window_end_exponent() for xb in cur.x_blocks)


def test_series_manifest_round_trip_is_byte_identical(series2):
    blob = json.dumps(series2.to_manifest(), sort_keys=True)
    again = UniversalSeries.from_manifest(json.loads(blob))
    assert json.dumps(again.to_manifest(), sort_keys=True) == blob


def test_series_rebuild_is_byte_identical(series2):
    blob = json.dumps(series2.to_manifest(), sort_keys=True)
    rebuilt = build_universal(2, 2, "strict")
    assert json.dumps(rebuilt.to_manifest(), sort_keys=True) == blob


def test_series_axis_masks_match_block_measures(series5):
    xm, ym = series5.axis_masks(5)
    assert xm.measure() * ym.measure() == series5.block(5).measure


def test_census_backed_build_fails_honestly():
    with pytest.raises(BudgetError) as err:
        build_universal(2, 2, "strict", enumerator=CensusEnumerator(2))
    assert err.value.condition == "piece-splitting"
    assert "block 1" in str(err.value)


def test_build_rejects_mismatched_enumerator_order():
    with pytest.raises(ValueError):
        build_universal(2, 2, enumerator=ThinEnumerator(3))


# ---------------------------------------------------------------------------
# stratified weight

def test_weight_start_index_formula(series2):
    assert build_weight(series2, F14).n0 == 3
    assert build_weight(series2, F34).n0 == 1
    assert build_weight(series2, Fraction(1, 10)).n0 == 4


def test_weight_quarter_budget(series5):
    w = build_weight(series5, F14)
    assert w.ok, [e.name for e in w.certificate.failures()]
    assert w.n0 == 3
    assert sorted(w.mu) == [4, 5, 6]
    # every value positive, at most one, with mu = 1 exactly off a small set
    assert all(F0 < v <= F1 for v in w.mu.values())
    xm, ym = series5.axis_masks(3)
    assert w.measure_ne_one == 1 - xm.measure() * ym.measure()
    assert w.measure_ne_one < F14
    assert w.measure_ne_one < Fraction(1, 2 ** 8) + Fraction(1, 2 ** 10) + Fraction(1, 2 ** 12)


def test_weight_ladder_dominates_block_constants(series5):
    w = build_weight(series5, F34)
    for blk, hs in zip(series5.blocks, w.h):
        assert hs >= blk.sup + 3 * blk.c_prefix_sum + 1
    for n in range(w.n0 + 1, series5.S + 2):
        assert w.mu_for(n) <= Fraction(1, 4 ** n)
        prod = F1
        for s in range(1, min(n, series5.S) + 1):
            prod *= w.h[s - 1]
        assert w.mu_for(n) == Fraction(1, 4 ** n) / prod


def test_weight_cell_table_integrates_to_global_mass(series5, weight5_greedy):
    w = weight5_greedy
    table = w.cell_weight_table()
    names = {e.name for e in w.certificate.entries}
    assert "weight-mass-consistency" in names
    assert w.weighted_l1(StepFunction.constant(2, 2, F1)) == sum(table, F0)


def test_weight_degenerate_when_start_exceeds_stages(series2):
    w = build_weight(series2, F14)  # n0 = 3 > S = 2: unit weight everywhere
    assert w.measure_ne_one == F0
    assert not w.mu
    assert w.value_at((Fraction(1, 3), Fraction(1, 3))) == F1
    assert w.weighted_l1(StepFunction.constant(2, 2, F1)) == F1


def test_weight_value_at_unit_on_kept_set(series2):
    w = build_weight(series2, F34)  # n0 = 1, strata 2 and 3
    assert sorted(w.mu) == [2, 3]
    # 1/3 has alternating binary digits, so no all-zero band pattern: kept
    assert w.value_at((Fraction(1, 3), Fraction(1, 3))) == F1


def test_weight_fast_mode_doubles_ladder(series2):
    wc = build_weight(series2, F34)
    wf = build_weight(series2, F34, mode="fast")
    assert all(f == 2 * c for c, f in zip(wc.h, wf.h))
    assert wf.mode == "fast"


def test_weight_compact_schedule_drops_spherical_term(series5, series5_compact):
    ws = build_weight(series5, F34)
    wk = build_weight(series5_compact, F34)
    for blk_s, blk_k, hs, hk in zip(series5.blocks, series5_compact.blocks, ws.h, wk.h):
        assert hs == blk_s.sup + 3 * blk_s.c_prefix_sum + 1
        assert hk == blk_k.sup + blk_k.c_prefix_sum + 1
    note = next(e.note for e in wk.certificate.entries if e.name == "ladder-constants")
    assert "rectangular" in note


def test_weight_json_round_trip(series5, weight5_greedy):
    blob = json.dumps(weight5_greedy.to_json(), sort_keys=True)
    again = StratifiedWeight.from_json(json.loads(blob), series5)
    assert json.dumps(again.to_json(), sort_keys=True) == blob
    assert again.cell_weight_table() == weight5_greedy.cell_weight_table()


def test_weight_loaded_without_series_declines_pointwise_work(weight5_greedy):
    blob = json.dumps(weight5_greedy.to_json(), sort_keys=True)
    bare = StratifiedWeight.from_json(json.loads(blob))
    with pytest.raises(BudgetError) as err:
        bare.value_at((F0, F0))
    assert err.value.condition == "weight"


def test_weight_validates_inputs(series2):
    with pytest.raises(ValueError):
        build_weight(series2, F1)
    with pytest.raises(ValueError):
        build_weight(series2, F14, mode="loose")


# ---------------------------------------------------------------------------
# greedy subseries selection

def test_greedy_trails_planted_target(series5, selection5):
    sel = selection5
    assert sel.ok, [e.name for e in sel.certificate.failures()]
    assert sel.picks == (3, 4, 5)
    for q, (r, tau) in enumerate(zip(sel.residuals, sel.taus), 1):
        assert tau == Fraction(1, 4 ** q)
        assert r < 2 * tau
    assert series5.block(3).f.equals(sel.target)


def test_greedy_residuals_account_for_added_mass(series5, weight5_greedy, selection5):
    # once the target block is in, later residuals are at least the weighted
    # mass of the extra blocks' targets and stay tiny against the thresholds
    sel = selection5
    w = weight5_greedy
    extra4 = w.weighted_l1(series5.block(4).f)
    assert sel.residuals[1] >= extra4
    assert sel.residuals[2] >= extra4
    assert sel.residuals[0] <= w.mu_for(4) * series5.block(3).l1_dirty


def test_greedy_first_admissible_is_deterministic(series5, weight5_greedy, selection5):
    again = greedy_select(series5, weight5_greedy, ThinEnumerator(2).function(3), 3)
    assert json.dumps(again.to_json(), sort_keys=True) == \
        json.dumps(selection5.to_json(), sort_keys=True)


def test_greedy_selection_json_round_trip(selection5):
    blob = json.dumps(selection5.to_json(), sort_keys=True)
    again = GreedySelection.from_json(json.loads(blob))
    assert json.dumps(again.to_json(), sort_keys=True) == blob


def test_greedy_trace_records_candidates(selection5):
    assert all(row["admissible"] for row in selection5.trace)
    assert [row["candidate"] for row in selection5.trace] == [3, 4, 5]


def test_greedy_exhaustion_is_honest(series5):
    # a late start index leaves too few stages for a three-step chain
    w = build_weight(series5, F14)  # n0 = 3: picks must start at stage 5
    with pytest.raises(BudgetError) as err:
        greedy_select(series5, w, ThinEnumerator(2).function(3), 3)
    assert err.value.condition == "selection"
    assert "q=2" in str(err.value)


def test_greedy_rejects_foreign_targets(series5, weight5_greedy):
    with pytest.raises(ValueError):
        greedy_select(series5, weight5_greedy, StepFunction.zero(3, 2, 0))


# ---------------------------------------------------------------------------
# convergence monitor

def test_monitor_all_rows_pass(series5, weight5_greedy, selection5):
    mon = monitor_convergence(series5, weight5_greedy, selection5, (1, 2))
    assert mon.ok, [e.name for e in mon.certificate.failures()]
    assert all(r["passed"] for r in mon.rows)
    for q in (1, 2):
        rows_q = [r for r in mon.rows if r["q"] == q]
        assert {r["kind"] for r in rows_q} == {"boundary", "rect", "sph"}
        assert all(r["bound"] == Fraction(21, 4 ** q) for r in rows_q)
        assert rows_q[0]["cutoff"].startswith("below-block-")
        assert rows_q[-1]["cutoff"].startswith("beyond-block-")


def test_monitor_boundary_rows_are_stage_residuals(series5, weight5_greedy, selection5):
    mon = monitor_convergence(series5, weight5_greedy, selection5, (1, 2))
    below1 = next(r for r in mon.rows if r["cutoff"] == "below-block-3")
    beyond1 = next(r for r in mon.rows if r["cutoff"] == "beyond-block-3")
    assert below1["error"] == selection5.r0
    assert beyond1["error"] == selection5.residuals[0]


def test_monitor_interior_rows_decompose(series5, weight5_greedy, selection5):
    mon = monitor_convergence(series5, weight5_greedy, selection5, (1,))
    blk = series5.block(3)
    w = weight5_greedy
    expect = (selection5.r0 + 2 * blk.mass + blk.eps
              + w.h[2] * w.mu_for(4) * (1 - blk.measure))
    interior = [r for r in mon.rows if r["kind"] in ("rect", "sph")]
    assert interior and all(r["error"] == expect for r in interior)


def test_monitor_legend_pins_windows(series5, weight5_greedy, selection5):
    mon = monitor_convergence(series5, weight5_greedy, selection5, (1, 2))
    assert set(mon.legend) == {"block3-piece1", "block4-piece1"}
    for entry in mon.legend.values():
        assert "row-window" in entry and "col-window" in entry


def test_monitor_csv_shape_and_determinism(series5, weight5_greedy, selection5):
    mon = monitor_convergence(series5, weight5_greedy, selection5, (1, 2))
    csv = mon.to_csv()
    lines = csv.strip().split("\n")
    assert lines[0] == "kind,cutoff,q,error,bound,pass"
    assert len(lines) == 1 + len(mon.rows)
    assert all(line.endswith(",pass") for line in lines[1:])
    again = monitor_convergence(series5, weight5_greedy, selection5, (1, 2))
    assert again.to_csv() == csv
    blob = json.dumps(mon.to_json(), sort_keys=True)
    assert json.dumps(again.to_json(), sort_keys=True) == blob


def test_monitor_compact_schedule_has_no_spherical_rows(series5_compact):
    w = build_weight(series5_compact, F34)
    sel = greedy_select(series5_compact, w, ThinEnumerator(2).function(3), 3)
    mon = monitor_convergence(series5_compact, w, sel, (1, 2))
    assert mon.ok
    assert all(r["kind"] != "sph" for r in mon.rows)
    names = {e.name for e in mon.certificate.entries}
    assert "spherical-classes" in names


def test_monitor_rejects_unselected_stage(series5, weight5_greedy, selection5):
    with pytest.raises(ValueError):
        monitor_convergence(series5, weight5_greedy, selection5, (4,))
