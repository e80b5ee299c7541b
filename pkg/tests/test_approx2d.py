"""Tensor-product approximation engine: geometry, schedules, certificates."""

import dataclasses
import json
from fractions import Fraction
from itertools import product

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chrestenson.approx1d import BudgetError, GadgetBlock1D, GadgetMask1D, WindowBound
from chrestenson.approx2d import (
    AdicRect,
    IntersectionMask1D,
    Lemma34Request,
    Lemma34Result,
    Lemma35Request,
    Lemma35Result,
    ProductGadgetMask,
    Rank1Gadget,
    SchedM0,
    lemma34_construct,
    lemma34_verify,
    lemma34_verify_dense,
    lemma35_construct,
    lemma35_verify,
    lemma35_verify_dense,
    split_into_pieces,
)
from chrestenson.approx1d import start_from_json, worst_subset_excess
from chrestenson.exactnum import F0, F1, sc_eq, sc_is_zero, sc_mul
from chrestenson.grid import StepFunction
from chrestenson.transform import CoeffBlock1D, CoeffBlock2D, Rank1Term

HALF_SQUARE = AdicRect(2, 1, 0, 1, 0)  # [0,1/2) x [0,1/2) at order 2


def tiny_gadget_pair():
    """Hand-built one-band factors on a strict schedule: N1=3, M0=20, M=63."""
    xg = GadgetBlock1D(2, 2, 1, 1, 1, 1, ((0, Fraction(1)),))
    yg = GadgetBlock1D(2, 20, 1, 1, 1, 5, ((0, F1),))
    return xg, yg


# ---------------------------------------------------------------------------
# geometry

def test_adic_rect_geometry():
    r = AdicRect(2, 1, 0, 2, 3)
    assert r.x_measure == Fraction(1, 2) and r.y_measure == Fraction(1, 4)
    assert r.area() == Fraction(1, 8)
    assert r.contains((Fraction(1, 4), Fraction(7, 8)))
    assert not r.contains((Fraction(1, 2), Fraction(7, 8)))
    assert r.split_axis() == "x"
    kids = r.split()
    assert [(k.mx, k.ix) for k in kids] == [(2, 0), (2, 1)]
    assert sum(k.area() for k in kids) == r.area()
    assert AdicRect.from_json(r.to_json()) == r


def test_adic_rect_split_ties_prefer_x():
    sq = AdicRect(3, 1, 2, 1, 1)
    assert sq.split_axis() == "x"
    kids = sq.split()
    assert len(kids) == 3 and all(k.my == 1 and k.iy == 1 for k in kids)


def test_adic_rect_validation():
    with pytest.raises(ValueError):
        AdicRect(2, 1, 2, 1, 0)  # ix out of range
    with pytest.raises(ValueError):
        AdicRect(1, 0, 0, 0, 0)  # order too small


@given(st.integers(2, 4), st.integers(0, 3), st.integers(0, 3), st.data())
@settings(max_examples=40, deadline=None)
def test_adic_rect_split_partitions_area(a, mx, my, data):
    ix = data.draw(st.integers(0, a**mx - 1))
    iy = data.draw(st.integers(0, a**my - 1))
    r = AdicRect(a, mx, ix, my, iy)
    kids = r.split()
    assert len(kids) == a
    assert sum(k.area() for k in kids) == r.area()
    # children tile the parent: disjoint intervals covering it
    axis = r.split_axis()
    ivals = sorted((k.x_interval() if axis == "x" else k.y_interval()) for k in kids)
    for (lo1, hi1), (lo2, _) in zip(ivals, ivals[1:]):
        assert hi1 == lo2
    parent = r.x_interval() if axis == "x" else r.y_interval()
    assert (ivals[0][0], ivals[-1][1]) == parent


# ---------------------------------------------------------------------------
# schedule start

def test_schedule_start_oracle():
    # row window ending at N1 = 4 yields the column start 2(4^2 + 1) = 34
    assert 2 * (4 * 4 + 1) == 34
    s = SchedM0(2, 2)  # N1 = 2^2 - 1 = 3
    assert s.to_int() == 2 * (3 * 3 + 1) == 20


def test_schedule_start_symbolic_log():
    s = SchedM0(2, 5)
    assert s.ceil_log_a() == 11  # literal: ceil(log2 1924)
    big = SchedM0(3, 10**9)
    assert big.ceil_log_a() == 2 * 10**9 + 1
    assert not big.is_materializable()
    rt = start_from_json(json.loads(json.dumps(big.to_json())))
    assert rt == big
    small = SchedM0(2, 7)
    assert start_from_json(small.to_json()) == small.to_int()


# ---------------------------------------------------------------------------
# rank-1 structure

def test_rank1_coefficients_factor_and_vanish_outside():
    xg, yg = tiny_gadget_pair()
    g = Rank1Gadget(xg, yg)
    hit = 0
    for k, s in product(range(0, 70), repeat=2):
        c = g.coefficient(k, s)
        xk, ys = xg.coefficient(k), yg.coefficient(s)
        if sc_is_zero(xk) or sc_is_zero(ys):
            assert sc_is_zero(c)
        else:
            assert sc_eq(c, sc_mul(xk, ys))
            hit += 1
    assert hit == g.coeff_count() == xg.coeff_count() * yg.coeff_count()


def test_rank1_gadget_json_round_trip():
    xg, yg = tiny_gadget_pair()
    g = Rank1Gadget(xg, yg)
    g2 = Rank1Gadget.from_json(json.loads(json.dumps(g.to_json())))
    for k, s in ((2, 32), (3, 33), (0, 0), (5, 32)):
        assert sc_eq(g.coefficient(k, s), g2.coefficient(k, s))


def test_tensor_render_identity():
    # rendering the 2D block equals the outer product of the 1D renders
    xg = GadgetBlock1D(3, 2, 1, 1, 1, 1, ((0, Fraction(1)),))
    yg = GadgetBlock1D(3, 9, 1, 1, 1, 2, ((0, F1),))
    g = Rank1Gadget(xg, yg)
    block = g.to_coeffblock2d()
    m = block.required_rank(None)
    full = block.render(None, m, "exact")
    rx = block.terms[0].row.render(m, "exact")
    ry = block.terms[0].col.render(m, "exact")
    side = 3**m
    for ix in range(side):
        for iy in range(side):
            assert sc_eq(full.values[ix * side + iy], sc_mul(rx.values[ix], ry.values[iy]))


def test_product_mask_measure_and_membership():
    xg, yg = tiny_gadget_pair()
    gm = ProductGadgetMask(GadgetMask1D(xg), GadgetMask1D(yg))
    assert gm.measure() == Fraction(9, 16)
    cm = gm.to_cellmask(6)
    assert cm.measure() == Fraction(9, 16)
    side = 2**6
    probes = 0
    for ix in range(0, side, 7):
        for iy in range(0, side, 7):
            pt = (Fraction(2 * ix + 1, 2 * side), Fraction(2 * iy + 1, 2 * side))
            assert gm.contains(pt) == bool(cm.bits[ix * side + iy])
            probes += 1
    assert probes > 50


# ---------------------------------------------------------------------------
# single-rectangle construction

def test_half_square_request_passes_all_conditions():
    req = Lemma34Request(Fraction(1), HALF_SQUARE, Fraction(1, 2), 3)
    res = lemma34_construct(req)
    assert res.ok, [f.name for f in res.certificate.failures()]
    # literal integer windows on the frequency-squaring schedule
    assert isinstance(res.N1, int) and isinstance(res.M0, int)
    assert res.M0 == 2 * (res.N1**2 + 1)
    assert res.N1 == 2 ** (res.block.xg.nu1 + res.block.xg.T * res.block.xg.r) - 1
    names = {e.name for e in res.certificate.entries}
    for want in (
        "condition-1-measure",
        "condition-2-power-sum",
        "condition-3-equality-on-E",
        "condition-4-rectangular-family",
        "condition-4-spherical-family",
        "condition-4-combined",
        "schedule-gap",
        "window-separation",
    ):
        assert want in names
    # exceptional set really is small and the coefficients really are flat
    assert res.mask.measure() > Fraction(1, 2)
    assert res.exact["combined_bound"] <= 16 * req.mass()


def test_half_square_structural_verify_and_round_trip():
    req = Lemma34Request(Fraction(1), HALF_SQUARE, Fraction(1, 2), 3)
    res = lemma34_construct(req)
    assert lemma34_verify(req, res).ok
    res2 = Lemma34Result.from_json(json.loads(json.dumps(res.to_json())))
    assert lemma34_verify(res2.request, res2).ok


def test_symbolic_windows_engage_for_small_delta():
    req = Lemma34Request(Fraction(1), HALF_SQUARE, Fraction(1, 10), 3)
    res = lemma34_construct(req)
    assert res.ok
    assert isinstance(res.N1, WindowBound) and isinstance(res.M0, SchedM0)
    assert lemma34_verify(req, res).ok
    res2 = Lemma34Result.from_json(json.loads(json.dumps(res.to_json())))
    assert lemma34_verify(res2.request, res2).ok


def test_compact_schedule_skips_spherical_certificate():
    req = Lemma34Request(Fraction(1), HALF_SQUARE, Fraction(1, 2), 3)
    res = lemma34_construct(req, schedule="compact")
    assert res.ok
    assert res.M0 == res.N1 + 1
    names = {e.name for e in res.certificate.entries}
    assert "condition-4-spherical-family" not in names
    assert "condition-4-combined" in names
    assert lemma34_verify(req, res).ok


def test_compact_result_posing_as_strict_is_flagged():
    req = Lemma34Request(Fraction(1), HALF_SQUARE, Fraction(1, 2), 3)
    res = lemma34_construct(req, schedule="compact")
    forged = dataclasses.replace(res, schedule="strict")
    cert = lemma34_verify(req, forged)
    assert not cert.ok
    assert "schedule-invariant" in {f.name for f in cert.failures()}


def test_request_validation():
    with pytest.raises(ValueError):
        Lemma34Request(Fraction(0), HALF_SQUARE, Fraction(1, 2), 3)
    with pytest.raises(ValueError):
        Lemma34Request(Fraction(1), HALF_SQUARE, Fraction(3, 2), 3)
    with pytest.raises(ValueError):
        Lemma34Request(Fraction(1), HALF_SQUARE, Fraction(1, 2), 1)


def test_varied_rectangles_and_orders():
    cases = [
        (2, AdicRect(2, 2, 1, 1, 1), Fraction(-3, 4), Fraction(1, 4), 5),
        (3, AdicRect(3, 1, 2, 1, 0), Fraction(2), Fraction(1, 2), 3),
        (3, AdicRect(3, 1, 1, 2, 4), Fraction(1, 3), Fraction(1, 4), 4),
    ]
    for a, rect, gamma, delta, n in cases:
        req = Lemma34Request(gamma, rect, delta, n)
        res = lemma34_construct(req)
        assert res.ok, (a, [f.name for f in res.certificate.failures()])
        assert lemma34_verify(req, res).ok


# ---------------------------------------------------------------------------
# dense verification on explicit toy blocks

def test_dense_toy_passes_all_conditions():
    xg, yg = tiny_gadget_pair()
    row, col = xg.to_coeffblock(), yg.to_coeffblock()
    block = CoeffBlock2D(2, (2, 63), [Rank1Term(F1, row, col)])
    mask = ProductGadgetMask(GadgetMask1D(xg), GadgetMask1D(yg)).to_cellmask(6)
    req = Lemma34Request(Fraction(1), HALF_SQUARE, Fraction(1, 2), 2)
    cert = lemma34_verify_dense(req, block, mask, 3, 20, "strict")
    assert cert.ok, [f.name for f in cert.failures()]
    names = {e.name for e in cert.entries}
    assert "rank-1-identity" in names and "condition-4-combined" in names


def test_dense_power_sum_tamper_fails_condition_two():
    xg, yg = tiny_gadget_pair()
    row, col = xg.to_coeffblock(), yg.to_coeffblock()
    loud = CoeffBlock1D(2, row.window, {k: 5 * v for k, v in row.coeffs.items()})
    block = CoeffBlock2D(2, (2, 63), [Rank1Term(F1, loud, col)])
    mask = ProductGadgetMask(GadgetMask1D(xg), GadgetMask1D(yg)).to_cellmask(6)
    req = Lemma34Request(Fraction(1), HALF_SQUARE, Fraction(1, 2), 2)
    cert = lemma34_verify_dense(req, block, mask, 3, 20, "strict")
    assert not cert.ok
    assert "condition-2-power-sum" in {f.name for f in cert.failures()}


def test_dense_wrong_schedule_fails():
    xg, yg = tiny_gadget_pair()
    block = CoeffBlock2D(2, (2, 63), [Rank1Term(F1, xg.to_coeffblock(), yg.to_coeffblock())])
    mask = ProductGadgetMask(GadgetMask1D(xg), GadgetMask1D(yg)).to_cellmask(6)
    req = Lemma34Request(Fraction(1), HALF_SQUARE, Fraction(1, 2), 2)
    cert = lemma34_verify_dense(req, block, mask, 3, 4, "strict")  # M0 = N1 + 1 claim
    assert not cert.ok
    assert "schedule-start" in {f.name for f in cert.failures()}


# ---------------------------------------------------------------------------
# multi-piece targets

def test_quarter_square_splits_into_two_pieces():
    f = HALF_SQUARE.indicator2d(1).scale(Fraction(1, 8))
    pieces = split_into_pieces(f, Fraction(1, 2))
    assert len(pieces) == 2
    assert all(g == Fraction(1, 8) for g, _ in pieces)
    assert all(abs(g) * r.area() == Fraction(1, 64) for g, r in pieces)
    # split ran along the longer (equal -> x) axis
    assert {(r.mx, r.my) for _, r in pieces} == {(2, 1)}


def test_quarter_square_multi_piece_budgets():
    f = HALF_SQUARE.indicator2d(1).scale(Fraction(1, 8))
    req = Lemma35Request(f, Fraction(1, 2), 2)
    res = lemma35_construct(req)
    assert res.ok, [e.name for e in res.certificate.failures()]
    assert len(res.pieces) == 2
    # per-piece budget min(eps/(16*nu0), eps/2^nu) = 1/64 for both pieces
    assert [p.request.delta for p in res.pieces] == [Fraction(1, 64)] * 2
    assert res.exact["measure"] > Fraction(1, 2)
    assert lemma35_verify(req, res).ok


def test_three_piece_strict_build_and_parallel_verify():
    vals = [Fraction(1, 16), F0, Fraction(-1, 32), Fraction(1, 64)]
    f = StepFunction(2, 2, 1, vals)
    req = Lemma35Request(f, Fraction(1, 2), 2)
    res = lemma35_construct(req)
    assert res.ok and len(res.pieces) == 3
    assert [p.request.delta for p in res.pieces] == [Fraction(1, 96)] * 3
    man = res.manifest()
    assert [m["nu"] for m in man] == [1, 2, 3]
    seq = lemma35_verify(req, res, threads=1)
    par = lemma35_verify(req, res, threads=3)
    assert seq.ok and par.ok
    assert [e.name for e in seq.entries] == [e.name for e in par.entries]
    assert [e.passed for e in seq.entries] == [e.passed for e in par.entries]


def test_multi_piece_json_round_trip_reverifies():
    f = HALF_SQUARE.indicator2d(1).scale(Fraction(1, 8))
    req = Lemma35Request(f, Fraction(1, 2), 2)
    res = lemma35_construct(req)
    res2 = Lemma35Result.from_json(json.loads(json.dumps(res.to_json())))
    assert lemma35_verify(res2.request, res2).ok


def test_zero_target_is_trivial():
    req = Lemma35Request(StepFunction.zero(2, 2, 1), Fraction(1, 2), 2)
    res = lemma35_construct(req)
    assert res.ok and len(res.pieces) == 0
    assert res.exact["measure"] == F1
    assert lemma35_verify(req, res).ok


def test_window_stacking_is_gapless():
    f = HALF_SQUARE.indicator2d(1).scale(Fraction(1, 8))
    res = lemma35_construct(Lemma35Request(f, Fraction(1, 2), 2))
    p1, p2 = res.pieces
    e_prev = p1.block.yg.nu1 + p1.block.yg.T * p1.block.yg.r
    start = p2.block.xg.N0
    if isinstance(start, int):
        assert start == 2**e_prev
    else:
        assert start.exp == e_prev and start.offset == 0


def test_piece_budget_exhaustion():
    f = HALF_SQUARE.indicator2d(1)  # mass 1/4, eps tiny -> explosion
    with pytest.raises(BudgetError) as exc:
        split_into_pieces(f, Fraction(1, 64), max_pieces=8)
    assert exc.value.condition == "piece-splitting"


def test_intersection_mask_measure_matches_sampling():
    f = HALF_SQUARE.indicator2d(1).scale(Fraction(1, 8))
    res = lemma35_construct(Lemma35Request(f, Fraction(1, 2), 2))
    mx = res.mask.x
    assert isinstance(mx, IntersectionMask1D)
    exact = mx.measure()
    assert 0 < exact < 1
    # the two pieces' x-supports are the disjoint quarters of [0,1/2), so
    # each exclusion bites only on its own quarter
    expect = 1 - Fraction(1, 4) * (Fraction(1, 2**res.pieces[0].block.xg.r)
                                   + Fraction(1, 2**res.pieces[1].block.xg.r))
    assert exact == expect
    # the y factors share [0,1/2): there the exclusions compound
    my_ = res.mask.y.measure()
    expect_y = Fraction(1, 2) * (1 - Fraction(1, 2**res.pieces[0].block.yg.r)) * (
        1 - Fraction(1, 2**res.pieces[1].block.yg.r)) + Fraction(1, 2)
    assert my_ == expect_y


def test_dense_multi_piece_worst_subset_and_spurious_coefficient():
    xg, yg = tiny_gadget_pair()
    row, col = xg.to_coeffblock(), yg.to_coeffblock()
    block = CoeffBlock2D(2, (2, 63), [Rank1Term(F1, row, col)])
    mask = ProductGadgetMask(GadgetMask1D(xg), GadgetMask1D(yg)).to_cellmask(6)
    f = HALF_SQUARE.indicator2d(1)
    req = Lemma35Request(f, Fraction(1, 2), 2)
    cert = lemma35_verify_dense(req, block, mask)
    assert cert.ok, [e.name for e in cert.failures()]
    spur = CoeffBlock2D(2, (2, 63), [Rank1Term(F1, row, col)], {(10, 40): Fraction(2, 3)})
    bad = lemma35_verify_dense(req, spur, mask)
    assert not bad.ok
    failed = {e.name for e in bad.failures()}
    assert failed & {"condition-1-equality-on-E", "condition-4-rectangular-sweep",
                     "condition-4-spherical-sweep", "condition-4-combined"}


def test_dense_fast_mode_flags_subsampling():
    xg, yg = tiny_gadget_pair()
    block = CoeffBlock2D(2, (2, 63), [Rank1Term(F1, xg.to_coeffblock(), yg.to_coeffblock())])
    mask = ProductGadgetMask(GadgetMask1D(xg), GadgetMask1D(yg)).to_cellmask(6)
    f = HALF_SQUARE.indicator2d(1)
    cert = lemma35_verify_dense(Lemma35Request(f, Fraction(1, 2), 2), block, mask, mode="fast")
    assert "fast-mode-subsampling" in {e.name for e in cert.entries}


# ---------------------------------------------------------------------------
# worst-subset reduction vs brute force

@given(st.data())
@settings(max_examples=60, deadline=None)
def test_worst_subset_matches_brute_force(data):
    n = data.draw(st.integers(1, 12))
    s_vals = [Fraction(data.draw(st.integers(-8, 8)), data.draw(st.integers(1, 4)))
              for _ in range(n)]
    f_vals = [Fraction(data.draw(st.integers(0, 8)), data.draw(st.integers(1, 4)))
              for _ in range(n)]
    e_bits = [data.draw(st.booleans()) for _ in range(n)]
    area = Fraction(1, n)
    lo, hi = worst_subset_excess(s_vals, f_vals, e_bits, area, 64)
    assert lo == hi  # rational inputs stay exact
    best = F0
    for pick in range(1 << n):
        tot = sum((abs(s_vals[i]) - f_vals[i]) * area
                  for i in range(n) if e_bits[i] and (pick >> i) & 1)
        best = max(best, tot)
    assert lo == best
