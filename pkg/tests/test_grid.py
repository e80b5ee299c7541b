"""a-adic grids: step functions, masks, weights, exact integration."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chrestenson.exactnum import QCyc
from chrestenson.grid import (
    AdicCell,
    CellMask,
    StepFunction,
    WeightFunction,
    cell_of_point,
    indicator,
    integral_weighted_L1,
    ivl_exact,
    sup_norm_C,
    tensor,
)
from chrestenson.walsh import exponent_row


# -- indicator

def test_indicator_half_interval():
    f = indicator(AdicCell(2, 1, 0), 1)
    assert list(f.values) == [1, 0]


def test_indicator_middle_third_rank2():
    f = indicator(AdicCell(3, 1, 1), 2)
    assert list(f.values) == [0, 0, 0, 1, 1, 1, 0, 0, 0]


def test_indicator_rank0_is_constant_one():
    f = indicator(AdicCell(5, 0, 0), 0)
    assert list(f.values) == [1]
    assert f.value_at(Fraction(9, 10)) == 1


def test_indicator_rank_too_coarse():
    with pytest.raises(ValueError, match="rank too coarse"):
        indicator(AdicCell(2, 3, 1), 2)


def test_indicator_2d_corner():
    f = indicator(AdicCell(2, 1, (0, 1)), 2)
    assert f.value_at((Fraction(1, 4), Fraction(3, 4))) == 1
    assert f.value_at((Fraction(3, 4), Fraction(3, 4))) == 0
    assert f.integral() == Fraction(1, 4)


# -- weighted L1 integral

def test_integral_constant_one():
    f = StepFunction.constant(2, 1, 1, m=0)
    assert ivl_exact(integral_weighted_L1(f)) == 1


def test_integral_quarter_with_half_weight():
    f = indicator(AdicCell(2, 2, 0), 2)
    mu = WeightFunction.from_values(2, 1, 0, [Fraction(1, 2)])
    assert ivl_exact(integral_weighted_L1(f, mu)) == Fraction(1, 8)


def test_integral_two_thirds_signed():
    # |3*chi_[0,1/3) - 3*chi_[1/3,2/3)| integrates to 2
    f = indicator(AdicCell(3, 1, 0), 1).scale(3) - indicator(AdicCell(3, 1, 1), 1).scale(3)
    got = ivl_exact(integral_weighted_L1(f))
    # independent cell-sum oracle
    oracle = sum(abs(Fraction(v)) for v in f.values) * Fraction(1, 3)
    assert got == oracle == 2


def test_integral_respects_mask():
    f = StepFunction(2, 1, 2, [1, -2, 3, -4])
    mask = CellMask.from_cells(2, 1, 2, [1, 3])
    assert ivl_exact(f.abs_integral(mask=mask)) == Fraction(2 + 4, 4)


def test_weighted_integral_complex_values_encloses():
    z = QCyc.root(5, 1) + 1  # |z| irrational
    f = StepFunction(5, 1, 1, [z, 0, 0, 0, 0])
    lo, hi = f.abs_integral(bits=96)
    true = abs(z.to_complex()) / 5
    assert float(lo) <= true <= float(hi)
    assert float(hi - lo) < 1e-20


# -- sup norm

def test_sup_norm_zero():
    assert sup_norm_C(StepFunction.zero(3, 1, 1)) == (0, 0)


def test_sup_norm_disjoint_steps():
    f = indicator(AdicCell(2, 2, 0), 2).scale(2) - indicator(AdicCell(2, 2, 3), 2)
    assert ivl_exact(sup_norm_C(f)) == 2
    assert f.sup_norm_sq() == 4


def test_sup_norm_walsh_character_is_one():
    a, m, n = 3, 2, 5
    vals = [QCyc.root(a, int(e)) for e in exponent_row(a, m, n)]
    f = StepFunction(a, 1, m, vals)
    assert ivl_exact(sup_norm_C(f)) == 1


# -- tensor

def test_tensor_constant_in_x():
    g = StepFunction(2, 1, 1, [2, 3])
    f = tensor(StepFunction.constant(2, 1, 1), g)
    for x in (Fraction(1, 4), Fraction(3, 4)):
        assert f.value_at((x, Fraction(1, 4))) == 2
        assert f.value_at((x, Fraction(3, 4))) == 3


def test_tensor_corner_square():
    f = tensor(indicator(AdicCell(2, 1, 0), 1), indicator(AdicCell(2, 1, 1), 1))
    assert f.value_at((Fraction(1, 4), Fraction(3, 4))) == 1
    assert f.integral() == Fraction(1, 4)
    assert f.support_measure() == Fraction(1, 4)


def test_tensor_characters_pointwise():
    a, m = 2, 2
    f1 = StepFunction(a, 1, m, [QCyc.root(a, int(e)) for e in exponent_row(a, m, 1)])
    f2 = StepFunction(a, 1, m, [QCyc.root(a, int(e)) for e in exponent_row(a, m, 2)])
    prod = tensor(f1, f2)
    for ix in range(4):
        for iy in range(4):
            x, y = Fraction(ix, 4), Fraction(iy, 4)
            want = f1.value_at(x) * f2.value_at(y)
            assert prod.value_at((x, y)) == want


# -- refinement invariance and algebra

@given(
    st.integers(2, 4),
    st.lists(st.fractions(-3, 3), min_size=1, max_size=4),
    st.integers(0, 2),
)
@settings(max_examples=40, deadline=None)
def test_refinement_preserves_norms(a, vals, extra):
    m = 1
    n = a ** m
    vals = (vals * n)[:n]
    f = StepFunction(a, 1, m, vals)
    g = f.refine(m + extra)
    assert g.integral() == f.integral()
    assert f.abs_integral() == g.abs_integral()
    assert f.sup_norm() == g.sup_norm()
    for i in range(n):
        x = Fraction(i, n)
        assert g.value_at(x) == f.value_at(x)


def test_algebra_and_mode_promotion():
    f = StepFunction(2, 1, 1, [1, -1])
    g = StepFunction(2, 1, 2, [1, 2, 3, 4])
    h = f + g
    assert list(h.values) == [2, 3, 2, 3]
    assert (f * g).integral() == Fraction(1 + 2 - 3 - 4, 4)
    fast = f.to_fast() + g
    assert fast.mode == "fast"
    assert np.allclose(fast.values, [2, 3, 2, 3])


def test_power_integral():
    f = StepFunction(2, 1, 1, [Fraction(1, 2), Fraction(-1, 4)])
    lo, hi = f.power_integral(Fraction(2))
    assert lo == hi == Fraction(1, 2) * (Fraction(1, 4) + Fraction(1, 16))
    lo, hi = f.power_integral(Fraction(5, 2), bits=80)
    true = 0.5 * (0.5 ** 2.5 + 0.25 ** 2.5)
    assert float(lo) <= true <= float(hi)


# -- masks

def test_mask_measure_and_algebra():
    m1 = CellMask.from_cells(2, 1, 2, [0, 1])
    m2 = CellMask.from_cells(2, 1, 2, [1, 2])
    assert m1.measure() == Fraction(1, 2)
    assert (m1 & m2).measure() == Fraction(1, 4)
    assert (m1 | m2).measure() == Fraction(3, 4)
    assert (m1 - m2).measure() == Fraction(1, 4)
    assert m1.complement().measure() == Fraction(1, 2)
    assert (m1 & m1.complement()).count() == 0


def test_mask_refine_and_contains():
    m = CellMask.from_cells(3, 1, 1, [1])
    r = m.refine(2)
    assert r.measure() == m.measure() == Fraction(1, 3)
    assert m.contains(Fraction(1, 2)) and not m.contains(Fraction(9, 10))


def test_mask_product_measure():
    e1 = CellMask.from_cells(2, 1, 2, [0, 3])
    e2 = CellMask.from_cells(2, 1, 2, [1])
    cells = [(i, j) for i in range(4) for j in range(4) if e1.bits[i] and e2.bits[j]]
    prod = CellMask.from_cells(2, 2, 2, cells)
    assert prod.measure() == e1.measure() * e2.measure()


def test_mask_rle_roundtrip():
    m = CellMask.from_cells(2, 1, 3, [0, 1, 4, 6, 7])
    assert m.to_runs() == [[0, 2], [4, 1], [6, 2]]
    back = CellMask.from_json(m.to_json())
    assert back == m


def test_mask_2d_indicator_matches():
    m = CellMask.from_cells(2, 2, 1, [(0, 1), (1, 0)])
    f = m.indicator()
    assert f.integral() == Fraction(1, 2)
    assert m.contains((Fraction(1, 4), Fraction(3, 4)))
    assert not m.contains((Fraction(1, 4), Fraction(1, 4)))


# -- weights

def test_weight_validation():
    with pytest.raises(ValueError):
        WeightFunction.from_values(2, 1, 1, [Fraction(1, 2), Fraction(3, 2)])
    with pytest.raises(ValueError):
        WeightFunction.from_values(2, 1, 1, [Fraction(1, 2), 0])
    w = WeightFunction.from_values(2, 1, 1, [Fraction(1, 2), 1])
    assert w.min_value() == Fraction(1, 2)
    assert w.measure_ne_one() == Fraction(1, 2)
    assert w.integral() == Fraction(3, 4)


# -- serialization

def test_step_json_roundtrip_exact_and_fast():
    f = StepFunction(3, 1, 1, [Fraction(1, 3), QCyc.root(3, 1), 0])
    back = StepFunction.from_json(f.to_json())
    assert back.equals(f)
    ff = f.to_fast()
    back2 = StepFunction.from_json(ff.to_json())
    assert back2.mode == "fast"
    assert np.allclose(back2.values, ff.values)


def test_weight_json_roundtrip():
    w = WeightFunction.from_values(2, 2, 1, [1, Fraction(1, 2), 1, Fraction(1, 4)])
    back = WeightFunction.from_json(w.to_json())
    assert back.step.equals(w.step)


def test_cell_of_point_wraps_torus():
    assert cell_of_point(2, 2, Fraction(5, 4)) == 1
    assert cell_of_point(3, 1, (Fraction(1, 3), Fraction(-1, 3))) == (1, 2)


def test_materialize_guard():
    with pytest.raises(ValueError, match="too fine"):
        StepFunction.zero(2, 2, 12)
