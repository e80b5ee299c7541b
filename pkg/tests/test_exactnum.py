"""Exact scalar layer: cyclotomic arithmetic and directed enclosures."""

from fractions import Fraction

import mpmath
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chrestenson.exactnum import (
    QCyc,
    ceil_log,
    cyclotomic_polynomial,
    floor_log,
    frac_pow_enclosure,
    frac_sqrt_enclosure,
    frac_sqrt_exact,
    frac_str,
    iroot,
    ivl_add,
    ivl_mul,
    parse_frac,
    sc_abs2,
    sc_abs_enclosure,
    sc_conj,
    sc_eq,
    sc_from_json,
    sc_to_json,
)

ORDERS = [2, 3, 4, 5, 6, 7, 12]


# -- cyclotomic polynomials (independent small table as oracle)

KNOWN_PHI = {
    1: (-1, 1),
    2: (1, 1),
    3: (1, 1, 1),
    4: (1, 0, 1),
    5: (1, 1, 1, 1, 1),
    6: (1, -1, 1),
    8: (1, 0, 0, 0, 1),
    12: (1, 0, -1, 0, 1),
}


@pytest.mark.parametrize("n,coeffs", sorted(KNOWN_PHI.items()))
def test_cyclotomic_polynomial_table(n, coeffs):
    assert cyclotomic_polynomial(n) == coeffs


def test_cyclotomic_product_recovers_xn_minus_1():
    n = 12
    prod = [1]
    for d in range(1, n + 1):
        if n % d == 0:
            phi = cyclotomic_polynomial(d)
            new = [0] * (len(prod) + len(phi) - 1)
            for i, p in enumerate(prod):
                for j, q in enumerate(phi):
                    new[i + j] += p * q
            prod = new
    expect = [0] * (n + 1)
    expect[0], expect[n] = -1, 1
    assert prod == expect


# -- QCyc ring axioms and numerics

def _close(z: QCyc, w: complex, tol=1e-10):
    return abs(z.to_complex() - w) < tol


@pytest.mark.parametrize("a", ORDERS)
def test_root_powers_cycle_and_multiply(a):
    w = QCyc.root(a, 1)
    cur = QCyc.one(a)
    for k in range(2 * a):
        assert cur == QCyc.root(a, k)
        cur = cur * w
    assert cur == QCyc.one(a)


@pytest.mark.parametrize("a", ORDERS)
def test_conj_and_abs2_of_roots(a):
    for k in range(a):
        z = QCyc.root(a, k)
        assert z.conj() == QCyc.root(a, a - k)
        assert z.abs2() == QCyc.one(a)
        assert z.abs_enclosure() == (Fraction(1), Fraction(1))


@pytest.mark.parametrize("a", ORDERS)
def test_embedding_matches_complex(a):
    import cmath

    z = QCyc.root(a, 1) * 3 - QCyc.root(a, (a - 1) % a) * Fraction(1, 7) + 2
    w = z.to_complex()
    lo, hi = z.re_enclosure(80)
    assert float(lo) <= w.real + 1e-15 and w.real - 1e-15 <= float(hi)
    assert float(hi - lo) < 1e-18
    lo, hi = z.im_enclosure(80)
    assert float(lo) <= w.imag + 1e-15 and w.imag - 1e-15 <= float(hi)
    alo, ahi = z.abs_enclosure(80)
    assert float(alo) <= abs(w) + 1e-12 <= float(ahi) + 2e-12


def test_geometric_sum_of_all_roots_is_zero():
    for a in ORDERS:
        s = QCyc.zero(a)
        for k in range(a):
            s = s + QCyc.root(a, k)
        assert s.is_zero()


def test_rational_detection():
    z = QCyc.root(5, 1) + QCyc.root(5, 2) + QCyc.root(5, 3) + QCyc.root(5, 4)
    assert z.as_rational() == Fraction(-1)
    assert (z * z).as_rational() == Fraction(1)
    assert QCyc.root(5, 1).as_rational() is None


@given(st.integers(-9, 9), st.integers(-9, 9), st.integers(-9, 9), st.integers(0, 4))
@settings(max_examples=60, deadline=None)
def test_ring_axioms_order5(p, q, r, k):
    a = 5
    x = QCyc.root(a, k) * p + Fraction(q, 3)
    y = QCyc.root(a, (k + 2) % a) * r - 1
    z = QCyc.root(a, (k + 3) % a) + Fraction(p, 7)
    assert (x + y) * z == x * z + y * z
    assert (x * y) * z == x * (y * z)
    assert (x * y).conj() == x.conj() * y.conj()
    assert (x + y).conj() == x.conj() + y.conj()


def test_mixed_order_arithmetic_rejected():
    with pytest.raises(ValueError):
        QCyc.root(3, 1) + QCyc.root(5, 1)


# -- integer logs / roots

def test_floor_ceil_log():
    assert floor_log(2, 1) == 0
    assert floor_log(2, Fraction(7, 2)) == 1
    assert floor_log(3, 81) == 4
    assert floor_log(3, 80) == 3
    assert ceil_log(2, 1) == 0
    assert ceil_log(2, 5) == 3
    assert ceil_log(5, Fraction(124, 5)) == 2
    assert ceil_log(5, Fraction(126, 5)) == 3
    assert ceil_log(5, 25) == 2
    big = 3 ** 1000
    assert floor_log(3, big) == 1000
    assert ceil_log(3, big + 1) == 1001


@given(st.integers(0, 10 ** 18), st.integers(1, 7))
@settings(max_examples=80, deadline=None)
def test_iroot_is_floor_root(n, k):
    r = iroot(n, k)
    assert r ** k <= n < (r + 1) ** k


# -- enclosures

def test_sqrt_enclosure_and_exact():
    lo, hi = frac_sqrt_enclosure(2, 64)
    assert lo * lo <= 2 <= hi * hi
    assert hi - lo <= Fraction(2, 1 << 64)
    assert frac_sqrt_enclosure(Fraction(9, 4)) == (Fraction(3, 2), Fraction(3, 2))
    assert frac_sqrt_exact(Fraction(49, 81)) == Fraction(7, 9)
    assert frac_sqrt_exact(2) is None


def test_pow_enclosure_integer_and_fractional():
    assert frac_pow_enclosure(Fraction(3, 2), 3) == (Fraction(27, 8), Fraction(27, 8))
    lo, hi = frac_pow_enclosure(Fraction(1, 2), Fraction(9, 4), 64)
    true = 0.5 ** 2.25
    assert float(lo) <= true <= float(hi)
    assert float(hi - lo) < 1e-15
    # huge-denominator exponent stays tight via the iterated-square-root path
    eps = Fraction(1, 2 ** 40)
    lo, hi = frac_pow_enclosure(Fraction(1, 3), 2 + eps, 64)
    assert Fraction(1, 9) > hi > lo > Fraction(1, 27)
    assert (hi - lo) / lo < Fraction(1, 1 << 32)
    from chrestenson.exactnum import _pow_binary_digits

    dlo, dhi = _pow_binary_digits(Fraction(1, 2), 1, 2, 64)
    assert dlo * dlo <= Fraction(1, 2) <= dhi * dhi


def test_pow_enclosure_zero_one_edges():
    assert frac_pow_enclosure(0, Fraction(5, 2)) == (0, 0)
    assert frac_pow_enclosure(7, 0) == (1, 1)
    assert frac_pow_enclosure(1, Fraction(1, 3)) == (1, 1)


def test_interval_helpers():
    x = (Fraction(1), Fraction(2))
    y = (Fraction(-3), Fraction(1, 2))
    assert ivl_add(x, y) == (Fraction(-2), Fraction(5, 2))
    lo, hi = ivl_mul(x, y)
    assert lo == Fraction(-6) and hi == Fraction(1)


# -- scalar dispatch and serialization

def test_scalar_dispatch_and_json_roundtrip():
    z = QCyc.root(3, 1) * Fraction(2, 5) + 1
    assert sc_eq(sc_conj(Fraction(3, 4)), Fraction(3, 4))
    a2 = sc_abs2(z)
    lo, hi = sc_abs_enclosure(z, 80)
    zc = abs(z.to_complex())
    assert float(lo) <= zc <= float(hi) + 1e-15
    for val in [Fraction(-7, 3), z, QCyc.root(7, 2)]:
        back = sc_from_json(sc_to_json(val))
        assert sc_eq(back, val)
    assert parse_frac(frac_str(Fraction(-22, 7))) == Fraction(-22, 7)
    assert isinstance(a2, (Fraction, QCyc))


def test_abs_enclosure_irrational_abs2():
    # z = 1 + omega_5: |z|^2 = 2 + 2*cos(72deg) is irrational
    z = QCyc.one(5) + QCyc.root(5, 1)
    lo, hi = z.abs_enclosure(96)
    true = abs(z.to_complex())
    assert float(lo) <= true <= float(hi)
    assert float(hi - lo) < 1e-20


def test_mpf_endpoint_exactness():
    from chrestenson.exactnum import iv_endpoints

    iv = mpmath.iv
    old = iv.prec
    try:
        iv.prec = 64
        lo, hi = iv_endpoints(iv.mpf(1) / 3)
        assert lo <= Fraction(1, 3) <= hi
        assert hi - lo < Fraction(1, 2 ** 60)
    finally:
        iv.prec = old
