"""Exact scalar arithmetic for order-a root-of-unity systems.

Values that certificates compare are kept exact as long as possible:

* rational numbers -> ``fractions.Fraction``
* elements of Q(omega_a), omega_a = exp(2*pi*i/a) -> :class:`QCyc`, a
  coefficient vector over the power basis 1, omega, ..., omega^(d-1)
  reduced modulo the a-th cyclotomic polynomial (d = deg Phi_a).

Quantities that are genuinely irrational (|z| of a root-of-unity sum,
fractional powers x^(2+eps)) are handled through *directed rational
enclosures* ``(lo, hi)`` with ``lo <= value <= hi``; every inequality
verdict in a certificate uses the sound side of the enclosure.
"""

from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache
from math import isqrt
from typing import Union

import mpmath

Rat = Union[int, Fraction]
Ivl = tuple[Fraction, Fraction]  # directed enclosure lo <= value <= hi

F0 = Fraction(0)
F1 = Fraction(1)


# ---------------------------------------------------------------------------
# rational formatting

def frac_str(x: Fraction) -> str:
    x = Fraction(x)
    return f"{x.numerator}/{x.denominator}" if x.denominator != 1 else str(x.numerator)


def parse_frac(s: str) -> Fraction:
    return Fraction(s)


_SCI_EXACT_BITS = 1 << 15  # operand size beyond which exact decimal rescaling is skipped


def frac_sci(x: Fraction, sig: int = 15) -> str:
    """Rounded scientific rendering (prefixed '~') for rationals whose exact
    digit strings would be unreadably long.  Display only; comparisons stay
    exact elsewhere."""
    x = Fraction(x)
    if x == 0:
        return "0"
    sign = "-" if x < 0 else ""
    n, d = abs(x).numerator, abs(x).denominator
    if n.bit_length() > _SCI_EXACT_BITS or d.bit_length() > _SCI_EXACT_BITS:
        return _sci_big(sign, n, d, sig)
    # decimal exponent estimate from bit lengths, then exact refinement
    e10 = (n.bit_length() - d.bit_length()) * 30103 // 100000
    mant = n * 10 ** max(sig - e10, 0) // (d * 10 ** max(e10 - sig, 0))
    while mant >= 10 ** sig:
        mant //= 10
        e10 += 1
    while 0 < mant < 10 ** (sig - 1):
        e10 -= 1
        mant = n * 10 ** max(sig - e10, 0) // (d * 10 ** max(e10 - sig, 0))
    digits_ = str(mant)
    return f"~{sign}{digits_[0]}.{digits_[1:]}e{e10 - 1}"


def _sci_big(sign: str, n: int, d: int, sig: int) -> str:
    """Scientific rendering through high-precision floats for operands whose
    exact decimal rescaling would require multi-megabyte powers of ten."""
    with mpmath.workdps(sig + 30):
        le10 = (mpmath.log(n) - mpmath.log(d)) / mpmath.log(10)
        e10 = int(mpmath.floor(le10))
        mant = mpmath.power(10, le10 - e10)
        if mant >= 10:
            mant, e10 = mant / 10, e10 + 1
        elif mant < 1:
            mant, e10 = mant * 10, e10 - 1
        s = mpmath.nstr(mant, sig, strip_zeros=False)
    head, _, tail = s.partition(".")
    e10 += len(head) - 1  # rounding in nstr may carry into a second leading digit
    digits_ = (head + tail)[:sig].ljust(sig, "0")
    return f"~{sign}{digits_[0]}.{digits_[1:]}e{e10}"


_DISPLAY_BITS = 512


def frac_disp(x: Fraction) -> str:
    """Exact rendering when compact, rounded scientific otherwise."""
    x = Fraction(x)
    if x.numerator.bit_length() + x.denominator.bit_length() <= _DISPLAY_BITS:
        return frac_str(x)
    return frac_sci(x)


def ivl_str(iv: Ivl) -> str:
    lo, hi = iv
    if lo == hi:
        return frac_disp(lo)
    return f"[{frac_disp(lo)}, {frac_disp(hi)}]"


# ---------------------------------------------------------------------------
# directed rounding onto power-of-two grids

def frac_up_ratio(num: int, den: int, bits: int = 192) -> Fraction:
    """Smallest fraction on the 2^-bits grid that is >= num/den, computed
    without normalizing the (possibly huge) input pair."""
    if den < 0:
        num, den = -num, -den
    q, rem = divmod(num << bits, den)
    if rem:
        q += 1
    return Fraction(q, 1 << bits)


def frac_up(x: Fraction, bits: int = 192) -> Fraction:
    """Directed upper rounding of a fraction onto the 2^-bits grid."""
    return frac_up_ratio(x.numerator, x.denominator, bits)


# ---------------------------------------------------------------------------
# integer logs and roots

def pow_int(a: int, e: int) -> int:
    return a ** e


def floor_log(a: int, x) -> int:
    """Largest e >= 0 with a^e <= x, for x >= 1 (int or Fraction)."""
    if a < 2:
        raise ValueError("base must be >= 2")
    x = Fraction(x)
    if x < 1:
        raise ValueError("floor_log needs x >= 1")
    # float bracket from bit lengths (error well under +-2), then exact bisection
    num_bits = x.numerator.bit_length() - x.denominator.bit_length()
    la = math.log2(a)
    lo = max(0, int((num_bits - 2) / la) - 2)
    hi = max(lo, int((num_bits + 2) / la) + 2)
    while Fraction(a) ** hi <= x:  # safety: widen if the bracket missed
        lo, hi = hi, hi * 2 + 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if Fraction(a) ** mid <= x:
            lo = mid
        else:
            hi = mid - 1
    return lo


def ceil_log(a: int, x) -> int:
    """Smallest e >= 0 with a^e >= x, for x >= 1 (int or Fraction)."""
    x = Fraction(x)
    if x <= 1:
        return 0
    e = floor_log(a, x)
    return e if Fraction(a ** e) >= x else e + 1


def iroot(n: int, k: int) -> int:
    """Floor of the k-th root of n >= 0."""
    if n < 0 or k < 1:
        raise ValueError("iroot needs n >= 0, k >= 1")
    if n == 0 or k == 1:
        return n if k == 1 else 0
    if k == 2:
        return isqrt(n)
    x = 1 << ((n.bit_length() + k - 1) // k)  # upper start for Newton
    while True:
        y = ((k - 1) * x + n // x ** (k - 1)) // k
        if y >= x:
            break
        x = y
    while x ** k > n:
        x -= 1
    return x


# ---------------------------------------------------------------------------
# directed enclosures for sqrt and rational powers

def frac_sqrt_enclosure(x: Rat, bits: int = 64) -> Ivl:
    x = Fraction(x)
    if x < 0:
        raise ValueError("sqrt of negative rational")
    if x == 0:
        return (F0, F0)
    scale = 1 << bits
    n = x.numerator * x.denominator * scale * scale
    s = isqrt(n)
    den = x.denominator * scale
    if s * s == n:
        v = Fraction(s, den)
        return (v, v)
    return (Fraction(s, den), Fraction(s + 1, den))


def frac_sqrt_exact(x: Rat) -> Fraction | None:
    """Exact rational sqrt, or None when x is not a perfect rational square."""
    x = Fraction(x)
    if x < 0:
        return None
    sn, sd = isqrt(x.numerator), isqrt(x.denominator)
    if sn * sn == x.numerator and sd * sd == x.denominator:
        return Fraction(sn, sd)
    return None


_POW_NUM_CAP = 10_000  # largest exponent numerator the exact-root path will expand
_POW_ROOT_BITS = 1 << 22  # largest radicand bit budget for the exact-root path


def _pow_binary_digits(u: Fraction, p: int, q: int, bits: int) -> Ivl:
    """Enclosure of u^(p/q) for 0 < p/q < 1 via iterated square roots.

    Walks the binary expansion of p/q: digit i contributes the factor
    u^(2^-i), an i-fold iterated sqrt enclosure.  Never materializes u^p,
    so the cost is independent of how large p and q are.
    """
    wbits = bits + 16
    terms = bits + 8
    acc_lo, acc_hi = F1, F1
    s_lo, s_hi = u, u
    rem = p
    for _ in range(terms):
        s_lo = frac_sqrt_enclosure(s_lo, wbits)[0]
        s_hi = frac_sqrt_enclosure(s_hi, wbits)[1]
        rem *= 2
        digit, rem = divmod(rem, q)
        if digit:
            acc_lo *= s_lo
            acc_hi *= s_hi
        if rem == 0:
            return (acc_lo, acc_hi)
    # nonzero tail t in (0, 2^-terms): u^t lies between u^(2^-terms) and 1
    if u < 1:
        return (acc_lo * s_lo, acc_hi)
    return (acc_lo, acc_hi * s_hi)


def frac_pow_enclosure(u: Rat, e: Rat, bits: int = 64) -> Ivl:
    """Enclosure of u^e for rational u >= 0, e >= 0."""
    u, e = Fraction(u), Fraction(e)
    if u < 0 or e < 0:
        raise ValueError("frac_pow_enclosure needs u >= 0, e >= 0")
    if e == 0:
        return (F1, F1)
    if u == 0:
        return (F0, F0)
    if u == 1:
        return (F1, F1)
    if e.denominator == 1:
        v = u ** e.numerator
        return (v, v)
    ip = e.numerator // e.denominator
    fp = e - ip
    base = u ** ip
    p, q = fp.numerator, fp.denominator
    ubits = u.numerator.bit_length() + u.denominator.bit_length()
    if p <= _POW_NUM_CAP and q <= 64 and (p * ubits + bits) * q <= _POW_ROOT_BITS:
        v = u ** p  # fp = p/q, v^(1/q) remains; may resolve exactly
        scale = 1 << bits
        n = v.numerator * v.denominator ** (q - 1) * scale ** q
        t = iroot(n, q)
        den = v.denominator * scale
        if t ** q == n:
            r = Fraction(t, den)
            return (base * r, base * r)
        return (base * Fraction(t, den), base * Fraction(t + 1, den))
    lo, hi = _pow_binary_digits(u, p, q, bits)
    return (base * lo, base * hi)


def ivl_add(x: Ivl, y: Ivl) -> Ivl:
    return (x[0] + y[0], x[1] + y[1])


def ivl_mul(x: Ivl, y: Ivl) -> Ivl:
    c = (x[0] * y[0], x[0] * y[1], x[1] * y[0], x[1] * y[1])
    return (min(c), max(c))


def ivl_scale(x: Ivl, c: Rat) -> Ivl:
    c = Fraction(c)
    return (x[0] * c, x[1] * c) if c >= 0 else (x[1] * c, x[0] * c)


def ivl_point(x: Rat) -> Ivl:
    x = Fraction(x)
    return (x, x)


# ---------------------------------------------------------------------------
# cyclotomic polynomials and Q(omega_a)

@lru_cache(maxsize=None)
def cyclotomic_polynomial(n: int) -> tuple[int, ...]:
    """Coefficients of Phi_n, little-endian, computed by exact division of
    x^n - 1 by the product of Phi_d over proper divisors d of n."""
    if n < 1:
        raise ValueError("n >= 1")
    if n == 1:
        return (-1, 1)
    num = [0] * (n + 1)
    num[0], num[n] = -1, 1
    for d in range(1, n):
        if n % d == 0:
            num = _poly_divide_exact(num, list(cyclotomic_polynomial(d)))
    return tuple(num)


def _poly_divide_exact(num: list[int], den: list[int]) -> list[int]:
    num = list(num)
    dd = len(den) - 1
    out = [0] * (len(num) - dd)
    for i in range(len(num) - 1, dd - 1, -1):
        c = num[i]
        if c == 0:
            continue
        assert c % den[dd] == 0
        q = c // den[dd]
        out[i - dd] = q
        for j, dj in enumerate(den):
            num[i - dd + j] -= q * dj
    assert all(c == 0 for c in num), "inexact polynomial division"
    return out


@lru_cache(maxsize=None)
def _power_table(a: int) -> tuple[tuple[Fraction, ...], ...]:
    """Vector of x^k mod Phi_a over the power basis, for k = 0..2a."""
    phi = cyclotomic_polynomial(a)
    d = len(phi) - 1
    rows: list[tuple[Fraction, ...]] = []
    cur = [F1] + [F0] * (d - 1)
    for _ in range(2 * a + 1):
        rows.append(tuple(cur))
        # multiply by x, reduce the overflow term with x^d = -(phi[:d])
        top = cur[d - 1]
        cur = [F0] + cur[: d - 1]
        if top != 0:
            for j in range(d):
                cur[j] -= top * phi[j]
    return tuple(rows)


class QCyc:
    """Element of Q(omega_a) over the power basis modulo Phi_a."""

    __slots__ = ("a", "vec")

    def __init__(self, a: int, vec):
        d = len(cyclotomic_polynomial(a)) - 1
        vec = tuple(Fraction(v) for v in vec)
        if len(vec) != d:
            raise ValueError(f"need {d} coefficients for order {a}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "vec", vec)

    def __setattr__(self, *a):  # immutable
        raise AttributeError("QCyc is immutable")

    # -- constructors
    @staticmethod
    def zero(a: int) -> "QCyc":
        d = len(cyclotomic_polynomial(a)) - 1
        return QCyc(a, (F0,) * d)

    @staticmethod
    def one(a: int) -> "QCyc":
        return QCyc.from_rational(a, F1)

    @staticmethod
    def from_rational(a: int, x: Rat) -> "QCyc":
        d = len(cyclotomic_polynomial(a)) - 1
        return QCyc(a, (Fraction(x),) + (F0,) * (d - 1))

    @staticmethod
    def root(a: int, k: int) -> "QCyc":
        """omega_a^k."""
        return QCyc(a, _power_table(a)[k % a])

    # -- ring structure
    def _coerce(self, other) -> "QCyc | None":
        if isinstance(other, QCyc):
            if other.a != self.a:
                raise ValueError("mixed cyclotomic orders")
            return other
        if isinstance(other, (int, Fraction)):
            return QCyc.from_rational(self.a, other)
        return None

    def __add__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return QCyc(self.a, tuple(x + y for x, y in zip(self.vec, o.vec)))

    __radd__ = __add__

    def __neg__(self):
        return QCyc(self.a, tuple(-x for x in self.vec))

    def __sub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return QCyc(self.a, tuple(x - y for x, y in zip(self.vec, o.vec)))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, Fraction)):
            c = Fraction(other)
            return QCyc(self.a, tuple(x * c for x in self.vec))
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        d = len(self.vec)
        conv = [F0] * (2 * d - 1)
        for i, x in enumerate(self.vec):
            if x == 0:
                continue
            for j, y in enumerate(o.vec):
                if y != 0:
                    conv[i + j] += x * y
        # reduce degrees >= d via the power table
        table = _power_table(self.a)
        out = list(conv[:d])
        for k in range(d, 2 * d - 1):
            c = conv[k]
            if c != 0:
                row = table[k]
                for j in range(d):
                    out[j] += c * row[j]
        return QCyc(self.a, tuple(out))

    __rmul__ = __mul__

    def __eq__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return self.vec == o.vec

    def __hash__(self):
        return hash((self.a, self.vec))

    def __repr__(self):
        return f"QCyc({self.a}, {[frac_str(v) for v in self.vec]})"

    def is_zero(self) -> bool:
        return all(v == 0 for v in self.vec)

    def as_rational(self) -> Fraction | None:
        if all(v == 0 for v in self.vec[1:]):
            return self.vec[0]
        return None

    def conj(self) -> "QCyc":
        table = _power_table(self.a)
        d = len(self.vec)
        out = [F0] * d
        for j, c in enumerate(self.vec):
            if c == 0:
                continue
            row = table[(self.a - j) % self.a]
            for t in range(d):
                out[t] += c * row[t]
        return QCyc(self.a, tuple(out))

    def abs2(self) -> "QCyc":
        return self * self.conj()

    def to_complex(self) -> complex:
        import cmath

        w = cmath.exp(2j * cmath.pi / self.a)
        return sum(complex(v) * w ** j for j, v in enumerate(self.vec))

    # -- certified embeddings
    def re_enclosure(self, bits: int = 64) -> Ivl:
        return _embed_enclosure(self, bits, imag=False)

    def im_enclosure(self, bits: int = 64) -> Ivl:
        return _embed_enclosure(self, bits, imag=True)

    def abs_enclosure(self, bits: int = 64) -> Ivl:
        r = self.as_rational()
        if r is not None:
            return ivl_point(abs(r))
        a2 = self.abs2()
        r2 = a2.as_rational()
        if r2 is not None:
            ex = frac_sqrt_exact(r2)
            if ex is not None:
                return ivl_point(ex)
            return frac_sqrt_enclosure(r2, bits)
        lo, hi = a2.re_enclosure(bits)  # abs2 is real, its embedding equals its real part
        lo = max(lo, F0)
        return (frac_sqrt_enclosure(lo, bits)[0], frac_sqrt_enclosure(hi, bits)[1])


def _mpf_tuple_to_frac(t) -> Fraction:
    sign, man, exp, _ = t
    if man == 0 and exp != 0:
        raise ValueError("non-finite interval endpoint")
    v = Fraction(man)
    v = v * (1 << exp) if exp >= 0 else v / (1 << -exp)
    return -v if sign else v


def iv_endpoints(x) -> Ivl:
    """Exact rational endpoints of an mpmath.iv interval scalar."""
    lo_t, hi_t = x._mpi_
    return (_mpf_tuple_to_frac(lo_t), _mpf_tuple_to_frac(hi_t))


def _embed_enclosure(z: QCyc, bits: int, imag: bool) -> Ivl:
    a = z.a
    if a == 2 or a == 1:
        return ivl_point(F0) if imag else ivl_point(z.vec[0])
    if a == 4:
        return ivl_point(z.vec[1]) if imag else ivl_point(z.vec[0])
    iv = mpmath.iv
    old = iv.prec
    try:
        iv.prec = bits + 16
        total = iv.mpf(0)
        two_pi = 2 * iv.pi
        for j, c in enumerate(z.vec):
            if c == 0:
                continue
            ang = two_pi * j / a
            term = iv.sin(ang) if imag else iv.cos(ang)
            total += term * iv.mpf(c.numerator) / iv.mpf(c.denominator)
        return iv_endpoints(total)
    finally:
        iv.prec = old


# ---------------------------------------------------------------------------
# scalar dispatch: values are Fraction/int (real) or QCyc

Scalar = Union[int, Fraction, QCyc]


def sc_add(x: Scalar, y: Scalar) -> Scalar:
    return x + y


def sc_mul(x: Scalar, y: Scalar) -> Scalar:
    return x * y


def sc_conj(x: Scalar) -> Scalar:
    return x.conj() if isinstance(x, QCyc) else x


def sc_is_zero(x: Scalar) -> bool:
    return x.is_zero() if isinstance(x, QCyc) else x == 0


def sc_eq(x: Scalar, y: Scalar) -> bool:
    if isinstance(x, QCyc) or isinstance(y, QCyc):
        a = x.a if isinstance(x, QCyc) else y.a
        xx = x if isinstance(x, QCyc) else QCyc.from_rational(a, x)
        yy = y if isinstance(y, QCyc) else QCyc.from_rational(a, y)
        return xx == yy
    return Fraction(x) == Fraction(y)


def sc_abs2(x: Scalar) -> Fraction | QCyc:
    if isinstance(x, QCyc):
        a2 = x.abs2()
        r = a2.as_rational()
        return r if r is not None else a2
    x = Fraction(x)
    return x * x


def sc_abs_enclosure(x: Scalar, bits: int = 64) -> Ivl:
    if isinstance(x, QCyc):
        return x.abs_enclosure(bits)
    return ivl_point(abs(Fraction(x)))


def sc_to_complex(x: Scalar) -> complex:
    if isinstance(x, QCyc):
        return x.to_complex()
    return complex(Fraction(x))


def sc_to_json(x: Scalar):
    if isinstance(x, QCyc):
        return {"cyc": x.a, "vec": [frac_str(v) for v in x.vec]}
    return frac_str(Fraction(x))


def sc_from_json(obj) -> Scalar:
    if isinstance(obj, dict):
        return QCyc(obj["cyc"], [Fraction(v) for v in obj["vec"]])
    return Fraction(obj)
