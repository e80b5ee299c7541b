"""Constructive engine for 1D high-frequency approximation with certificates.

Contract: given a real rational step function f, a tolerance eps in (0,1) and
a minimum frequency N0 > 2, produce a Walsh polynomial P with spectrum in
[N0, N] and a set E such that

    (1)  P(x) = f(x) on E,
    (2)  |E| > 1 - eps,
    (3)  sum_k |c_k|^(2+eps) < eps,
    (4)  max over prefix cutoffs M' in [N0, N) of
         sup_{e subset E} ( int_e |S_M'| - int_e |f| )  <  eps.

Construction (banded modulation): refine f to rank m'; every refined support
cell Delta (value gamma) receives a fresh digit band [nu_t, nu_t + r) and the
polynomial piece

    h_t = -gamma * chi_Delta * sum_{tuples tau != 0} phi_nu^k1 ... phi_(nu+r-1)^kr
        =  gamma * chi_Delta  -  gamma * a^r * chi_(S_t),

where S_t = {x in Delta : digits nu_t..nu_t+r-1 of x all vanish}; E excludes
every S_t, so P = f on E while each piece's spectrum sits in its own band.
Choosing r with a^r >= 2*|supp f|/eps makes the excluded measure < eps/2, and
m' is pushed up until closed-form bounds for (3) and (4) clear eps.

Every output is checked: a dense verifier renders P and applies the exact
positive-part reduction of (4), and a structural verifier re-derives the
closed forms (band power sums, exclusion measure, on-cell convexity endpoint
sweep plus a Dirichlet digit-sum leak bound) without materializing anything.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Union

import numpy as np

from .certificate import Certificate
from .exactnum import (
    F0,
    F1,
    Ivl,
    QCyc,
    ceil_log,
    floor_log,
    frac_disp,
    frac_pow_enclosure,
    frac_str,
    frac_up_ratio,
    parse_frac,
    sc_abs_enclosure,
    sc_eq,
)
from .grid import CellMask, StepFunction
from .transform import CoeffBlock1D, MATERIALIZE_CAP
from .walsh import digits, rademacher_exponent

RENDER_CAP = 1 << 12       # finest dense-verification grid (a^rank cells)
SWEEP_CAP_GENERIC = 1 << 14  # a^(2r) cap for the exact pattern sweep, general a
SWEEP_CAP_BINARY = 1 << 20   # same cap when a == 2 (integer fast path)
EXP_BITS_CAP = 1 << 25     # cap on bit length of window exponents
COEFF_INT_BITS = 1 << 24   # cap on bit length of materialized integers
SPOT_EVAL_BITS = 1 << 16   # cap on band-height bit length for point probes
V_EXACT_BITS = 1 << 15     # prefix-excess bounds stay exact rationals up to this size


class BudgetError(RuntimeError):
    """Construction failed within the retry/size budget."""

    def __init__(self, condition: str, message: str):
        super().__init__(f"unconstructible with budget: {message}")
        self.condition = condition


def _int_json(n: int):
    """JSON-safe exact integer: literal when short, hex wrapper when huge."""
    return n if n.bit_length() <= 4096 else {"hex": hex(n)}


def _int_from_json(obj) -> int:
    return int(obj["hex"], 16) if isinstance(obj, dict) else int(obj)


@dataclass(frozen=True)
class WindowBound:
    """Integer of the form a^exp + offset, kept symbolic when huge."""

    a: int
    exp: int
    offset: int = 0

    def bit_bound(self) -> int:
        return self.exp * (self.a.bit_length()) + 2

    def is_materializable(self, bits_cap: int = COEFF_INT_BITS) -> bool:
        return self.exp * (self.a.bit_length() - 1) <= bits_cap

    def to_int(self) -> int:
        if not self.is_materializable():
            raise BudgetError("window", "window bound exceeds integer budget")
        return self.a ** self.exp + self.offset

    def ceil_log_a(self) -> int:
        """ceil(log_a value); offsets are confined to {-1, 0, +small}."""
        if self.exp <= 64 and self.is_materializable():
            return ceil_log(self.a, self.to_int())
        if self.offset < -1:
            raise ValueError("symbolic ceil_log supports offsets >= -1 only")
        if self.offset > 0:
            return self.exp + 1
        return self.exp  # a^(e-1) < a^e + off <= a^e for off in {-1, 0}

    def to_json(self):
        if self.is_materializable(1 << 16):
            return self.to_int()
        return {"pow": [self.a, _int_json(self.exp), self.offset]}

    @staticmethod
    def from_json(obj) -> "WindowBound":
        if isinstance(obj, dict):
            a, e, off = obj["pow"]
            return WindowBound(a, _int_from_json(e), off)
        raise ValueError("plain integers need no WindowBound")


# window starts may be plain integers or symbolic bound objects exposing
# ceil_log_a()/to_json(); parsers registered here handle foreign encodings
_START_PARSERS: list = []


def start_ceil_log(a: int, start) -> int:
    if isinstance(start, int):
        return ceil_log(a, start)
    return start.ceil_log_a()


def start_to_json(start):
    return _int_json(start) if isinstance(start, int) else start.to_json()


def start_from_json(obj):
    if isinstance(obj, int):
        return obj
    if isinstance(obj, dict):
        if "hex" in obj:
            return _int_from_json(obj)
        if "pow" in obj:
            return WindowBound.from_json(obj)
        for parser in _START_PARSERS:
            got = parser(obj)
            if got is not None:
                return got
    raise ValueError("unknown window start encoding")


@dataclass(frozen=True)
class Lemma33Request:
    f: StepFunction
    eps: Fraction
    N0: int

    def __post_init__(self):
        f = self.f
        if f.dim != 1 or f.mode != "exact":
            raise ValueError("f must be a 1D exact step function")
        for v in f.values:
            if not isinstance(v, Fraction):
                raise ValueError("f must have real rational values")
        object.__setattr__(self, "eps", Fraction(self.eps))
        if not (0 < self.eps < 1):
            raise ValueError("eps must lie in (0, 1)")
        if self.N0 <= 2:
            raise ValueError("N0 must exceed 2")

    @property
    def a(self) -> int:
        return self.f.a

    def to_json(self) -> dict:
        return {"f": self.f.to_json(), "eps": frac_str(self.eps), "N0": self.N0}

    @staticmethod
    def from_json(obj: dict) -> "Lemma33Request":
        return Lemma33Request(StepFunction.from_json(obj["f"]),
                              parse_frac(obj["eps"]), obj["N0"])


class GadgetBlock1D:
    """Structural banded-modulation polynomial.

    Stores only the native support pieces; every coefficient is recoverable
    as c_(w(tau)+j) = -gamma_t * a^-m' * omega^(-e(j, cell_t)).  Materializing
    is optional and capped; point evaluation works at any band height through
    modular digit extraction.
    """

    __slots__ = ("a", "N0", "m0", "mprime", "r", "nu1", "native", "per_native", "T")

    def __init__(self, a: int, N0: int, m0: int, mprime: int, r: int, nu1: int,
                 native: list[tuple[int, Fraction]]):
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "N0", N0)
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "mprime", mprime)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "nu1", nu1)
        object.__setattr__(self, "native", tuple((int(c), Fraction(g)) for c, g in native))
        per = a ** (mprime - m0)
        object.__setattr__(self, "per_native", per)
        object.__setattr__(self, "T", len(native) * per)

    def __setattr__(self, *a):
        raise AttributeError("GadgetBlock1D is immutable")

    # -- window
    def window_end(self) -> WindowBound:
        return WindowBound(self.a, self.nu1 + self.T * self.r, -1)

    def window(self) -> tuple[int, WindowBound]:
        return (self.N0, self.window_end())

    def max_gamma(self) -> Fraction:
        return max(abs(g) for _, g in self.native) if self.native else F0

    def coeff_count(self) -> int:
        return self.T * (self.a ** self.r - 1) * self.a ** self.mprime

    def coeff_modulus(self, gamma: Fraction) -> Fraction:
        return abs(gamma) * Fraction(1, self.a ** self.mprime)

    # -- piece bookkeeping (t runs over refined support cells in cell order)
    def piece_cell(self, t: int) -> int:
        idx, sub = divmod(t, self.per_native)
        return self.native[idx][0] * self.per_native + sub

    def piece_gamma(self, t: int) -> Fraction:
        return self.native[t // self.per_native][1]

    def piece_of_point(self, x: Fraction) -> Optional[int]:
        """Index t of the refined support piece containing x, if any."""
        x = x - (x.numerator // x.denominator)
        i0 = (x.numerator * self.a ** self.m0) // x.denominator
        pos = None
        for idx, (c, _) in enumerate(self.native):
            if c == i0:
                pos = idx
                break
        if pos is None:
            return None
        iref = (x.numerator * self.a ** self.mprime) // x.denominator
        return pos * self.per_native + (iref - i0 * self.per_native)

    def band_base(self, t: int) -> int:
        return self.nu1 + t * self.r

    def pattern_is_zero(self, x: Fraction, t: int) -> bool:
        nu = self.band_base(t)
        return all(rademacher_exponent(self.a, nu + i, x) == 0 for i in range(self.r))

    # -- evaluation
    def value_at(self, x: Fraction) -> Fraction:
        """P(x) through the band-pattern closed form (any band height)."""
        t = self.piece_of_point(Fraction(x))
        if t is None:
            return F0
        g = self.piece_gamma(t)
        if self.pattern_is_zero(Fraction(x), t):
            return g * (1 - self.a ** self.r)
        return g

    def coefficient(self, n: int):
        """Exact coefficient c_n (0 when n is outside every band)."""
        if n < 1:
            return F0
        if n.bit_length() > COEFF_INT_BITS:
            raise BudgetError("coefficient", "index exceeds integer budget")
        a = self.a
        p = floor_log(a, n)
        if p < self.nu1:
            return F0
        t = (p - self.nu1) // self.r
        if t >= self.T:
            return F0
        shift = self.band_base(t) - self.mprime
        j = n % (a ** self.mprime)
        rest = n // (a ** self.mprime)
        tau_val, residue = divmod(rest, a ** shift)
        if residue != 0 or not (1 <= tau_val < a ** self.r):
            return F0
        cell = self.piece_cell(t)
        e = _bilinear_exponent(a, self.mprime, j, cell)
        g = self.piece_gamma(t)
        return QCyc.root(a, (-e) % a) * (-g * Fraction(1, a ** self.mprime))

    def point_eval_by_coefficients(self, x: Fraction, cap: int = MATERIALIZE_CAP):
        """P(x) by raw summation over all stored coefficients (size-capped);
        independent cross-check of the closed-form evaluation."""
        if self.coeff_count() > cap:
            raise BudgetError("point-eval", "too many coefficients for raw summation")
        a = self.a
        acc = QCyc.zero(a)
        x = Fraction(x)
        for n, c in self._iter_coeffs():
            e = _walsh_exponent_big(a, n, x)
            acc = acc + c * QCyc.root(a, e)
        return acc

    def _iter_coeffs(self):
        a = self.a
        am = a ** self.mprime
        for t in range(self.T):
            base = a ** self.band_base(t)
            cell = self.piece_cell(t)
            g = self.piece_gamma(t)
            scale = -g * Fraction(1, am)
            for tau in range(1, a ** self.r):
                w = tau * base
                for j in range(am):
                    e = _bilinear_exponent(a, self.mprime, j, cell)
                    yield w + j, QCyc.root(a, (-e) % a) * scale

    def to_coeffblock(self, cap: int = MATERIALIZE_CAP) -> CoeffBlock1D:
        if not isinstance(self.N0, int):
            raise BudgetError("materialize", "symbolic window start cannot materialize")
        if self.coeff_count() > cap:
            raise BudgetError("materialize", "too many coefficients to materialize")
        end = self.window_end().to_int()
        coeffs = dict(self._iter_coeffs())
        return CoeffBlock1D(self.a, (self.N0, end), coeffs)

    def pieces_json(self):
        if self.T.bit_length() <= 256:
            return str(self.T)
        return {"piece-factors": [len(self.native), self.a, self.mprime - self.m0]}

    def to_json(self) -> dict:
        return {
            "kind": "banded-modulation",
            "order": self.a,
            "N0": start_to_json(self.N0),
            "native_rank": self.m0,
            "refined_rank": self.mprime,
            "band_width": self.r,
            "first_band": _int_json(self.nu1),
            "native": [[c, frac_str(g)] for c, g in self.native],
            "window": [start_to_json(self.N0), self.window_end().to_json()],
            "pieces": self.pieces_json(),
        }

    @staticmethod
    def from_json(obj: dict) -> "GadgetBlock1D":
        native = [(int(c), Fraction(g)) for c, g in obj["native"]]
        return GadgetBlock1D(
            obj["order"], start_from_json(obj["N0"]), obj["native_rank"],
            obj["refined_rank"], obj["band_width"], _int_from_json(obj["first_band"]),
            native,
        )


class GadgetMask1D:
    """Structural exceptional set: full domain minus the zero-pattern zones."""

    __slots__ = ("block",)

    def __init__(self, block: GadgetBlock1D):
        object.__setattr__(self, "block", block)

    def __setattr__(self, *a):
        raise AttributeError("GadgetMask1D is immutable")

    def measure(self) -> Fraction:
        b = self.block
        supp = Fraction(len(b.native), b.a ** b.m0)
        return 1 - supp * Fraction(1, b.a ** b.r)

    def contains(self, x: Fraction) -> bool:
        b = self.block
        t = b.piece_of_point(Fraction(x))
        if t is None:
            return True
        return not b.pattern_is_zero(Fraction(x), t)

    def support_l1(self, f: StepFunction) -> Fraction:
        """Exact integral of |f| over this set (f native to the block)."""
        b = self.block
        total = F0
        for _, g in b.native:
            total += abs(g)
        total *= Fraction(1, b.a ** b.m0)
        return total * (1 - Fraction(1, b.a ** b.r))

    def to_cellmask(self, rank: int) -> CellMask:
        b = self.block
        a = b.a
        if a ** rank > RENDER_CAP:
            raise BudgetError("mask", "mask too fine to materialize")
        top = b.nu1 + b.T * b.r
        if rank < top:
            raise ValueError("rank too coarse")
        bits = np.ones(a ** rank, dtype=bool)
        per_piece = a ** (rank - b.mprime)
        for t in range(b.T):
            cell = b.piece_cell(t)
            nu = b.band_base(t)
            for c in range(cell * per_piece, (cell + 1) * per_piece):
                zero = True
                for i in range(b.r):
                    pos = nu + i
                    if (c // a ** (rank - 1 - pos)) % a != 0:
                        zero = False
                        break
                if zero:
                    bits[c] = False
        return CellMask(a, 1, rank, bits)

    def to_json(self) -> dict:
        return {
            "kind": "band-exclusion",
            "order": self.block.a,
            "measure": frac_str(self.measure()),
            "block": self.block.to_json(),
        }

    @staticmethod
    def from_json(obj: dict) -> "GadgetMask1D":
        return GadgetMask1D(GadgetBlock1D.from_json(obj["block"]))


def _bilinear_exponent(a: int, m: int, j: int, cell: int) -> int:
    jd = digits(j, a, m)
    cd = digits(cell, a, m)
    return sum(jd[l] * cd[m - 1 - l] for l in range(m)) % a


def _walsh_exponent_big(a: int, n: int, x: Fraction) -> int:
    e = 0
    pos = 0
    while n:
        n, d = divmod(n, a)
        if d:
            e += d * rademacher_exponent(a, pos, x)
        pos += 1
    return e % a


# ---------------------------------------------------------------------------
# condition (4): on-cell pattern sweep and leak bound

def excess_max(a: int, r: int, mprime: int) -> Optional[Fraction]:
    """Upper bound for the on-cell partial-band excess factor

        max over cut tuples v* and prefix depths of
        sum_{pattern != 0} max(|PS(v*, pat) + omega^<tau*, pat> q| - 1, 0),

    with q swept only at its endpoints {a^-m', 1} (the modulus is convex in
    q, so endpoint evaluation is exact).  Returns None when a^(2r) exceeds
    the sweep cap; callers then fall back to the digit-sum bound."""
    n = a ** r
    if a == 2 and n * n <= SWEEP_CAP_BINARY:
        return _excess_max_binary(r, Fraction(1, a ** mprime))
    if n * n <= SWEEP_CAP_GENERIC:
        return _excess_max_generic(a, r, Fraction(1, a ** mprime))
    return None


def _tuple_dot_table(a: int, r: int) -> np.ndarray:
    n = a ** r
    D = np.empty((n, r), dtype=np.int64)
    idx = np.arange(n)
    for l in range(r):
        idx, D[:, l] = np.divmod(idx, a)
    return (D @ D.T) % a


def _excess_max_binary(r: int, q_lo: Fraction) -> Fraction:
    n = 1 << r
    E = _tuple_dot_table(2, r)
    sgn = 1 - 2 * E  # omega_2^e = (-1)^e
    best = F0
    ps = np.zeros(n, dtype=np.int64)  # PS over tau in [1, v*): starts empty
    for v in range(1, n):
        sstar = sgn[v]
        absps = np.abs(ps)
        sigma = np.where(ps != 0, sstar * np.sign(ps), sstar)
        big = absps >= 2
        one_up = (absps == 1) & (sigma == 1)
        c1 = int(np.sum(absps[1:][big[1:]] - 1))  # patterns 1..n-1 only
        c2 = int(np.sum(sigma[1:][big[1:]])) + int(np.count_nonzero(one_up[1:]))
        for q in (q_lo, F1):
            val = c1 + q * c2
            if val > best:
                best = val
        ps = ps + sgn[v]
    return best


def _excess_max_generic(a: int, r: int, q_lo: Fraction) -> Fraction:
    n = a ** r
    E = _tuple_dot_table(a, r)
    roots = [QCyc.root(a, e) for e in range(a)]
    counts = [[0] * a for _ in range(n)]
    qs = (q_lo,) if q_lo == F1 else (q_lo, F1)
    best = F0
    for v in range(1, n):
        sums = {q: F0 for q in qs}
        for pat in range(1, n):
            z = QCyc.zero(a)
            for e, cnt in enumerate(counts[pat]):
                if cnt:
                    z = z + roots[e] * cnt
            estar = int(E[v, pat])
            for q in qs:
                zz = z + roots[estar] * q
                hi = zz.abs_enclosure(96)[1]
                if hi > 1:
                    sums[q] += hi - 1
        for q in qs:
            if sums[q] > best:
                best = sums[q]
        for pat in range(n):
            counts[pat][int(E[v, pat])] += 1
    return best


def leak_max(a: int, mprime: int) -> Fraction:
    """Off-cell leak of a prefix of the refined indicator Dirichlet sum:
    a^-m' * max_J (digitsum(J+1) - (J+1) a^-m'), bounded by the all-(a-1)
    digit string."""
    am = a ** mprime
    return Fraction(1, am) * ((a - 1) * mprime - 1 + Fraction(1, am))


def _cond4_parts(a: int, r: int, mprime: int, gamma_max: Fraction) -> tuple[int, int, str]:
    """Numerator/denominator pair of the condition-(4) prefix-excess bound,
    assembled in plain integers so callers can compare or round the value
    without normalizing rationals whose denominators hold millions of bits."""
    ex = excess_max(a, r, mprime)
    gn, gd = gamma_max.numerator, gamma_max.denominator
    am = a ** mprime
    lk = (a - 1) * mprime - 1  # leak numerator over a^m', before the +a^-m' tail
    if ex is not None:
        xn, xd = ex.numerator, ex.denominator
        ar = a ** r
        num = gn * (xn * am + xd * ar * (lk * am + 1))
        den = gd * xd * am * am * ar
        return num, den, "pattern-sweep-convex-endpoints + dirichlet-leak"
    num = gn * (((a - 1) * r + lk) * am + 1)
    den = gd * am * am
    return num, den, "digit-sum-fallback + dirichlet-leak"


def _cond4_lt(a: int, r: int, mprime: int, gamma_max: Fraction, eps: Fraction) -> bool:
    """Exact test  condition-(4) bound < eps  by integer cross-multiplication
    (no rational normalization; safe for huge a^m')."""
    num, den, _ = _cond4_parts(a, r, mprime, gamma_max)
    return num * eps.denominator < eps.numerator * den


def condition4_bound(a: int, r: int, mprime: int, gamma_max: Fraction) -> tuple[Fraction, str]:
    """Sound upper bound for the condition-(4) prefix excess, with the name
    of the reduction that produced it.  The value is the exact rational up to
    V_EXACT_BITS of denominator, and a directed 192-bit upper rounding beyond
    (the bound is only ever consumed as an upper estimate)."""
    num, den, reduction = _cond4_parts(a, r, mprime, gamma_max)
    if den.bit_length() <= V_EXACT_BITS:
        return Fraction(num, den), reduction
    return frac_up_ratio(num, den), reduction + " + directed-upper-round"


def power_sum_bound(a: int, r: int, mprime: int, excess: Fraction, f_power: Ivl) -> Ivl:
    """Closed form  sum |c|^(2+excess)
        = (a^r - 1) * a^(-m' * excess) * int |f|^(2+excess)
    for a banded-modulation block; `f_power` encloses int |f|^(2+excess)."""
    scale = frac_pow_enclosure(Fraction(1, a), mprime * excess, bits=64)
    lo = (a ** r - 1) * scale[0] * f_power[0]
    hi = (a ** r - 1) * scale[1] * f_power[1]
    return (lo, hi)


def condition3_bound(a: int, r: int, mprime: int, eps: Fraction, f_power: Ivl) -> Ivl:
    """Closed form sum |c|^(2+eps) = (a^r - 1) * a^(-m' eps) * int |f|^(2+eps)."""
    return power_sum_bound(a, r, mprime, eps, f_power)


# ---------------------------------------------------------------------------
# worst-subset positive-part reduction

def worst_subset_excess(s_vals, f_vals, e_bits, cell_area: Fraction, bits: int = 64) -> Ivl:
    """Directed enclosure of  max over subsets e of the masked cells of
    ( int_e |S| - int_e |f| ) = sum over masked cells of (|S| - |f|)^+ .
    """
    lo_total, hi_total = F0, F0
    for s, f, b in zip(s_vals, f_vals, e_bits):
        if not b:
            continue
        fa = abs(Fraction(f))
        slo, shi = sc_abs_enclosure(s, bits)
        lo_total += max(slo - fa, F0)
        hi_total += max(shi - fa, F0)
    return (lo_total * cell_area, hi_total * cell_area)


# ---------------------------------------------------------------------------
# dense verifier (explicit operands)

def lemma33_verify(
    f: StepFunction,
    eps: Fraction,
    N0: int,
    P: CoeffBlock1D,
    E: CellMask,
    bits: int = 64,
) -> Certificate:
    """Exact verification of conditions (1)-(4) on explicit operands."""
    eps = Fraction(eps)
    a = f.a
    cert = Certificate(title="high-frequency approximation, dense verification")
    rho = max(f.m, E.m, P.required_rank())
    if a ** rho > RENDER_CAP:
        raise ValueError("operands too fine for dense verification")

    supp = P.support()
    if supp:
        cert.check("spectrum-window-low", N0, "<=", supp[0], reduction="support scan")
        cert.check("spectrum-window-high", supp[-1], "<=", P.window[1], reduction="support scan")
    else:
        cert.record("spectrum-window-low", True, detail="empty polynomial")

    S_full = P.render(rho, "exact")
    f_r = f.refine(rho)
    E_r = E.refine(rho)

    ok1 = True
    bad = None
    for i in range(a ** rho):
        if not E_r.bits[i]:
            continue
        if not sc_eq(S_full.values[i], f_r.values[i]):
            ok1 = False
            bad = i
            break
    cert.record(
        "condition-1-equality-on-E",
        ok1,
        detail="P(x) = f(x) on every masked cell" if ok1 else f"mismatch on cell {bad}",
        reduction="exact render over rank-%d grid" % rho,
    )

    cert.check("condition-2-measure", E.measure(), ">", 1 - eps, reduction="cell count")

    cert.check(
        "condition-3-power-sum",
        P.lp_sum(2 + eps, bits),
        "<",
        eps,
        reduction="materialized coefficient sum",
    )

    N_end = P.window[1]
    worst: Ivl = (F0, F0)
    worst_cut = None
    S_partial = StepFunction.zero(a, 1, rho)
    for k in supp:
        term = CoeffBlock1D(a, (k, k), {k: P.coeffs[k]}).render(rho, "exact")
        S_partial = S_partial + term
        if k >= N_end:
            continue  # cutoffs are < N, a prefix ending at N is out of range
        v = worst_subset_excess(S_partial.values, f_r.values, E_r.bits, S_partial.cell_area(), bits)
        if v[1] > worst[1]:
            worst, worst_cut = v, k
    cert.check(
        "condition-4-prefix-excess",
        worst,
        "<",
        eps,
        reduction="per-prefix worst-subset positive part",
        note=f"worst prefix cutoff {worst_cut}" if worst_cut is not None else "no admissible cutoff",
    )
    return cert


# ---------------------------------------------------------------------------
# structural verifier

def _verify_structured(req: Lemma33Request, block: GadgetBlock1D, mask: GadgetMask1D,
                       bits: int = 64, nu_floor: int = 0) -> Certificate:
    a, eps = req.a, req.eps
    cert = Certificate(title="high-frequency approximation, structural verification")

    # modulation identity: sum_k omega^(k d) = a [d = 0]
    ok = True
    for d in range(a):
        s = QCyc.zero(a)
        for k in range(a):
            s = s + QCyc.root(a, (k * d) % a)
        want = QCyc.from_rational(a, a if d == 0 else 0)
        if s != want:
            ok = False
    cert.record("modulation-identity", ok, detail="sum_k omega^(kd) = a*[d=0] for all digits d",
                reduction="exact cyclotomic sum")

    # band layout
    layout_ok = (
        block.mprime >= max(block.m0, 1)
        and block.nu1 >= block.mprime
        and block.nu1 >= ceil_log(a, req.N0)
        and block.nu1 >= nu_floor
        and block.nu1 >= start_ceil_log(a, block.N0)
        and block.r >= 1
    )
    cert.record("band-layout", layout_ok,
                detail=f"nu1 (bits)={block.nu1.bit_length()}, r={block.r}, m'={block.mprime}",
                reduction="disjoint bands [nu_t, nu_t + r) at nu_t = nu1 + t*r")

    # the block must target the requested function: same native rank and
    # exactly f's nonzero cells (construction guarantees this; reloaded
    # operands must re-earn it)
    want = tuple((i, Fraction(v)) for i, v in enumerate(req.f.values) if v != 0)
    have = tuple((int(c), Fraction(g)) for c, g in block.native)
    cert.record("target-consistency", block.m0 == req.f.m and have == want,
                detail="native values coincide with the request target",
                reduction="cell-wise exact comparison")

    # condition (1): per-band identity plus spot evaluations
    spots_ok = True
    spot_notes = []
    probe_natives = block.native[:3] if block.nu1.bit_length() <= SPOT_EVAL_BITS else ()
    for idx, (c, g) in enumerate(probe_natives):
        t = idx * block.per_native  # first refined piece of this native cell
        left = Fraction(c, a ** block.m0)
        nu = block.band_base(t)
        if nu.bit_length() > SPOT_EVAL_BITS:
            continue
        inside = left if block.piece_of_point(left) == t else None
        if inside is not None and block.pattern_is_zero(inside, t):
            want = g * (1 - a ** block.r)
            got = block.value_at(inside)
            spots_ok &= got == want
            spot_notes.append(f"zero-pattern point of piece {t}: P = gamma(1-a^r)")
        if nu <= 1 << 16:  # the offset a^-(nu+1) must stay materializable
            x2 = left + Fraction(1, a) ** (nu + 1)
            if block.piece_of_point(x2) == t and not block.pattern_is_zero(x2, t):
                got = block.value_at(x2)
                spots_ok &= got == g
                spot_notes.append(f"nonzero-pattern point of piece {t}: P = gamma")
    top_exp = block.nu1 + block.T * block.r
    if block.coeff_count() <= 4096 and top_exp <= 64 and block.native:
        c0, g0 = block.native[0]
        left = Fraction(c0, a ** block.m0)
        x2 = left + Fraction(1, a) ** (block.band_base(block.piece_of_point(left)) + 1)
        raw = block.point_eval_by_coefficients(x2)
        closed = QCyc.from_rational(a, block.value_at(x2))
        spots_ok &= raw == closed
        spot_notes.append("raw coefficient sum matches closed form at a sample point")
    cert.record("condition-1-equality-on-E", spots_ok,
                detail="; ".join(spot_notes) if spot_notes else "telescoping identity only",
                reduction="h_t = gamma*chi - gamma*a^r*chi(zero-pattern); E omits zero-pattern zones")

    # condition (2)
    cert.check("condition-2-measure", mask.measure(), ">", 1 - eps,
               reduction="1 - a^-r * |supp f| closed form")

    # condition (3)
    fpow = req.f.power_integral(2 + eps, bits)
    b3 = condition3_bound(a, block.r, block.mprime, eps, fpow)
    cert.check("condition-3-power-sum", b3, "<", eps,
               reduction="(a^r-1) * a^(-m' eps) * int |f|^(2+eps) closed form")

    # coefficient-modulus spot check backing the closed form
    if block.native and block.coeff_count() <= MATERIALIZE_CAP and block.nu1 <= SPOT_EVAL_BITS:
        t = 0
        n0 = a ** block.band_base(t)  # tuple value 1, j = 0
        c = block.coefficient(n0)
        want2 = block.coeff_modulus(block.piece_gamma(t)) ** 2
        got2 = c.abs2().as_rational() if isinstance(c, QCyc) else Fraction(c) ** 2
        cert.record("coefficient-modulus-spot", got2 == want2,
                    detail=f"|c|^2 = {frac_str(want2)} at the first band index",
                    reduction="structure lookup vs |gamma| a^-m'")

    # condition (4)
    b4, reduction = condition4_bound(a, block.r, block.mprime, block.max_gamma())
    cert.check("condition-4-prefix-excess", b4, "<", eps, reduction=reduction,
               note="single partial band per cutoff; on-cell sweep + off-cell leak")
    return cert


# ---------------------------------------------------------------------------
# construction

@dataclass
class Lemma33Result:
    request: Lemma33Request
    block: Union[CoeffBlock1D, GadgetBlock1D]
    mask: Union[CellMask, GadgetMask1D]
    certificate: Certificate
    params: dict = field(default_factory=dict)
    exact: dict = field(default_factory=dict)  # exact rationals for downstream assembly

    @property
    def ok(self) -> bool:
        return self.certificate.ok

    def window_end(self) -> WindowBound:
        if isinstance(self.block, GadgetBlock1D):
            return self.block.window_end()
        end = self.block.window[1]
        return WindowBound(self.request.a, 0, end - 1)

    def to_json(self) -> dict:
        if isinstance(self.block, GadgetBlock1D):
            block_json = self.block.to_json()
        else:
            block_json = {"kind": "explicit", **self.block.to_json()}
        mask_json = self.mask.to_json()
        params = dict(self.params)
        return {
            "order": self.request.a,
            "eps": frac_str(self.request.eps),
            "N0": self.request.N0,
            "block": block_json,
            "mask": mask_json,
            "certificate": self.certificate.to_json(),
            "params": params,
        }


def _min_mprime(pred, lo: int) -> int:
    """Smallest m' >= lo with pred(m') true; pred monotone in m'."""
    m = max(lo, 1)
    limit = 1 << 24
    if pred(m):
        return m
    hi = m
    while not pred(hi):
        hi *= 2
        if hi > limit:
            raise BudgetError("refined-rank", "no refined rank satisfies the bound within budget")
    lo_s = hi // 2
    while lo_s + 1 < hi:
        mid = (lo_s + hi) // 2
        if pred(mid):
            hi = mid
        else:
            lo_s = mid
    return hi


def lemma33_construct(
    req: Lemma33Request,
    retry_budget: int = 4,
    mode: str = "auto",
    bits: int = 64,
    nu_floor: int = 0,
    start=None,
) -> Lemma33Result:
    """Build (P, E, certificate) fulfilling conditions (1)-(4).

    mode: 'auto' (dense verification whenever the instance fits the render
    caps, structural otherwise), 'dense' (require dense), 'structural'.

    `nu_floor`/`start`: chained constructions pass the true (possibly
    symbolic) window start here; the first band is then placed at or above
    nu_floor and `start` is recorded as the spectrum window's left end.
    """
    a, f, eps, N0 = req.a, req.f, req.eps, req.N0
    m0 = f.m
    native = [(i, v) for i, v in enumerate(f.values) if v != 0]
    rec_start = start if start is not None else N0

    if not native:
        block = CoeffBlock1D(a, (N0, N0), {})
        mask = CellMask.full(a, 1, 0)
        cert = Certificate(title="high-frequency approximation, trivial")
        cert.record("condition-1-equality-on-E", True, detail="P = f = 0 everywhere")
        cert.check("condition-2-measure", 1, ">", 1 - eps)
        cert.check("condition-3-power-sum", 0, "<", eps)
        cert.check("condition-4-prefix-excess", 0, "<", eps)
        exact = {"l1_on_E": F0, "v_bound": F0, "c_prefix_bound": F0, "coeff_modulus_max": F0}
        return Lemma33Result(req, block, mask, cert, params={"trivial": True}, exact=exact)

    supp_measure = Fraction(len(native), a ** m0)
    gamma_max = max(abs(g) for _, g in native)
    f_power = f.power_integral(2 + eps, bits)

    r = max(1, ceil_log(a, 2 * supp_measure / eps))
    extra = 0
    last_failing = "condition-unknown"
    for attempt in range(retry_budget + 1):
        r_try = r + extra

        def p3(m):
            return condition3_bound(a, r_try, m, eps, f_power)[1] < eps

        def p4(m):
            return _cond4_lt(a, r_try, m, gamma_max, eps)

        try:
            m3 = _min_mprime(p3, max(m0, 1))
            m4 = _min_mprime(p4, max(m0, 1))
        except BudgetError as e:
            last_failing = e.condition
            extra += 1
            continue
        mprime = max(m0, 1, m3, m4, ceil_log(a, max(gamma_max, 1))) + extra
        nu1 = max(ceil_log(a, N0), nu_floor, mprime)
        block = GadgetBlock1D(a, rec_start, m0, mprime, r_try, nu1, native)

        if (nu1 + block.T * r_try).bit_length() > EXP_BITS_CAP:
            raise BudgetError("window", "window exponent exceeds bit budget")

        mask = GadgetMask1D(block)
        cert = _verify_structured(req, block, mask, bits, nu_floor)

        top = nu1 + block.T * r_try
        dense_fits = (
            top <= 12  # a >= 2, so beyond this a^top certainly exceeds the cap
            and isinstance(rec_start, int)
            and a ** top <= RENDER_CAP
            and block.coeff_count() <= MATERIALIZE_CAP
        )
        if mode == "dense" and not dense_fits:
            raise BudgetError("dense-render", "instance too large for dense verification")

        result_block: Union[CoeffBlock1D, GadgetBlock1D] = block
        result_mask: Union[CellMask, GadgetMask1D] = mask
        if dense_fits and mode in ("auto", "dense"):
            explicit = block.to_coeffblock()
            cellmask = mask.to_cellmask(top)
            dense_cert = lemma33_verify(f, eps, N0, explicit, cellmask, bits)
            merged = Certificate(title="high-frequency approximation, dual verification")
            merged.extend(cert, prefix="structural:")
            merged.extend(dense_cert, prefix="dense:")
            cert = merged
            result_block, result_mask = explicit, cellmask

        if cert.ok:
            v_bound = condition4_bound(a, r_try, mprime, gamma_max)[0]
            exact = {
                "l1_on_E": mask.support_l1(f),
                "v_bound": v_bound,
                "c_prefix_bound": gamma_max * (a ** r_try + 1),
                "coeff_modulus_max": block.coeff_modulus(gamma_max),
            }
            params = {
                "band_width": r_try,
                "refined_rank": mprime,
                "first_band": _int_json(nu1),
                "pieces": block.pieces_json(),
                "window": [start_to_json(rec_start), block.window_end().to_json()],
                "coeff_modulus_max": frac_disp(exact["coeff_modulus_max"]),
                "l1_on_E": frac_str(exact["l1_on_E"]),
                "v_bound": frac_disp(v_bound),
                "c_prefix_bound": frac_str(exact["c_prefix_bound"]),
                "representation": "explicit" if isinstance(result_block, CoeffBlock1D) else "structural",
            }
            return Lemma33Result(req, result_block, result_mask, cert, params, exact)
        fails = cert.failures()
        last_failing = fails[0].name if fails else "condition-unknown"
        extra += 1

    raise BudgetError(last_failing, f"retries exhausted; last failing check: {last_failing}")


def lemma33_reverify(req: Lemma33Request, obj: dict, bits: int = 64) -> Certificate:
    """Re-run verification of a stored construction against its request.

    `obj` is a result file as produced by Lemma33Result.to_json; the block
    and mask are rebuilt from it and checked from scratch, so any edit to
    the stored operands surfaces as a named failing condition.
    """
    blk = obj["block"]
    if blk.get("kind") == "banded-modulation":
        block = GadgetBlock1D.from_json(blk)
        return _verify_structured(req, block, GadgetMask1D(block), bits)
    explicit = CoeffBlock1D.from_json(blk)
    mask = CellMask.from_json(obj["mask"])
    return lemma33_verify(req.f, req.eps, req.N0, explicit, mask, bits)
