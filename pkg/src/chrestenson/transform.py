"""Forward/inverse Chrestenson transforms and coefficient-block machinery.

Forward convention: ``c_n = a^-m * sum_i values[i] * conj(psi_n(cell i))``
(inner-product coefficients); the inverse applies no normalization, so
``inverse(forward(v)) == v`` exactly in exact mode.

The fast path runs m radix-a axis passes followed by a base-a digit reversal
of the output index -- the reversal realizes the digit-reversed bilinear form
in the cell-exponent formula.  Three interchangeable backends:

* exact      -- QCyc/Fraction arithmetic on Python lists (certificate mode);
* numpy      -- complex128 tensor passes (fast mode fallback);
* compiled   -- optional C kernel (:mod:`chrestenson._fct_kernel`), selected
  automatically at import when the extension built.

A naive O(N^2) evaluation of the defining sums is kept alongside as the
oracle the fast paths are checked against.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from math import isqrt
from typing import Optional, Sequence, Union

import numpy as np

from .exactnum import (
    F0,
    Ivl,
    QCyc,
    Rat,
    Scalar,
    frac_pow_enclosure,
    ivl_add,
    ivl_point,
    ivl_scale,
    sc_abs2,
    sc_abs_enclosure,
    sc_add,
    sc_eq,
    sc_from_json,
    sc_is_zero,
    sc_mul,
    sc_to_complex,
    sc_to_json,
)
from .grid import StepFunction
from .walsh import constancy_rank, digits, exponent_table

try:  # compiled kernel is optional; the numpy path is drop-in equivalent
    from . import _fct_kernel as _kernel
except ImportError:  # pragma: no cover - depends on build environment
    _kernel = None

MATERIALIZE_CAP = 1 << 16  # largest dense coefficient set a block will expand
EXACT_TRANSFORM_CAP = 1 << 16


def transform_backend() -> str:
    """Which fast-mode backend import selected: 'compiled' or 'numpy'."""
    return "compiled" if _kernel is not None else "numpy"


# ---------------------------------------------------------------------------
# index plumbing

def _infer_rank(n_values: int, a: int) -> int:
    m = 0
    n = 1
    while n < n_values:
        n *= a
        m += 1
    if n != n_values:
        raise ValueError("length is not a power of the order")
    return m


def _reversal_perm(a: int, m: int) -> np.ndarray:
    """perm[n] = base-a digit reversal of n within m digits."""
    N = a ** m
    perm = np.empty(N, dtype=np.int64)
    for n in range(N):
        ds = digits(n, a, m)
        r = 0
        for d in ds:
            r = r * a + d
        perm[n] = r
    return perm


def _twiddle_np(a: int, sign: int) -> np.ndarray:
    k = np.arange(a)
    w = np.exp(sign * 2j * np.pi / a)
    return w ** np.outer(k, k)


def _apply_stages_np(vals: np.ndarray, a: int, m: int, mat: np.ndarray) -> np.ndarray:
    arr = vals.reshape((a,) * m) if m > 0 else vals
    for t in range(m):
        arr = np.moveaxis(np.tensordot(mat, arr, axes=([1], [t])), 0, t)
    return arr.reshape(-1)


def _apply_stages_exact(vals: list, a: int, m: int, sign: int) -> list:
    roots = [QCyc.root(a, (sign * e) % a) for e in range(a)]
    cur = list(vals)
    N = len(cur)
    for t in range(m):
        stride = a ** (m - 1 - t)
        block = stride * a
        nxt = [None] * N
        for q in range(0, N, block):
            for r in range(stride):
                base = q + r
                col = [cur[base + d * stride] for d in range(a)]
                for k in range(a):
                    acc: Scalar = F0
                    for d in range(a):
                        v = col[d]
                        if sc_is_zero(v):
                            continue
                        acc = sc_add(acc, sc_mul(roots[(k * d) % a], v))
                    nxt[base + k * stride] = acc
        cur = nxt
    return cur


# ---------------------------------------------------------------------------
# transforms

def fct_forward(values, a: int, mode: str = "exact", backend: Optional[str] = None):
    """Chrestenson coefficients of a rank-m value vector (length a^m)."""
    if mode == "exact":
        vals = list(values)
        m = _infer_rank(len(vals), a)
        if len(vals) > EXACT_TRANSFORM_CAP:
            raise ValueError("vector too long for exact transform")
        staged = _apply_stages_exact(vals, a, m, sign=-1)
        perm = _reversal_perm(a, m)
        scale = Fraction(1, a ** m)
        return [sc_mul(staged[perm[n]], scale) for n in range(len(vals))]
    vals = np.asarray(values, dtype=np.complex128).reshape(-1)
    m = _infer_rank(len(vals), a)
    mat = _twiddle_np(a, -1)
    use = backend or transform_backend()
    if use == "compiled" and _kernel is not None:
        staged = _kernel.apply_stages(vals, a, m, mat)
    else:
        staged = _apply_stages_np(vals, a, m, mat)
    return staged[_reversal_perm(a, m)] / a ** m


def fct_inverse(coeffs, a: int, mode: str = "exact", backend: Optional[str] = None):
    """Value vector whose Chrestenson coefficients are ``coeffs``."""
    if mode == "exact":
        cs = list(coeffs)
        m = _infer_rank(len(cs), a)
        if len(cs) > EXACT_TRANSFORM_CAP:
            raise ValueError("vector too long for exact transform")
        perm = _reversal_perm(a, m)
        tmp = [cs[perm[i]] for i in range(len(cs))]
        return _apply_stages_exact(tmp, a, m, sign=+1)
    cs = np.asarray(coeffs, dtype=np.complex128).reshape(-1)
    m = _infer_rank(len(cs), a)
    mat = _twiddle_np(a, +1)
    tmp = cs[_reversal_perm(a, m)]
    use = backend or transform_backend()
    if use == "compiled" and _kernel is not None:
        return _kernel.apply_stages(tmp, a, m, mat)
    return _apply_stages_np(tmp, a, m, mat)


def fct_forward_naive(values, a: int, mode: str = "exact"):
    """O(N^2) oracle: evaluates the defining inner-product sums directly."""
    if mode == "exact":
        vals = list(values)
        m = _infer_rank(len(vals), a)
        T = exponent_table(a, m)
        roots = [QCyc.root(a, k) for k in range(a)]
        scale = Fraction(1, a ** m)
        out = []
        for n in range(len(vals)):
            acc: Scalar = F0
            for i, v in enumerate(vals):
                if sc_is_zero(v):
                    continue
                acc = sc_add(acc, sc_mul(roots[(a - T[n, i]) % a], v))
            out.append(sc_mul(acc, scale))
        return out
    vals = np.asarray(values, dtype=np.complex128).reshape(-1)
    m = _infer_rank(len(vals), a)
    T = exponent_table(a, m)
    w = np.exp(-2j * np.pi / a)
    return (w ** T) @ vals / a ** m


def fct_inverse_naive(coeffs, a: int, mode: str = "exact"):
    if mode == "exact":
        cs = list(coeffs)
        m = _infer_rank(len(cs), a)
        T = exponent_table(a, m)
        roots = [QCyc.root(a, k) for k in range(a)]
        out = []
        for i in range(len(cs)):
            acc: Scalar = F0
            for n, c in enumerate(cs):
                if sc_is_zero(c):
                    continue
                acc = sc_add(acc, sc_mul(roots[T[n, i] % a], c))
            out.append(acc)
        return out
    cs = np.asarray(coeffs, dtype=np.complex128).reshape(-1)
    m = _infer_rank(len(cs), a)
    T = exponent_table(a, m)
    w = np.exp(2j * np.pi / a)
    return (w ** T).T @ cs


def parseval_holds(values, coeffs, a: int) -> bool:
    """Exact check of sum |c_n|^2 == a^-m * sum |v_i|^2 (exact mode)."""
    m = _infer_rank(len(list(values)), a)
    lhs: Scalar = F0
    for c in coeffs:
        lhs = sc_add(lhs, sc_abs2(c))
    rhs: Scalar = F0
    for v in values:
        rhs = sc_add(rhs, sc_abs2(v))
    rhs = sc_mul(rhs, Fraction(1, a ** m))
    return sc_eq(lhs, rhs)


# ---------------------------------------------------------------------------
# partial-sum specification

@dataclass(frozen=True)
class PartialSumSpec:
    """Rectangular (nbar, mbar), spherical (exact R^2), or 1D prefix cutoff."""

    kind: str
    nbar: int = 0
    mbar: int = 0
    r2: Fraction = F0
    cutoff: int = 0

    def __post_init__(self):
        if self.kind == "rectangular":
            if self.nbar < 1 or self.mbar < 1:
                raise ValueError("rectangular bounds must be >= 1")
        elif self.kind == "spherical":
            if Fraction(self.r2) < 0:
                raise ValueError("R^2 must be >= 0")
            object.__setattr__(self, "r2", Fraction(self.r2))
        elif self.kind == "prefix":
            if self.cutoff < 0:
                raise ValueError("prefix cutoff must be >= 0")
        else:
            raise ValueError(f"unknown partial-sum kind {self.kind!r}")

    @staticmethod
    def rectangular(nbar: int, mbar: int) -> "PartialSumSpec":
        return PartialSumSpec("rectangular", nbar=nbar, mbar=mbar)

    @staticmethod
    def spherical(r2: Rat) -> "PartialSumSpec":
        return PartialSumSpec("spherical", r2=Fraction(r2))

    @staticmethod
    def prefix(cutoff: int) -> "PartialSumSpec":
        return PartialSumSpec("prefix", cutoff=cutoff)

    def selects(self, k: int, s: Optional[int] = None) -> bool:
        if self.kind == "prefix":
            if s is not None:
                raise ValueError("prefix spec is one-dimensional")
            return k <= self.cutoff
        if s is None:
            raise ValueError("2D spec needs two indices")
        if self.kind == "rectangular":
            return k <= self.nbar and s <= self.mbar
        return Fraction(k * k + s * s) <= self.r2

    def max_col_for_row(self, k: int) -> int:
        """Spherical: the largest s with k^2 + s^2 <= R^2, or -1 if none."""
        if self.kind != "spherical":
            raise ValueError("row scan is for spherical specs")
        rem = self.r2 - k * k
        if rem < 0:
            return -1
        # floor(sqrt(p/q)) = isqrt(p*q) // q
        return isqrt(rem.numerator * rem.denominator) // rem.denominator


# ---------------------------------------------------------------------------
# coefficient blocks

class CoeffBlock1D:
    """Sparse coefficients over an inclusive index window [N, M], N >= 1."""

    __slots__ = ("a", "window", "coeffs")

    def __init__(self, a: int, window: tuple[int, int], coeffs: dict):
        N, M = window
        if not (1 <= N <= M):
            raise ValueError("window must satisfy 1 <= N <= M")
        clean = {}
        for k, v in coeffs.items():
            k = int(k)
            if not (N <= k <= M):
                raise ValueError(f"index {k} outside window [{N}, {M}]")
            if not sc_is_zero(v):
                clean[k] = v if isinstance(v, (Fraction, QCyc)) else Fraction(v)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "window", (int(N), int(M)))
        object.__setattr__(self, "coeffs", clean)

    def __setattr__(self, *a):
        raise AttributeError("CoeffBlock1D is immutable")

    def __len__(self):
        return len(self.coeffs)

    def support(self) -> list[int]:
        return sorted(self.coeffs)

    def filtered(self, pred) -> "CoeffBlock1D":
        kept = {k: v for k, v in self.coeffs.items() if pred(k)}
        return CoeffBlock1D(self.a, self.window, kept)

    def lp_sum(self, p: Rat, bits: int = 64) -> Ivl:
        """Directed enclosure of sum |c_k|^p over stored coefficients."""
        p = Fraction(p)
        if p < 1:
            raise ValueError("exponent must be >= 1")
        total = (F0, F0)
        for v in self.coeffs.values():
            lo, hi = sc_abs_enclosure(v, bits)
            total = ivl_add(
                total,
                (frac_pow_enclosure(max(lo, F0), p, bits)[0], frac_pow_enclosure(hi, p, bits)[1]),
            )
        return total

    def l2_sum_exact(self) -> Fraction:
        """Exact sum |c_k|^2 (each term rational, or the total must be)."""
        acc: Scalar = F0
        for v in self.coeffs.values():
            acc = sc_add(acc, sc_abs2(v))
        if isinstance(acc, QCyc):
            r = acc.as_rational()
            if r is None:
                raise ValueError("l2 sum is not rational")
            return r
        return Fraction(acc)

    def required_rank(self) -> int:
        return constancy_rank(self.a, max(self.coeffs)) if self.coeffs else 0

    def render(self, m: int, mode: str = "exact", spec: Optional[PartialSumSpec] = None) -> StepFunction:
        """Rank-m step function of the (optionally prefix-cut) polynomial."""
        block = self if spec is None else self.filtered(lambda k: spec.selects(k))
        if block.required_rank() > m:
            raise ValueError("rank too coarse")
        N = self.a ** m
        if mode == "exact":
            vec: list = [F0] * N
            for k, v in block.coeffs.items():
                vec[k] = v
            vals = fct_inverse(vec, self.a, "exact")
            return StepFunction(self.a, 1, m, vals)
        vec = np.zeros(N, dtype=np.complex128)
        for k, v in block.coeffs.items():
            vec[k] = sc_to_complex(v)
        return StepFunction(self.a, 1, m, fct_inverse(vec, self.a, "fast"), "fast")

    def to_json(self) -> dict:
        return {
            "order": self.a,
            "window": list(self.window),
            "coeffs": [[k, sc_to_json(v)] for k, v in sorted(self.coeffs.items())],
        }

    @staticmethod
    def from_json(obj: dict) -> "CoeffBlock1D":
        coeffs = {int(k): sc_from_json(v) for k, v in obj["coeffs"]}
        return CoeffBlock1D(obj["order"], tuple(obj["window"]), coeffs)


@dataclass(frozen=True)
class Rank1Term:
    """gamma * (row tensor col): c_{k,s} = gamma * a_k * b_s."""

    gamma: Scalar
    row: CoeffBlock1D
    col: CoeffBlock1D

    def __post_init__(self):
        if self.row.a != self.col.a:
            raise ValueError("mixed orders in rank-1 term")

    def to_json(self) -> dict:
        return {"gamma": sc_to_json(self.gamma), "row": self.row.to_json(), "col": self.col.to_json()}

    @staticmethod
    def from_json(obj: dict) -> "Rank1Term":
        return Rank1Term(sc_from_json(obj["gamma"]), CoeffBlock1D.from_json(obj["row"]), CoeffBlock1D.from_json(obj["col"]))


def _windows_meet(w1: tuple[int, int], w2: tuple[int, int]) -> bool:
    return w1[0] <= w2[1] and w2[0] <= w1[1]


class CoeffBlock2D:
    """2D coefficients over [N, M]^2: rank-1 terms plus explicit corrections."""

    __slots__ = ("a", "window", "terms", "explicit")

    def __init__(
        self,
        a: int,
        window: tuple[int, int],
        terms: Sequence[Rank1Term] = (),
        explicit: Optional[dict] = None,
    ):
        N, M = window
        if not (1 <= N <= M):
            raise ValueError("window must satisfy 1 <= N <= M")
        terms = tuple(terms)
        for t in terms:
            if t.row.a != a:
                raise ValueError("term order mismatch")
            for w in (t.row.window, t.col.window):
                if not (N <= w[0] and w[1] <= M):
                    raise ValueError("term window escapes block window")
        clean = {}
        for (k, s), v in (explicit or {}).items():
            if not (N <= k <= M and N <= s <= M):
                raise ValueError("explicit index outside window")
            if not sc_is_zero(v):
                clean[(int(k), int(s))] = v if isinstance(v, (Fraction, QCyc)) else Fraction(v)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "window", (int(N), int(M)))
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "explicit", clean)

    def __setattr__(self, *a):
        raise AttributeError("CoeffBlock2D is immutable")

    # -- structure
    def has_overlap(self) -> bool:
        """Do any two rank-1 supports (or a term and an explicit entry) meet?"""
        boxes = [(t.row.window, t.col.window) for t in self.terms]
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                if _windows_meet(boxes[i][0], boxes[j][0]) and _windows_meet(boxes[i][1], boxes[j][1]):
                    return True
        for (k, s) in self.explicit:
            for rw, cw in boxes:
                if rw[0] <= k <= rw[1] and cw[0] <= s <= cw[1]:
                    return True
        return False

    def coefficient(self, k: int, s: int) -> Scalar:
        acc: Scalar = F0
        for t in self.terms:
            ak = t.row.coeffs.get(k)
            bs = t.col.coeffs.get(s)
            if ak is not None and bs is not None:
                acc = sc_add(acc, sc_mul(t.gamma, sc_mul(ak, bs)))
        if (k, s) in self.explicit:
            acc = sc_add(acc, self.explicit[(k, s)])
        return acc

    def support_size(self) -> int:
        n = len(self.explicit)
        for t in self.terms:
            n += len(t.row) * len(t.col)
        return n

    def materialize(self, cap: int = MATERIALIZE_CAP) -> dict:
        if self.support_size() > cap:
            raise ValueError("coefficient set too large to materialize")
        out: dict = {}
        for t in self.terms:
            for k, ak in t.row.coeffs.items():
                ga = sc_mul(t.gamma, ak)
                for s, bs in t.col.coeffs.items():
                    key = (k, s)
                    v = sc_mul(ga, bs)
                    out[key] = sc_add(out[key], v) if key in out else v
        for key, v in self.explicit.items():
            out[key] = sc_add(out[key], v) if key in out else v
        return {key: v for key, v in out.items() if not sc_is_zero(v)}

    # -- norms
    def lp_sum(self, p: Rat, bits: int = 64, materialize: bool = False) -> Ivl:
        """sum |c_{k,s}|^p: exact product closed form when rank-1 supports are
        disjoint, otherwise requires explicit materialization."""
        p = Fraction(p)
        if p < 1:
            raise ValueError("exponent must be >= 1")
        if self.has_overlap():
            if not materialize:
                raise ValueError("overlapping rank-1 windows: pass materialize=True")
            total = (F0, F0)
            for v in self.materialize().values():
                lo, hi = sc_abs_enclosure(v, bits)
                total = ivl_add(
                    total,
                    (frac_pow_enclosure(max(lo, F0), p, bits)[0], frac_pow_enclosure(hi, p, bits)[1]),
                )
            return total
        total = (F0, F0)
        for t in self.terms:
            glo, ghi = sc_abs_enclosure(t.gamma, bits)
            gp = (frac_pow_enclosure(max(glo, F0), p, bits)[0], frac_pow_enclosure(ghi, p, bits)[1])
            total = ivl_add(total, ivl_mul_nonneg(gp, ivl_mul_nonneg(t.row.lp_sum(p, bits), t.col.lp_sum(p, bits))))
        for v in self.explicit.values():
            lo, hi = sc_abs_enclosure(v, bits)
            total = ivl_add(
                total,
                (frac_pow_enclosure(max(lo, F0), p, bits)[0], frac_pow_enclosure(hi, p, bits)[1]),
            )
        return total

    # -- rendering
    def required_rank(self, spec: Optional[PartialSumSpec] = None) -> int:
        top = 0
        for t in self.terms:
            for k in t.row.coeffs:
                for s in t.col.coeffs:
                    if spec is None or spec.selects(k, s):
                        top = max(top, k, s)
        for (k, s) in self.explicit:
            if spec is None or spec.selects(k, s):
                top = max(top, k, s)
        return constancy_rank(self.a, top)

    def render(self, spec: Optional[PartialSumSpec], m: int, mode: str = "exact") -> StepFunction:
        """Rank-m step function of the selected partial sum.

        Rank-1 terms render as outer products of 1D inverse transforms; the
        dense 2D coefficient matrix is never materialized.  Spherical
        selection renders row-by-row (the s-range depends on k).
        """
        if self.required_rank(spec) > m:
            raise ValueError("rank too coarse")
        a = self.a
        N = a ** m
        if mode == "fast":
            total = np.zeros(N * N, dtype=np.complex128)
        else:
            total_sf = StepFunction.zero(a, 2, m)
        for t in self.terms:
            pieces: list[tuple[CoeffBlock1D, CoeffBlock1D]] = []
            if spec is None:
                pieces.append((t.row, t.col))
            elif spec.kind == "rectangular":
                rowf = t.row.filtered(lambda k: k <= spec.nbar)
                colf = t.col.filtered(lambda s: s <= spec.mbar)
                if rowf.coeffs and colf.coeffs:
                    pieces.append((rowf, colf))
            elif spec.kind == "spherical":
                for k in t.row.support():
                    smax = spec.max_col_for_row(k)
                    colf = t.col.filtered(lambda s: s <= smax)
                    if colf.coeffs:
                        pieces.append((t.row.filtered(lambda kk: kk == k), colf))
            else:
                raise ValueError("prefix specs apply to 1D blocks")
            for rowb, colb in pieces:
                fx = rowb.render(m, mode)
                fy = colb.render(m, mode)
                if mode == "fast":
                    total += complex(sc_to_complex(t.gamma)) * np.outer(fx.values, fy.values).reshape(-1)
                else:
                    vals = [None] * (N * N)
                    for ix in range(N):
                        gx = sc_mul(t.gamma, fx.values[ix])
                        for iy in range(N):
                            vals[ix * N + iy] = sc_mul(gx, fy.values[iy])
                    total_sf = total_sf + StepFunction(a, 2, m, vals)
        for (k, s), v in self.explicit.items():
            if spec is not None and not spec.selects(k, s):
                continue
            rowb = CoeffBlock1D(a, (k, k), {k: 1})
            colb = CoeffBlock1D(a, (s, s), {s: 1})
            fx = rowb.render(m, mode)
            fy = colb.render(m, mode)
            if mode == "fast":
                total += complex(sc_to_complex(v)) * np.outer(fx.values, fy.values).reshape(-1)
            else:
                vals = [None] * (N * N)
                for ix in range(N):
                    gx = sc_mul(v, fx.values[ix])
                    for iy in range(N):
                        vals[ix * N + iy] = sc_mul(gx, fy.values[iy])
                total_sf = total_sf + StepFunction(a, 2, m, vals)
        if mode == "fast":
            return StepFunction(a, 2, m, total, "fast")
        return total_sf

    # -- serialization
    def to_json(self) -> dict:
        return {
            "order": self.a,
            "window": list(self.window),
            "terms": [t.to_json() for t in self.terms],
            "explicit": [[k, s, sc_to_json(v)] for (k, s), v in sorted(self.explicit.items())],
        }

    @staticmethod
    def from_json(obj: dict) -> "CoeffBlock2D":
        terms = [Rank1Term.from_json(t) for t in obj.get("terms", [])]
        explicit = {(int(k), int(s)): sc_from_json(v) for k, s, v in obj.get("explicit", [])}
        return CoeffBlock2D(obj["order"], tuple(obj["window"]), terms, explicit)

    def to_csv(self) -> str:
        """Materialized float CSV (columns k, nu, re, im); lossless for the
        complex-float materialization via shortest-repr round-tripping."""
        entries = self.materialize()
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["k", "nu", "re", "im"])
        for (k, s) in sorted(entries):
            z = sc_to_complex(entries[(k, s)])
            w.writerow([k, s, repr(z.real), repr(z.imag)])
        return buf.getvalue()


def materialized_from_csv(text: str) -> dict:
    """Parse the coefficient CSV back into {(k, nu): complex}."""
    rdr = csv.reader(io.StringIO(text))
    header = next(rdr)
    if header != ["k", "nu", "re", "im"]:
        raise ValueError("bad coefficient CSV header")
    out = {}
    for k, s, re, im in rdr:
        out[(int(k), int(s))] = complex(float(re), float(im))
    return out


def ivl_mul_nonneg(x: Ivl, y: Ivl) -> Ivl:
    return (x[0] * y[0], x[1] * y[1])


# ---------------------------------------------------------------------------
# spec-level operations

def render_partial_sum(block, spec: Optional[PartialSumSpec], m: int, mode: str = "exact") -> StepFunction:
    if isinstance(block, CoeffBlock1D):
        return block.render(m, mode, spec)
    if isinstance(block, CoeffBlock2D):
        return block.render(spec, m, mode)
    raise TypeError("expected a coefficient block")


def lp_coefficient_norm(block, p: Rat, bits: int = 64, materialize: bool = False) -> Ivl:
    if isinstance(block, CoeffBlock1D):
        return block.lp_sum(p, bits)
    if isinstance(block, CoeffBlock2D):
        return block.lp_sum(p, bits, materialize=materialize)
    raise TypeError("expected a coefficient block")
