"""Exact step functions and cell masks on uniform a-adic grids.

Domain is the 1D torus [0,1) or the square [0,1)^2; a rank-m grid splits each
axis into a^m half-open cells.  2D grids are always square (equal rank on
both axes); a 2D value array is row-major with the x index major:
``flat[ix * a^m + iy]``.

Two modes:

* ``exact``  -- values are Fractions or :class:`~chrestenson.exactnum.QCyc`;
  integrals, measures and norms are exact rationals or directed rational
  enclosures (sound on both sides).
* ``fast``   -- values are complex floats; equality means agreement within
  1e-9 and certificate-style inequalities require a 1e-6 margin.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .exactnum import (
    F0,
    F1,
    Ivl,
    Rat,
    Scalar,
    frac_pow_enclosure,
    frac_str,
    ivl_add,
    ivl_point,
    ivl_scale,
    parse_frac,
    sc_abs2,
    sc_abs_enclosure,
    sc_add,
    sc_from_json,
    sc_is_zero,
    sc_mul,
    sc_to_complex,
    sc_to_json,
)

FAST_EQ_TOL = 1e-9          # fast-mode equality tolerance
FAST_MARGIN = 1e-6          # fast-mode safety margin on certificate inequalities
MATERIALIZE_GUARD = 1 << 22  # refuse denser grids than this many cells


def _frac_part(x: Fraction) -> Fraction:
    return x - (x.numerator // x.denominator)


def _cells_total(a: int, dim: int, m: int) -> int:
    n = a ** (dim * m)
    if n > MATERIALIZE_GUARD:
        raise ValueError(
            f"grid too fine to materialize: a^(dim*m) = {a}^{dim * m} cells"
        )
    return n


@dataclass(frozen=True)
class AdicCell:
    """Half-open a-adic cell of a given rank; index is int (1D) or (ix, iy)."""

    a: int
    m: int
    index: Union[int, tuple[int, int]]

    def __post_init__(self):
        N = self.a ** self.m
        if isinstance(self.index, tuple):
            ix, iy = self.index
            if not (0 <= ix < N and 0 <= iy < N):
                raise ValueError("cell index out of range")
        elif not (0 <= self.index < N):
            raise ValueError("cell index out of range")

    @property
    def dim(self) -> int:
        return 2 if isinstance(self.index, tuple) else 1

    def interval(self) -> tuple[Fraction, Fraction]:
        if self.dim != 1:
            raise ValueError("interval() is for 1D cells")
        N = self.a ** self.m
        return (Fraction(self.index, N), Fraction(self.index + 1, N))

    def box(self) -> tuple[tuple[Fraction, Fraction], tuple[Fraction, Fraction]]:
        if self.dim != 2:
            raise ValueError("box() is for 2D cells")
        N = self.a ** self.m
        ix, iy = self.index
        return (
            (Fraction(ix, N), Fraction(ix + 1, N)),
            (Fraction(iy, N), Fraction(iy + 1, N)),
        )

    def measure(self) -> Fraction:
        return Fraction(1, self.a ** (self.dim * self.m))

    def contains(self, point) -> bool:
        N = self.a ** self.m
        if self.dim == 1:
            x = _frac_part(Fraction(point))
            return self.index == (x.numerator * N) // x.denominator
        x = _frac_part(Fraction(point[0]))
        y = _frac_part(Fraction(point[1]))
        ix, iy = self.index
        return ix == (x.numerator * N) // x.denominator and iy == (y.numerator * N) // y.denominator


def cell_of_point(a: int, m: int, point) -> Union[int, tuple[int, int]]:
    """Flat 1D index or (ix, iy) of the rank-m cell containing the point."""
    N = a ** m
    if isinstance(point, (tuple, list)):
        x = _frac_part(Fraction(point[0]))
        y = _frac_part(Fraction(point[1]))
        return ((x.numerator * N) // x.denominator, (y.numerator * N) // y.denominator)
    x = _frac_part(Fraction(point))
    return (x.numerator * N) // x.denominator


class StepFunction:
    """Piecewise-constant function on a rank-m a-adic grid (dimension 1 or 2)."""

    __slots__ = ("a", "dim", "m", "mode", "values")

    def __init__(self, a: int, dim: int, m: int, values, mode: str = "exact"):
        if a < 2 or dim not in (1, 2) or m < 0:
            raise ValueError("bad grid parameters")
        if mode not in ("exact", "fast"):
            raise ValueError("mode must be 'exact' or 'fast'")
        n = _cells_total(a, dim, m)
        if mode == "exact":
            vals = tuple(
                v if isinstance(v, (Fraction,)) or hasattr(v, "vec") else Fraction(v)
                for v in values
            )
            if len(vals) != n:
                raise ValueError(f"need {n} values, got {len(vals)}")
        else:
            vals = np.asarray(values, dtype=np.complex128)
            if vals.shape != (n,):
                raise ValueError(f"need {n} values, got {vals.shape}")
            vals.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "values", vals)

    def __setattr__(self, *a):
        raise AttributeError("StepFunction is immutable")

    # -- constructors
    @staticmethod
    def constant(a: int, dim: int, value, m: int = 0, mode: str = "exact") -> "StepFunction":
        n = _cells_total(a, dim, m)
        return StepFunction(a, dim, m, [value] * n, mode)

    @staticmethod
    def zero(a: int, dim: int, m: int = 0, mode: str = "exact") -> "StepFunction":
        return StepFunction.constant(a, dim, 0, m, mode)

    # -- indexing helpers
    @property
    def side(self) -> int:
        return self.a ** self.m

    def flat(self, idx) -> int:
        if self.dim == 1:
            return idx
        ix, iy = idx
        return ix * self.side + iy

    def value_on_cell(self, idx) -> Scalar:
        return self.values[self.flat(idx)]

    def value_at(self, point) -> Scalar:
        return self.value_on_cell(cell_of_point(self.a, self.m, point))

    # -- refinement and mode
    def refine(self, m2: int) -> "StepFunction":
        if m2 < self.m:
            raise ValueError("rank too coarse")
        if m2 == self.m:
            return self
        step = self.a ** (m2 - self.m)
        n2 = _cells_total(self.a, self.dim, m2)
        if self.dim == 1:
            if self.mode == "fast":
                vals = np.repeat(self.values, step)
            else:
                vals = [v for v in self.values for _ in range(step)]
        else:
            N2 = self.a ** m2
            if self.mode == "fast":
                grid = self.values.reshape(self.side, self.side)
                vals = np.repeat(np.repeat(grid, step, axis=0), step, axis=1).reshape(n2)
            else:
                vals = [
                    self.values[(ix // step) * self.side + (iy // step)]
                    for ix in range(N2)
                    for iy in range(N2)
                ]
        return StepFunction(self.a, self.dim, m2, vals, self.mode)

    def to_fast(self) -> "StepFunction":
        if self.mode == "fast":
            return self
        vals = np.array([sc_to_complex(v) for v in self.values], dtype=np.complex128)
        return StepFunction(self.a, self.dim, self.m, vals, "fast")

    def _common(self, other: "StepFunction") -> tuple["StepFunction", "StepFunction"]:
        if not isinstance(other, StepFunction):
            raise TypeError("expected StepFunction")
        if self.a != other.a or self.dim != other.dim:
            raise ValueError("incompatible grids")
        m = max(self.m, other.m)
        f, g = self.refine(m), other.refine(m)
        if f.mode != g.mode:
            f, g = f.to_fast(), g.to_fast()
        return f, g

    # -- pointwise algebra
    def __add__(self, other):
        f, g = self._common(other)
        if f.mode == "fast":
            return StepFunction(f.a, f.dim, f.m, f.values + g.values, "fast")
        return StepFunction(f.a, f.dim, f.m, [sc_add(x, y) for x, y in zip(f.values, g.values)])

    def __sub__(self, other):
        return self + (other.scale(-1))

    def __neg__(self):
        return self.scale(-1)

    def scale(self, c) -> "StepFunction":
        if self.mode == "fast":
            return StepFunction(self.a, self.dim, self.m, self.values * complex(sc_to_complex(c)), "fast")
        return StepFunction(self.a, self.dim, self.m, [sc_mul(v, c) for v in self.values])

    def __mul__(self, other):
        if not isinstance(other, StepFunction):
            return self.scale(other)
        f, g = self._common(other)
        if f.mode == "fast":
            return StepFunction(f.a, f.dim, f.m, f.values * g.values, "fast")
        return StepFunction(f.a, f.dim, f.m, [sc_mul(x, y) for x, y in zip(f.values, g.values)])

    __rmul__ = __mul__

    def equals(self, other: "StepFunction") -> bool:
        f, g = self._common(other)
        if f.mode == "fast":
            return bool(np.all(np.abs(f.values - g.values) <= FAST_EQ_TOL))
        return all(sc_is_zero(sc_add(x, sc_mul(y, -1))) for x, y in zip(f.values, g.values))

    # -- reductions (fixed summation order: ascending flat index)
    def cell_area(self) -> Fraction:
        return Fraction(1, self.a ** (self.dim * self.m))

    def integral(self):
        if self.mode == "fast":
            return complex(np.sum(self.values)) * float(self.cell_area())
        total: Scalar = Fraction(0)
        for v in self.values:
            total = sc_add(total, v)
        return sc_mul(total, self.cell_area())

    def support_measure(self) -> Fraction:
        if self.mode == "fast":
            cnt = int(np.count_nonzero(np.abs(self.values) > FAST_EQ_TOL))
        else:
            cnt = sum(0 if sc_is_zero(v) else 1 for v in self.values)
        return cnt * self.cell_area()

    def abs_integral(
        self,
        mask: Optional["CellMask"] = None,
        weight: Optional["WeightFunction"] = None,
        bits: int = 64,
    ) -> Ivl:
        """Directed enclosure of the (weighted) L1 integral over the mask."""
        f = self
        if weight is not None:
            mw = max(f.m, weight.step.m)
            f = f.refine(mw)
            wstep = weight.step.refine(mw)
        if mask is not None:
            mm = max(f.m, mask.m)
            f = f.refine(mm)
            if weight is not None and mm > wstep.m:
                wstep = wstep.refine(mm)
            sel = mask.refine(f.m).bits
        else:
            sel = None
        if f.mode == "fast":
            mags = np.abs(f.values)
            if weight is not None:
                mags = mags * np.real(wstep.to_fast().values)
            if sel is not None:
                mags = mags[sel]
            v = float(np.sum(mags)) * float(f.cell_area())
            return (Fraction(v), Fraction(v))
        total = (F0, F0)
        for i, v in enumerate(f.values):
            if sel is not None and not sel[i]:
                continue
            if sc_is_zero(v):
                continue
            term = sc_abs_enclosure(v, bits)
            if weight is not None:
                term = ivl_scale(term, Fraction(wstep.values[i]))
            total = ivl_add(total, term)
        return ivl_scale(total, f.cell_area())

    def power_integral(self, p: Rat, bits: int = 64) -> Ivl:
        """Directed enclosure of the integral of |f|^p (exact mode only)."""
        if self.mode == "fast":
            v = float(np.sum(np.abs(self.values) ** float(Fraction(p)))) * float(self.cell_area())
            return (Fraction(v), Fraction(v))
        total = (F0, F0)
        for v in self.values:
            if sc_is_zero(v):
                continue
            lo, hi = sc_abs_enclosure(v, bits)
            plo = frac_pow_enclosure(max(lo, F0), p, bits)[0]
            phi = frac_pow_enclosure(hi, p, bits)[1]
            total = ivl_add(total, (plo, phi))
        return ivl_scale(total, self.cell_area())

    def sup_norm(self, bits: int = 64) -> Ivl:
        """Directed enclosure of max |f| (exact when all moduli are exact)."""
        if self.mode == "fast":
            v = float(np.max(np.abs(self.values))) if len(self.values) else 0.0
            return (Fraction(v), Fraction(v))
        lo_best, hi_best = F0, F0
        for v in self.values:
            if sc_is_zero(v):
                continue
            lo, hi = sc_abs_enclosure(v, bits)
            lo_best = max(lo_best, lo)
            hi_best = max(hi_best, hi)
        return (lo_best, hi_best)

    def sup_norm_sq(self) -> Fraction:
        """Exact max of |f|^2 when every cell has rational |.|^2."""
        best = F0
        if self.mode == "fast":
            raise ValueError("sup_norm_sq needs exact mode")
        for v in self.values:
            a2 = sc_abs2(v)
            if not isinstance(a2, Fraction):
                r = a2.as_rational()
                if r is None:
                    raise ValueError("cell modulus squared is not rational")
                a2 = r
            best = max(best, a2)
        return best

    # -- serialization
    def to_json(self) -> dict:
        if self.mode == "fast":
            vals = [[float(v.real), float(v.imag)] for v in self.values]
        else:
            vals = [sc_to_json(v) for v in self.values]
        return {
            "order": self.a,
            "dimension": self.dim,
            "rank": self.m,
            "mode": self.mode,
            "values": vals,
        }

    @staticmethod
    def from_json(obj: dict) -> "StepFunction":
        mode = obj["mode"]
        if mode == "fast":
            vals = [complex(re, im) for re, im in obj["values"]]
        else:
            vals = [sc_from_json(v) for v in obj["values"]]
        return StepFunction(obj["order"], obj["dimension"], obj["rank"], vals, mode)


class CellMask:
    """Boolean mask over the rank-m cells of a 1D or square-2D grid."""

    __slots__ = ("a", "dim", "m", "bits")

    def __init__(self, a: int, dim: int, m: int, bits):
        n = _cells_total(a, dim, m)
        arr = np.asarray(bits, dtype=bool)
        if arr.shape != (n,):
            raise ValueError(f"need {n} mask bits, got {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "bits", arr)

    def __setattr__(self, *a):
        raise AttributeError("CellMask is immutable")

    @staticmethod
    def full(a: int, dim: int, m: int) -> "CellMask":
        return CellMask(a, dim, m, np.ones(_cells_total(a, dim, m), dtype=bool))

    @staticmethod
    def empty(a: int, dim: int, m: int) -> "CellMask":
        return CellMask(a, dim, m, np.zeros(_cells_total(a, dim, m), dtype=bool))

    @staticmethod
    def from_cells(a: int, dim: int, m: int, cells: Iterable) -> "CellMask":
        bits = np.zeros(_cells_total(a, dim, m), dtype=bool)
        side = a ** m
        for c in cells:
            flat = c[0] * side + c[1] if isinstance(c, (tuple, list)) else c
            bits[flat] = True
        return CellMask(a, dim, m, bits)

    @property
    def side(self) -> int:
        return self.a ** self.m

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def measure(self) -> Fraction:
        return Fraction(self.count(), self.a ** (self.dim * self.m))

    def refine(self, m2: int) -> "CellMask":
        if m2 < self.m:
            raise ValueError("rank too coarse")
        if m2 == self.m:
            return self
        step = self.a ** (m2 - self.m)
        if self.dim == 1:
            bits = np.repeat(self.bits, step)
        else:
            grid = self.bits.reshape(self.side, self.side)
            bits = np.repeat(np.repeat(grid, step, axis=0), step, axis=1).reshape(-1)
        return CellMask(self.a, self.dim, m2, bits)

    def _common(self, other: "CellMask") -> tuple["CellMask", "CellMask"]:
        if self.a != other.a or self.dim != other.dim:
            raise ValueError("incompatible masks")
        m = max(self.m, other.m)
        return self.refine(m), other.refine(m)

    def complement(self) -> "CellMask":
        return CellMask(self.a, self.dim, self.m, ~self.bits)

    def __and__(self, other: "CellMask") -> "CellMask":
        x, y = self._common(other)
        return CellMask(x.a, x.dim, x.m, x.bits & y.bits)

    def __or__(self, other: "CellMask") -> "CellMask":
        x, y = self._common(other)
        return CellMask(x.a, x.dim, x.m, x.bits | y.bits)

    def __sub__(self, other: "CellMask") -> "CellMask":
        x, y = self._common(other)
        return CellMask(x.a, x.dim, x.m, x.bits & ~y.bits)

    def __eq__(self, other):
        if not isinstance(other, CellMask):
            return NotImplemented
        x, y = self._common(other)
        return bool(np.array_equal(x.bits, y.bits))

    def __hash__(self):
        return hash((self.a, self.dim, self.m, self.bits.tobytes()))

    def contains(self, point) -> bool:
        idx = cell_of_point(self.a, self.m, point if self.dim == 2 else point)
        flat = idx[0] * self.side + idx[1] if isinstance(idx, tuple) else idx
        return bool(self.bits[flat])

    def indicator(self, mode: str = "exact") -> StepFunction:
        vals = [1 if b else 0 for b in self.bits]
        return StepFunction(self.a, self.dim, self.m, vals, "exact").to_fast() if mode == "fast" else StepFunction(self.a, self.dim, self.m, vals)

    def to_runs(self) -> list[list[int]]:
        runs: list[list[int]] = []
        start = None
        for i, b in enumerate(self.bits):
            if b and start is None:
                start = i
            elif not b and start is not None:
                runs.append([start, i - start])
                start = None
        if start is not None:
            runs.append([start, len(self.bits) - start])
        return runs

    @staticmethod
    def from_runs(a: int, dim: int, m: int, runs: Sequence[Sequence[int]]) -> "CellMask":
        bits = np.zeros(_cells_total(a, dim, m), dtype=bool)
        for start, length in runs:
            bits[start : start + length] = True
        return CellMask(a, dim, m, bits)

    def to_json(self) -> dict:
        return {
            "order": self.a,
            "dimension": self.dim,
            "rank": self.m,
            "runs": self.to_runs(),
        }

    @staticmethod
    def from_json(obj: dict) -> "CellMask":
        return CellMask.from_runs(obj["order"], obj["dimension"], obj["rank"], obj["runs"])


class WeightFunction:
    """Step weight with rational values in (0, 1]."""

    __slots__ = ("step",)

    def __init__(self, step: StepFunction):
        if step.mode != "exact":
            raise ValueError("weights must be exact")
        for v in step.values:
            if not isinstance(v, Fraction):
                raise ValueError("weights must be rational")
            if not (0 < v <= 1):
                raise ValueError("weight values must lie in (0, 1]")
        object.__setattr__(self, "step", step)

    def __setattr__(self, *a):
        raise AttributeError("WeightFunction is immutable")

    @staticmethod
    def ones(a: int, dim: int, m: int = 0) -> "WeightFunction":
        return WeightFunction(StepFunction.constant(a, dim, 1, m))

    @staticmethod
    def from_values(a: int, dim: int, m: int, values) -> "WeightFunction":
        return WeightFunction(StepFunction(a, dim, m, values))

    def value_at(self, point) -> Fraction:
        return self.step.value_at(point)

    def min_value(self) -> Fraction:
        return min(self.step.values)

    def integral(self) -> Fraction:
        return self.step.integral()

    def measure_ne_one(self) -> Fraction:
        cnt = sum(1 for v in self.step.values if v != 1)
        return cnt * self.step.cell_area()

    def to_json(self) -> dict:
        return {"weight": self.step.to_json()}

    @staticmethod
    def from_json(obj: dict) -> "WeightFunction":
        return WeightFunction(StepFunction.from_json(obj["weight"]))


# ---------------------------------------------------------------------------
# spec-level operations

def indicator(cell: AdicCell, target_rank: int, mode: str = "exact") -> StepFunction:
    """Indicator step function of a cell, rendered at the target rank."""
    if target_rank < cell.m:
        raise ValueError("rank too coarse")
    a, dim = cell.a, cell.dim
    n = _cells_total(a, dim, target_rank)
    step = a ** (target_rank - cell.m)
    vals = [0] * n
    if dim == 1:
        lo = cell.index * step
        for i in range(lo, lo + step):
            vals[i] = 1
    else:
        side = a ** target_rank
        ix0, iy0 = cell.index[0] * step, cell.index[1] * step
        for ix in range(ix0, ix0 + step):
            for iy in range(iy0, iy0 + step):
                vals[ix * side + iy] = 1
    f = StepFunction(a, dim, target_rank, vals)
    return f.to_fast() if mode == "fast" else f


def integral_weighted_L1(
    f: StepFunction,
    mu: Optional[WeightFunction] = None,
    mask: Optional[CellMask] = None,
    bits: int = 64,
) -> Ivl:
    """Directed enclosure of the weighted L1 integral of f over the mask."""
    return f.abs_integral(mask=mask, weight=mu, bits=bits)


def sup_norm_C(f: StepFunction, bits: int = 64) -> Ivl:
    return f.sup_norm(bits)


def tensor(f: StepFunction, g: StepFunction) -> StepFunction:
    """2D function (x, y) -> f(x) * g(y) from two 1D step functions."""
    if f.dim != 1 or g.dim != 1:
        raise ValueError("tensor needs 1D operands")
    if f.a != g.a:
        raise ValueError("mixed orders")
    m = max(f.m, g.m)
    ff, gg = f.refine(m), g.refine(m)
    if ff.mode != gg.mode or ff.mode == "fast":
        fv = ff.to_fast().values
        gv = gg.to_fast().values
        return StepFunction(f.a, 2, m, np.outer(fv, gv).reshape(-1), "fast")
    vals = [sc_mul(x, y) for x in ff.values for y in gg.values]
    return StepFunction(f.a, 2, m, vals)


def ivl_exact(iv: Ivl) -> Fraction:
    """Collapse an enclosure known to be exact; error when it is not."""
    lo, hi = iv
    if lo != hi:
        raise ValueError(f"enclosure is not exact: [{frac_str(lo)}, {frac_str(hi)}]")
    return lo
