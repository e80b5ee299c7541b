"""Universal-series assembly for two-dimensional order-a systems.

A fixed series of high-frequency blocks is built so that subseries of it can
trail arbitrary exact step targets: block s approximates the s-th enumerated
function within eps_s = 2^-2(s+1) in C-norm off an excluded set of measure
less than eps_s, with spectra stacked on pairwise-disjoint window pairs.  A
stratified weight mu <= 1 tames every partial-sum cutoff of the blocks, a
greedy scan certifies a subseries whose weighted residual clears the chain
tau_q = 2^-2q, and a monitor bounds the error of every swept cutoff class of
the selected blocks.

Everything is exact rational arithmetic; the only directed roundings happen
inside the inherited closed-form bounds, always upward on upper estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .certificate import Certificate
from .exactnum import F0, F1, floor_log, frac_str, ivl_add, parse_frac
from .grid import StepFunction
from .transform import ivl_mul_nonneg
from .approx1d import (
    BudgetError,
    GadgetBlock1D,
    GadgetMask1D,
    WindowBound,
    power_sum_bound,
    start_to_json,
)
from .approx2d import (
    AdicRect,
    IntersectionMask1D,
    Lemma35Request,
    Lemma35Result,
    lemma35_construct,
    split_into_pieces,
)

__all__ = [
    "ThinEnumerator",
    "CensusEnumerator",
    "make_enumerator",
    "UniversalBlock",
    "UniversalSeries",
    "build_universal",
    "StratifiedWeight",
    "build_weight",
    "GreedySelection",
    "greedy_select",
    "MonitorTrace",
    "monitor_convergence",
    "block_budget",
]

# most 2D cells a weight/residual table will materialize
WEIGHT_TABLE_CAP = 1 << 16
# census stages beyond this would manipulate astronomically large counts
CENSUS_STAGE_CAP = 6
# hard cap on series stages a single build will attempt
SERIES_STAGE_CAP = 64


def block_budget(s: int) -> Fraction:
    """Per-stage approximation budget eps_s = 2^-2(s+1)."""
    if s < 1:
        raise ValueError("stages are 1-based")
    return Fraction(1, 4 ** (s + 1))


def _sup_abs(f: StepFunction) -> Fraction:
    return max((abs(Fraction(v)) for v in f.values), default=F0)


def _exact_ivl(iv) -> Fraction:
    """Collapse an enclosure that is exact for rational data."""
    lo, hi = iv
    if lo != hi:
        raise ValueError("expected an exact enclosure")
    return hi


# ---------------------------------------------------------------------------
# enumerators
#
# An enumerator fixes the sequence of target functions the series trails.
# Two are provided: a thin sequence whose stage-s mass already fits the
# stage budget (so every block is constructible), and a complete census of
# all exact rational 2D step functions (whose early constant slots exceed
# any piece budget -- builds over it fail honestly, but it supports exact
# slot arithmetic both ways and is used for completeness audits).


class ThinEnumerator:
    """Slot 1 is the zero function; slot s >= 2 is gamma_s on [0,1/a)^2 with
    gamma_s a power of two chosen so the slot's mass is at most eps_s/32
    (one split piece per block)."""

    name = "thin"

    def __init__(self, a: int = 2):
        if a < 2:
            raise ValueError("order must be at least 2")
        self.a = a

    def gamma(self, s: int) -> Fraction:
        if s < 2:
            raise ValueError("slot 1 is the zero function")
        if self.a == 2:
            return Fraction(1, 1 << (2 * s + 5))
        return Fraction(1, 1 << (2 * s + 4))

    def function(self, s: int) -> StepFunction:
        a = self.a
        if s < 1:
            raise ValueError("slots are 1-based")
        if s == 1:
            return StepFunction.zero(a, 2, 0)
        vals = [F0] * (a * a)
        vals[0] = self.gamma(s)
        return StepFunction(a, 2, 1, vals)

    def locate(self, f: StepFunction) -> Optional[int]:
        """Slot of f within this enumeration, None when absent."""
        if f.a != self.a or f.dim != 2:
            return None
        if f.equals(StepFunction.zero(self.a, 2, 0)):
            return 1
        g = Fraction(f.value_at((F0, F0)))
        if g <= 0 or g.numerator != 1:
            return None
        k = g.denominator.bit_length() - 1
        if (1 << k) != g.denominator:
            return None
        base = 5 if self.a == 2 else 4
        s, rem = divmod(k - base, 2)
        if rem != 0 or s < 2:
            return None
        return s if f.equals(self.function(s)) else None

    def to_json(self) -> dict:
        return {"kind": self.name, "order": self.a}


def _size(v: Fraction) -> int:
    return max(abs(v.numerator), v.denominator)


class CensusEnumerator:
    """Complete staged census of exact rational 2D step functions.

    Stage n >= 1 admits cell values from V_n = {p/q reduced : |p| <= n,
    1 <= q <= n} and grid ranks m <= n; a function belongs to the stage
    max(minimal rank, largest value size, 1) with size(p/q) = max(|p|, q).
    Within a stage, functions are ordered by rank, then lexicographically by
    their cell values in sibling-grouped (Z-order) traversal; tuples that
    refine a coarser function and tuples whose values all fit an earlier
    stage are skipped.  Slots are 1-based and both directions of the
    slot <-> function bijection are computed arithmetically (digit walks
    with closed-form completion counts), never by iteration.
    """

    name = "census"

    def __init__(self, a: int = 2):
        if a < 2:
            raise ValueError("order must be at least 2")
        self.a = a
        self._values: dict[int, list[Fraction]] = {0: []}
        self._totals: dict[int, int] = {}

    # -- value grids
    def values(self, n: int) -> list[Fraction]:
        if n not in self._values:
            vals = {Fraction(p, q) for q in range(1, n + 1)
                    for p in range(-n, n + 1)}
            self._values[n] = sorted(v for v in vals if _size(v) <= n)
        return self._values[n]

    def _nvals(self, n: int) -> int:
        return len(self.values(n)) if n >= 0 else 0

    # -- Z-order (sibling-grouped) position <-> flat grid index
    def _z_to_flat(self, j: int, m: int) -> int:
        a = self.a
        ix = iy = 0
        for l in range(m):
            d = (j // (a * a) ** l) % (a * a)
            ix += (d // a) * a ** l
            iy += (d % a) * a ** l
        return ix * a ** m + iy

    def _tuple_of(self, f: StepFunction) -> tuple[Fraction, ...]:
        A = (self.a * self.a) ** f.m
        return tuple(Fraction(f.values[self._z_to_flat(j, f.m)]) for j in range(A))

    def _function_of(self, tup: Sequence[Fraction], m: int) -> StepFunction:
        vals = [F0] * len(tup)
        for j, v in enumerate(tup):
            vals[self._z_to_flat(j, m)] = v
        return StepFunction(self.a, 2, m, vals)

    # -- completion counting
    def _completions(self, n: int, m: int, prefix: Sequence[Fraction]) -> int:
        """Number of stage-(n, m) canonical value tuples extending `prefix`."""
        blk = self.a * self.a
        A = blk ** m
        L = len(prefix)
        vn, vp = self._nvals(n), self._nvals(n - 1)
        tot = vn ** (A - L)
        small_pref = all(_size(v) <= n - 1 for v in prefix)
        if m == 0:
            ref = refsmall = 0
        else:
            consistent = all(prefix[i] == prefix[(i // blk) * blk] for i in range(L))
            if consistent:
                free = A // blk - (L + blk - 1) // blk
                ref = vn ** free
                refsmall = vp ** free if small_pref else 0
            else:
                ref = refsmall = 0
        if m == n:
            return tot - ref
        small = vp ** (A - L) if small_pref else 0
        return tot - small - ref + refsmall

    def count(self, n: int, m: int) -> int:
        return self._completions(n, m, ())

    def stage_total(self, n: int) -> int:
        if n not in self._totals:
            self._totals[n] = sum(self.count(n, m) for m in range(n + 1))
        return self._totals[n]

    # -- slot -> function
    def function(self, slot: int) -> StepFunction:
        if slot < 1:
            raise ValueError("slots are 1-based")
        idx, n = slot - 1, 1
        while idx >= self.stage_total(n):
            idx -= self.stage_total(n)
            n += 1
            if n > CENSUS_STAGE_CAP:
                raise BudgetError("enumeration",
                                  f"slot {slot} lies beyond census stage {CENSUS_STAGE_CAP}")
        for m in range(n + 1):
            c = self.count(n, m)
            if idx < c:
                break
            idx -= c
        A = (self.a * self.a) ** m
        prefix: list[Fraction] = []
        for _ in range(A):
            for u in self.values(n):
                c = self._completions(n, m, prefix + [u])
                if idx < c:
                    prefix.append(u)
                    break
                idx -= c
            else:
                raise AssertionError("slot unranking walked past the value grid")
        return self._function_of(prefix, m)

    # -- function -> slot
    def locate(self, f: StepFunction) -> int:
        if f.a != self.a or f.dim != 2:
            raise ValueError("census covers 2D functions of the same order")
        blk = self.a * self.a
        tup, m = self._tuple_of(f), f.m
        while m > 0 and all(tup[i] == tup[(i // blk) * blk] for i in range(len(tup))):
            tup, m = tup[::blk], m - 1
        n = max(m, max(_size(v) for v in tup), 1)
        if n > CENSUS_STAGE_CAP:
            raise BudgetError("enumeration",
                              f"census stage {n} exceeds the enumerable budget")
        slot = 1 + sum(self.stage_total(k) for k in range(1, n))
        slot += sum(self.count(n, mm) for mm in range(m))
        prefix: list[Fraction] = []
        for v in tup:
            for u in self.values(n):
                if u >= v:
                    break
                slot += self._completions(n, m, prefix + [u])
            prefix.append(v)
        return slot

    def to_json(self) -> dict:
        return {"kind": self.name, "order": self.a}


def make_enumerator(name: str, a: int):
    if name == "thin":
        return ThinEnumerator(a)
    if name == "census":
        return CensusEnumerator(a)
    raise ValueError(f"unknown enumerator {name!r}")


# ---------------------------------------------------------------------------
# series blocks

@dataclass
class UniversalBlock:
    """Stage-s block of the series: the enumerated target, its banded
    tensor approximation (possibly empty for a zero target), and the exact
    summaries every later stage consumes (nothing downstream ever touches
    the blocks' giant band positions)."""

    s: int
    f: StepFunction
    eps: Fraction
    gammas: tuple[Fraction, ...]
    rects: tuple[AdicRect, ...]
    x_blocks: tuple[GadgetBlock1D, ...]
    y_blocks: tuple[GadgetBlock1D, ...]
    measure: Fraction        # measure of the kept set E_s
    mass: Fraction           # integral of |f_s|
    sup: Fraction            # sup |f_s|
    c_prefix_sum: Fraction   # sum over pieces of the two axes' prefix-sup bounds
    l1_dirty: Fraction       # bound on the integral of |P_s - f_s|

    @property
    def a(self) -> int:
        return self.f.a

    @property
    def is_zero(self) -> bool:
        return not self.x_blocks

    def x_masks(self) -> tuple[GadgetMask1D, ...]:
        return tuple(GadgetMask1D(b) for b in self.x_blocks)

    def y_masks(self) -> tuple[GadgetMask1D, ...]:
        return tuple(GadgetMask1D(b) for b in self.y_blocks)

    def window_end_exponent(self) -> Optional[int]:
        if self.is_zero:
            return None
        yg = self.y_blocks[-1]
        return yg.nu1 + yg.T * yg.r

    def to_json(self) -> dict:
        return {
            "s": self.s,
            "eps": frac_str(self.eps),
            "f": self.f.to_json(),
            "pieces": [
                {
                    "gamma": frac_str(g),
                    "rect": r.to_json(),
                    "row": xb.to_json(),
                    "col": yb.to_json(),
                }
                for g, r, xb, yb in zip(self.gammas, self.rects,
                                        self.x_blocks, self.y_blocks)
            ],
            "exact": {
                "measure": frac_str(self.measure),
                "mass": frac_str(self.mass),
                "sup": frac_str(self.sup),
                "c_prefix_sum": frac_str(self.c_prefix_sum),
                "l1_dirty": frac_str(self.l1_dirty),
            },
        }

    @staticmethod
    def from_json(obj: dict) -> "UniversalBlock":
        ex = obj["exact"]
        return UniversalBlock(
            s=obj["s"],
            f=StepFunction.from_json(obj["f"]),
            eps=parse_frac(obj["eps"]),
            gammas=tuple(parse_frac(p["gamma"]) for p in obj["pieces"]),
            rects=tuple(AdicRect.from_json(p["rect"]) for p in obj["pieces"]),
            x_blocks=tuple(GadgetBlock1D.from_json(p["row"]) for p in obj["pieces"]),
            y_blocks=tuple(GadgetBlock1D.from_json(p["col"]) for p in obj["pieces"]),
            measure=parse_frac(ex["measure"]),
            mass=parse_frac(ex["mass"]),
            sup=parse_frac(ex["sup"]),
            c_prefix_sum=parse_frac(ex["c_prefix_sum"]),
            l1_dirty=parse_frac(ex["l1_dirty"]),
        )


def _block_from_result(s: int, eps: Fraction, res: Lemma35Result) -> UniversalBlock:
    f = res.request.f
    a = f.a
    gammas, rects, xbs, ybs = [], [], [], []
    cps = F0
    dirty = F0
    for p in res.pieces:
        g, rect = p.request.gamma, p.request.rect
        xb, yb = p.block.xg, p.block.yg
        gammas.append(g)
        rects.append(rect)
        xbs.append(xb)
        ybs.append(yb)
        cps += p.x.exact["c_prefix_bound"] * p.y.exact["c_prefix_bound"]
        dx, dy = rect.x_measure, rect.y_measure
        dirty += abs(g) * dx * (2 * dy * (1 - Fraction(1, a ** yb.r)) + dy)
    return UniversalBlock(
        s=s,
        f=f,
        eps=eps,
        gammas=tuple(gammas),
        rects=tuple(rects),
        x_blocks=tuple(xbs),
        y_blocks=tuple(ybs),
        measure=res.exact["measure"],
        mass=_exact_ivl(f.abs_integral()),
        sup=_sup_abs(f),
        c_prefix_sum=cps,
        l1_dirty=dirty,
    )


@dataclass
class UniversalSeries:
    a: int
    S: int
    schedule: str
    enumerator_name: str
    blocks: tuple[UniversalBlock, ...]
    certificate: Certificate

    @property
    def ok(self) -> bool:
        return self.certificate.ok

    def block(self, s: int) -> UniversalBlock:
        return self.blocks[s - 1]

    def axis_masks(self, n_lo: int) -> tuple[IntersectionMask1D, IntersectionMask1D]:
        """Per-axis intersections of the kept sets of blocks n_lo..S."""
        xs = [m for b in self.blocks[max(n_lo, 1) - 1:] for m in b.x_masks()]
        ys = [m for b in self.blocks[max(n_lo, 1) - 1:] for m in b.y_masks()]
        return IntersectionMask1D(xs), IntersectionMask1D(ys)

    def native_rank(self) -> int:
        """Finest native grid rank any block's piece uses on either axis."""
        ranks = [1]
        for b in self.blocks:
            for r in b.rects:
                ranks.extend((r.mx, r.my))
        return max(ranks)

    def to_manifest(self) -> dict:
        return {
            "format": "universal-series/1",
            "order": self.a,
            "S": self.S,
            "schedule": self.schedule,
            "enumerator": self.enumerator_name,
            "blocks": [b.to_json() for b in self.blocks],
            "certificate": self.certificate.to_json(),
        }

    @staticmethod
    def from_manifest(obj: dict) -> "UniversalSeries":
        if obj.get("format") != "universal-series/1":
            raise ValueError("unknown series manifest format")
        return UniversalSeries(
            a=obj["order"],
            S=obj["S"],
            schedule=obj["schedule"],
            enumerator_name=obj["enumerator"],
            blocks=tuple(UniversalBlock.from_json(b) for b in obj["blocks"]),
            certificate=Certificate.from_json(obj["certificate"]),
        )


# ---------------------------------------------------------------------------
# series assembly

def _block_certificate(s: int, eps: Fraction, res: Lemma35Result) -> Certificate:
    """Block-level requirements restated over the stage budget eps_s and the
    block excess 2^-2s, each bound established by two independent routes
    wherever the construction offers one."""
    a = res.request.a
    tau = Fraction(1, 4 ** s)
    cert = Certificate(title=f"universal block {s}")
    cert.extend(res.certificate, prefix="construction:")

    if not res.pieces:
        cert.record("zero-target", True, detail="block is empty; all bounds hold trivially")
        cert.check("kept-measure", F1, ">", 1 - eps)
        cert.check("power-sum-direct", F0, "<", tau)
        cert.check("partial-sum-family", F0, "<", eps)
        return cert

    eq_names = ("condition-1", "complete-pieces")
    eq_ok = all(e.passed for e in res.certificate.entries
                if e.name.startswith(eq_names))
    cert.record("equality-on-kept-set", eq_ok,
                detail="the block agrees with its target off the excluded bands",
                reduction="per-piece band-pattern identity plus exact partition of the kept set")

    cert.check("kept-measure", res.exact["measure"], ">", 1 - eps,
               reduction="product of the per-axis intersection measures")

    # power sum at the block excess, two routes
    cmax = max(p.block.coeff_modulus_max() for p in res.pieces)
    mod_ok = cert.check("coeff-moduli-bounded", cmax, "<=", F1,
                        reduction="every modulus is |gamma| a^-m'_row a^-m'_col")
    cond3 = [e for e in res.certificate.entries
             if e.name == "condition-3-power-sum"]
    cond3_ok = bool(cond3) and cond3[0].passed
    cert.record("power-sum-monotone-route",
                mod_ok and cond3_ok and eps < tau,
                detail="unit-bounded moduli make |c|^t nonincreasing in t, so the "
                       "certified sum at the finer excess dominates the sum at the "
                       "block excess",
                note=f"stage budget {frac_str(eps)} < block excess {frac_str(tau)}")
    total = (F0, F0)
    for p in res.pieces:
        fxp = p.x.request.f.power_integral(2 + tau)
        fyp = p.y.request.f.power_integral(2 + tau)
        sx = power_sum_bound(a, p.block.xg.r, p.block.xg.mprime, tau, fxp)
        sy = power_sum_bound(a, p.block.yg.r, p.block.yg.mprime, tau, fyp)
        total = ivl_add(total, ivl_mul_nonneg(sx, sy))
    cert.check("power-sum-direct", total, "<", tau,
               reduction="sum over pieces of the tensor power-sum closed forms "
                         "evaluated directly at the block excess")

    fam = res.exact["rect_partial_max"]
    if res.schedule == "strict":
        fam = max(fam, res.exact["sph_partial_max"])
    cert.check("partial-sum-family", fam, "<", eps,
               reduction="per-piece prefix-integral family bounds",
               note="every rectangular (and, in strict schedule, spherical) cutoff "
                    "integral over the kept set stays within twice the block mass "
                    "plus the stage budget")
    return cert


def build_universal(a: int = 2, S: int = 5, schedule: str = "strict",
                    enumerator=None, bits: int = 64,
                    max_pieces: int = 64) -> UniversalSeries:
    """Assemble the first S blocks of the universal series.

    Blocks are built in stage order on chained window pairs: each nonzero
    block's row window starts one past the previous nonzero block's column
    window end, and every band sits above every block's native rank, so the
    kept sets' intersections factor exactly across blocks and axes.
    """
    if not (1 <= S <= SERIES_STAGE_CAP):
        raise ValueError(f"S must lie in 1..{SERIES_STAGE_CAP}")
    enum = enumerator or ThinEnumerator(a)
    if isinstance(enum, str):
        enum = make_enumerator(enum, a)
    if getattr(enum, "a", a) != a:
        raise ValueError("enumerator order does not match the series order")

    targets = []
    presplit = []
    for s in range(1, S + 1):
        f = enum.function(s)
        try:
            pieces = split_into_pieces(f, block_budget(s), max_pieces)
        except BudgetError as err:
            raise BudgetError(err.condition, f"block {s}: {err}") from err
        targets.append(f)
        presplit.append(pieces)

    x_floor = max((r.mx for ps in presplit for _, r in ps), default=1)
    y_floor = max((r.my for ps in presplit for _, r in ps), default=1)

    cert = Certificate(title="universal series assembly")
    blocks: list[UniversalBlock] = []
    chain: list[tuple[int, int, int]] = []  # (s, first row band, column window end exp)
    start = None
    floor = x_floor
    for s in range(1, S + 1):
        eps = block_budget(s)
        req = Lemma35Request(targets[s - 1], eps, 3)
        res = lemma35_construct(req, schedule=schedule, bits=bits,
                                max_pieces=max_pieces, x_start=start,
                                x_nu_floor=floor, y_nu_floor=y_floor)
        blk = _block_from_result(s, eps, res)
        blocks.append(blk)
        cert.extend(_block_certificate(s, eps, res), prefix=f"block-{s}:")
        if not blk.is_zero:
            first_x = blk.x_blocks[0]
            e_y = blk.window_end_exponent()
            if chain:
                prev_s, _, prev_ey = chain[-1]
                if isinstance(first_x.N0, int):
                    nxt = WindowBound(a, prev_ey, 0)
                    chained = nxt.is_materializable(1 << 16) and first_x.N0 == nxt.to_int()
                else:
                    chained = (isinstance(first_x.N0, WindowBound)
                               and first_x.N0.exp == prev_ey and first_x.N0.offset == 0)
                cert.record(f"window-chain-{prev_s}-to-{s}", chained,
                            detail="row window starts one past the previous block's "
                                   "column window end",
                            reduction="exponent bookkeeping on the symbolic bounds")
                cert.record(f"band-ordering-{prev_s}-to-{s}",
                            all(xb.nu1 >= prev_ey for xb in blk.x_blocks),
                            detail="every band of this block sits above every band "
                                   "of the previous block",
                            reduction="integer comparison of band positions")
            chain.append((s, first_x.nu1, e_y))
            start = (WindowBound(a, e_y, 0).to_int()
                     if WindowBound(a, e_y, 0).is_materializable(1 << 16)
                     else WindowBound(a, e_y, 0))
            floor = max(x_floor, e_y)

    floor_ok = all(
        xb.mprime >= x_floor and xb.nu1 >= xb.mprime for b in blocks for xb in b.x_blocks
    ) and all(
        yb.mprime >= y_floor and yb.nu1 >= yb.mprime for b in blocks for yb in b.y_blocks
    )
    cert.record("native-floors", floor_ok,
                detail="every band sits above every block's native rank on its axis, "
                       "so kept-set intersections factor exactly")
    cert.record("enumeration-slots",
                all(enum.function(s).equals(blocks[s - 1].f) for s in range(1, S + 1)),
                detail=f"blocks 1..{S} target the {enum.name} enumeration in slot order")
    disjoint = all(not targets[i].equals(targets[j])
                   for i in range(S) for j in range(i + 1, S))
    cert.record("enumeration-injective", disjoint,
                detail="no two stages target the same function")
    return UniversalSeries(a, S, schedule, enum.name, tuple(blocks), cert)


# ---------------------------------------------------------------------------
# stratified weight

@dataclass
class StratifiedWeight:
    """Exact step weight mu with 0 < mu <= 1: one on the intersection of all
    kept sets from stage n0 up, and 1/(2^2n * prod_{s<=n} h_s) on the n-th
    stratum, where h_s dominates the stage-s target, block value, and every
    partial-sum cutoff of the block."""

    a: int
    S: int
    eps: Fraction
    n0: int
    mode: str
    schedule: str
    h: tuple[Fraction, ...]
    mu: dict[int, Fraction]
    omega: dict[int, Fraction]
    cell_rank: int
    axis_x: dict[int, tuple[Fraction, ...]]
    axis_y: dict[int, tuple[Fraction, ...]]
    measure_ne_one: Fraction
    certificate: Certificate
    _masks: Optional[dict[int, tuple[IntersectionMask1D, IntersectionMask1D]]] = None
    _tables: dict[int, tuple[Fraction, ...]] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.certificate.ok

    def mu_for(self, n: int) -> Fraction:
        if n <= self.n0:
            return F1
        if n > self.S + 1:
            raise ValueError("strata stop at stage S+1")
        return self.mu[n]

    def value_at(self, point) -> Fraction:
        if self._masks is None:
            raise BudgetError("weight", "weight was loaded without its series; "
                              "pointwise evaluation needs the block masks")
        x, y = Fraction(point[0]), Fraction(point[1])
        for n in range(self.n0, self.S + 1):
            xm, ym = self._masks[n]
            if xm.contains(x) and ym.contains(y):
                return F1 if n == self.n0 else self.mu[n]
        return self.mu[self.S + 1] if self.S + 1 > self.n0 else F1

    # -- cell tables
    def _axis_tables_at(self, rank: int):
        if rank == self.cell_rank:
            return self.axis_x, self.axis_y
        if self._masks is None:
            raise BudgetError("weight", "weight was loaded without its series; "
                              f"tables finer than rank {self.cell_rank} need the masks")
        ax, ay = {}, {}
        for n in range(self.n0, self.S + 1):
            xm, ym = self._masks[n]
            ax[n] = _axis_measures(xm, self.a, rank)
            ay[n] = _axis_measures(ym, self.a, rank)
        return ax, ay

    def cell_weight_table(self, rank: Optional[int] = None) -> tuple[Fraction, ...]:
        """Exact integrals of mu over every 2D cell of the given rank."""
        rank = self.cell_rank if rank is None else rank
        if rank in self._tables:
            return self._tables[rank]
        side = self.a ** rank
        if side * side > WEIGHT_TABLE_CAP:
            raise BudgetError("weight", "weight table too fine to materialize")
        ax, ay = self._axis_tables_at(rank)
        cell = Fraction(1, side)
        table = []
        for ix in range(side):
            for iy in range(side):
                if self.n0 <= self.S:
                    w = ax[self.n0][ix] * ay[self.n0][iy]
                    prev = w
                else:
                    w = prev = cell * cell
                for n in range(self.n0 + 1, self.S + 2):
                    cur = (ax[n][ix] * ay[n][iy] if n <= self.S else cell * cell)
                    w += self.mu[n] * (cur - prev)
                    prev = cur
                table.append(w)
        out = tuple(table)
        self._tables[rank] = out
        return out

    def weighted_l1(self, g: StepFunction) -> Fraction:
        """Exact integral of |g| mu for an exact step function g."""
        if g.a != self.a or g.dim != 2:
            raise ValueError("weight and function live on different grids")
        rank = max(self.cell_rank, g.m)
        side = self.a ** rank
        if side * side > WEIGHT_TABLE_CAP:
            raise BudgetError("weight", "residual table too fine to materialize")
        table = self.cell_weight_table(rank)
        gr = g.refine(rank)
        total = F0
        for idx, v in enumerate(gr.values):
            if v:
                total += abs(Fraction(v)) * table[idx]
        return total

    def to_json(self) -> dict:
        rng = list(range(self.n0, self.S + 1))
        return {
            "format": "stratified-weight/1",
            "order": self.a,
            "S": self.S,
            "eps": frac_str(self.eps),
            "n0": self.n0,
            "mode": self.mode,
            "schedule": self.schedule,
            "h": [frac_str(v) for v in self.h],
            "mu": {str(n): frac_str(v) for n, v in sorted(self.mu.items())},
            "omega": {str(n): frac_str(self.omega[n]) for n in rng},
            "cell_rank": self.cell_rank,
            "axis_x": {str(n): [frac_str(v) for v in self.axis_x[n]] for n in rng},
            "axis_y": {str(n): [frac_str(v) for v in self.axis_y[n]] for n in rng},
            "measure_ne_one": frac_str(self.measure_ne_one),
            "certificate": self.certificate.to_json(),
        }

    @staticmethod
    def from_json(obj: dict, series: Optional[UniversalSeries] = None) -> "StratifiedWeight":
        if obj.get("format") != "stratified-weight/1":
            raise ValueError("unknown weight format")
        n0, S = obj["n0"], obj["S"]
        masks = None
        if series is not None:
            masks = {n: series.axis_masks(n) for n in range(n0, S + 1)}
        return StratifiedWeight(
            a=obj["order"],
            S=S,
            eps=parse_frac(obj["eps"]),
            n0=n0,
            mode=obj["mode"],
            schedule=obj["schedule"],
            h=tuple(parse_frac(v) for v in obj["h"]),
            mu={int(n): parse_frac(v) for n, v in obj["mu"].items()},
            omega={int(n): parse_frac(v) for n, v in obj["omega"].items()},
            cell_rank=obj["cell_rank"],
            axis_x={int(n): tuple(parse_frac(v) for v in vs)
                    for n, vs in obj["axis_x"].items()},
            axis_y={int(n): tuple(parse_frac(v) for v in vs)
                    for n, vs in obj["axis_y"].items()},
            measure_ne_one=parse_frac(obj["measure_ne_one"]),
            certificate=Certificate.from_json(obj["certificate"]),
            _masks=masks,
        )


def _axis_measures(mask: IntersectionMask1D, a: int, rank: int) -> tuple[Fraction, ...]:
    side = a ** rank
    return tuple(mask.measure_on(Fraction(i, side), Fraction(i + 1, side))
                 for i in range(side))


def build_weight(series: UniversalSeries, eps: Fraction,
                 mode: str = "certificate") -> StratifiedWeight:
    """Stratified weight for the series at deficiency budget eps: mu = 1 off
    a set of measure < eps, and small enough on each stratum that every
    partial-sum cutoff of the first n blocks stays weight-bounded."""
    eps = Fraction(eps)
    if not (0 < eps < 1):
        raise ValueError("eps must lie in (0, 1)")
    if mode not in ("certificate", "fast"):
        raise ValueError("mode must be 'certificate' or 'fast'")
    a, S = series.a, series.S
    n0 = floor_log(2, Fraction(1, eps)) + 1 if eps < 1 else 1

    cert = Certificate(title="stratified weight")
    cert.record("start-index", True,
                detail=f"n0 = floor(log2(1/eps)) + 1 = {n0}",
                note=f"eps = {frac_str(eps)}")

    # ladder constants h_s
    h: list[Fraction] = []
    for blk in series.blocks:
        hs = blk.sup + blk.c_prefix_sum + 1
        if series.schedule == "strict":
            hs += 2 * blk.c_prefix_sum
        if mode == "fast":
            hs *= 2
        h.append(hs)
    note = ""
    if series.schedule != "strict":
        note = ("compact schedule: the spherical cutoff ladder term is omitted; "
                "the weight certifies rectangular cutoffs only")
    if mode == "fast":
        note = (note + "; " if note else "") + "fast mode doubles every ladder constant"
    cert.record("ladder-constants", all(v >= 1 for v in h),
                detail="h_s dominates sup|f_s|, the block values, and every swept "
                       "partial-sum cutoff of block s, and is at least one",
                note=note)

    # kept-set intersections and strata
    masks = {n: series.axis_masks(n) for n in range(n0, S + 1)}
    omega = {n: masks[n][0].measure() * masks[n][1].measure()
             for n in range(n0, S + 1)}
    mu: dict[int, Fraction] = {}
    for n in range(n0 + 1, S + 2):
        prod = F1
        for s in range(1, min(n, S) + 1):
            prod *= h[s - 1]
        mu[n] = Fraction(1, (1 << (2 * n))) / prod

    measure_ne_one = (1 - omega[n0]) if n0 <= S else F0

    rank = series.native_rank()
    axis_x = {n: _axis_measures(masks[n][0], a, rank) for n in range(n0, S + 1)}
    axis_y = {n: _axis_measures(masks[n][1], a, rank) for n in range(n0, S + 1)}

    weight = StratifiedWeight(
        a=a, S=S, eps=eps, n0=n0, mode=mode, schedule=series.schedule,
        h=tuple(h), mu=mu, omega=omega, cell_rank=rank,
        axis_x=axis_x, axis_y=axis_y,
        measure_ne_one=measure_ne_one, certificate=cert, _masks=masks,
    )

    cert.check("support-of-deficit", measure_ne_one, "<", eps,
               reduction="complement measure of the stage-n0 kept intersection, "
                         "exact by the per-axis product formula")
    vals = sorted(mu.values())
    cert.check("ladder-positive", vals[0] if vals else F1, ">", F0)
    cert.check("ladder-bounded", vals[-1] if vals else F1, "<=", F1,
               reduction="2^2n prod h_s is at least one")
    mono = all(mu[n + 1] <= mu[n] for n in range(n0 + 1, S + 1))
    cert.record("ladder-monotone", mono and (not mu or max(mu.values()) <= F1),
                detail="stratum values decrease as strata move outward")
    incr = all(omega[n] <= omega[n + 1] for n in range(n0, S)) if n0 <= S else True
    top = (omega[S] <= F1) if n0 <= S else True
    cert.record("strata-nested", incr and top,
                detail="kept intersections grow as constraints drop")
    if n0 <= S:
        total = omega[n0]
        for n in range(n0 + 1, S + 1):
            total += omega[n] - omega[n - 1]
        total += F1 - omega[S]
        cert.check("strata-partition", total, "==", F1,
                   reduction="stratum measures telescope to the full square")
    # dual route: per-cell table mass against the closed-form global mass
    table = weight.cell_weight_table(rank)
    table_mass = sum(table, F0)
    if n0 <= S:
        global_mass = omega[n0]
        prev = omega[n0]
        for n in range(n0 + 1, S + 2):
            cur = omega[n] if n <= S else F1
            global_mass += mu[n] * (cur - prev)
            prev = cur
    else:
        global_mass = F1
    cert.check("weight-mass-consistency", table_mass, "==", global_mass,
               reduction="cell-table refinement against the telescoped strata sum",
               note="two independent evaluations of the integral of mu")
    cert.record("mode", True, detail=f"{mode} mode over the {series.schedule} schedule")
    return weight


# ---------------------------------------------------------------------------
# greedy subseries selection

@dataclass
class GreedySelection:
    target: StepFunction
    picks: tuple[int, ...]
    residuals: tuple[Fraction, ...]
    taus: tuple[Fraction, ...]
    r0: Fraction
    certificate: Certificate
    trace: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.certificate.ok

    def to_json(self) -> dict:
        return {
            "format": "greedy-selection/1",
            "target": self.target.to_json(),
            "picks": list(self.picks),
            "residuals": [frac_str(r) for r in self.residuals],
            "taus": [frac_str(t) for t in self.taus],
            "r0": frac_str(self.r0),
            "certificate": self.certificate.to_json(),
            "trace": self.trace,
        }

    @staticmethod
    def from_json(obj: dict) -> "GreedySelection":
        if obj.get("format") != "greedy-selection/1":
            raise ValueError("unknown selection format")
        return GreedySelection(
            target=StepFunction.from_json(obj["target"]),
            picks=tuple(obj["picks"]),
            residuals=tuple(parse_frac(r) for r in obj["residuals"]),
            taus=tuple(parse_frac(t) for t in obj["taus"]),
            r0=parse_frac(obj["r0"]),
            certificate=Certificate.from_json(obj["certificate"]),
            trace=list(obj.get("trace", [])),
        )


def _selection_residual(series: UniversalSeries, weight: StratifiedWeight,
                        target: StepFunction, picks: Sequence[int]) -> Fraction:
    """Certified bound on the weighted L1 distance between the partial sum of
    the picked blocks and the target: the exact weighted integral of the
    targets' discrepancy plus each picked block's off-kept-set dirt, the
    latter weighed by the deepest stratum value it can meet."""
    total = StepFunction.zero(series.a, 2, 0)
    for s in picks:
        total = total + series.block(s).f
    clean = weight.weighted_l1(total - target)
    dirt = F0
    for s in picks:
        dirt += weight.mu_for(s + 1) * series.block(s).l1_dirty
    return clean + dirt


def greedy_select(series: UniversalSeries, weight: StratifiedWeight,
                  target: StepFunction, q_max: int = 3) -> GreedySelection:
    """Greedy subseries scan: at stage q, pick the first block past the
    previous pick whose certified residual clears 2 tau_q, tau_q = 2^-2q."""
    if target.a != series.a or target.dim != 2:
        raise ValueError("target lives on a different grid")
    cert = Certificate(title="greedy subseries selection")
    r0 = weight.weighted_l1(target)
    picks: list[int] = []
    residuals: list[Fraction] = []
    taus: list[Fraction] = []
    trace: list[dict] = []

    slot = next((b.s for b in series.blocks if b.f.equals(target)), None)
    cert.record("target-slot", True,
                detail=(f"target is the stage-{slot} enumerated function"
                        if slot is not None
                        else "target is not among the enumerated stages"))

    for q in range(1, q_max + 1):
        tau = Fraction(1, 4 ** q)
        threshold = 2 * tau
        n_lo = picks[-1] + 1 if picks else weight.n0 + 2
        chosen = None
        for n in range(n_lo, series.S + 1):
            r = _selection_residual(series, weight, target, picks + [n])
            trace.append({
                "q": q,
                "candidate": n,
                "residual": frac_str(r),
                "threshold": frac_str(threshold),
                "admissible": r < threshold,
            })
            if r < threshold:
                chosen = (n, r)
                break
        if chosen is None:
            raise BudgetError(
                "selection",
                f"stage q={q}: no block beyond {n_lo - 1} certifies a residual "
                f"below {frac_str(threshold)}")
        n, r = chosen
        picks.append(n)
        residuals.append(r)
        taus.append(tau)
        cert.check(f"stage-{q}-residual", r, "<", threshold,
                   reduction="exact weighted discrepancy plus stratum-weighed dirt",
                   note=f"picked block {n}")

    cert.record("selection-increasing",
                all(x < y for x, y in zip(picks, picks[1:])),
                detail="picked stages strictly increase")
    cert.record("selection-start", picks[0] >= weight.n0 + 2,
                detail="the first pick lies beyond the weight's unit stratum, "
                       "so every picked block's dirt meets only tamed strata")
    return GreedySelection(target, tuple(picks), tuple(residuals), tuple(taus),
                           r0, cert, trace)


# ---------------------------------------------------------------------------
# convergence monitor

@dataclass
class MonitorTrace:
    rows: list[dict]
    legend: dict[str, dict]
    certificate: Certificate

    @property
    def ok(self) -> bool:
        return self.certificate.ok

    def to_csv(self) -> str:
        lines = ["kind,cutoff,q,error,bound,pass"]
        for r in self.rows:
            lines.append(
                f"{r['kind']},{r['cutoff']},{r['q']},{frac_str(r['error'])},"
                f"{frac_str(r['bound'])},{'pass' if r['passed'] else 'fail'}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {
            "format": "convergence-monitor/1",
            "rows": [
                {**r, "error": frac_str(r["error"]), "bound": frac_str(r["bound"])}
                for r in self.rows
            ],
            "legend": self.legend,
            "certificate": self.certificate.to_json(),
        }


def monitor_convergence(series: UniversalSeries, weight: StratifiedWeight,
                        selection: GreedySelection,
                        qs: Sequence[int] = (1, 2)) -> MonitorTrace:
    """Bound the weighted error of every swept partial-sum cutoff class of
    the selected blocks against 21 tau_q.

    Cutoffs strictly between blocks reduce to the certified stage residuals.
    Cutoffs interior to block n_q decompose into the previous residual, the
    block's integral family bound over the kept set (at most twice the block
    mass plus the stage budget), and its off-kept-set part (block sup times
    the deepest reachable stratum value times the excluded measure).  Window
    positions are astronomically large, so classes carry symbolic labels;
    the legend maps each label to the exact window encodings.
    """
    rows: list[dict] = []
    legend: dict[str, dict] = {}
    cert = Certificate(title="convergence monitor")

    for q in qs:
        if not (1 <= q <= len(selection.picks)):
            raise ValueError(f"stage q={q} was never selected")
        s = selection.picks[q - 1]
        blk = series.block(s)
        bound = Fraction(21, 4 ** q)
        r_prev = selection.r0 if q == 1 else selection.residuals[q - 2]
        r_cur = selection.residuals[q - 1]

        def add(kind: str, cutoff: str, error: Fraction):
            rows.append({"kind": kind, "cutoff": cutoff, "q": q,
                         "error": error, "bound": bound, "passed": error < bound})

        add("boundary", f"below-block-{s}", r_prev)
        interior = (r_prev + 2 * blk.mass + blk.eps
                    + weight.h[s - 1] * weight.mu_for(s + 1) * (1 - blk.measure))
        for nu, (xb, yb) in enumerate(zip(blk.x_blocks, blk.y_blocks), 1):
            label = f"block{s}-piece{nu}"
            legend[label] = {
                "row-window": [start_to_json(xb.N0), xb.window_end().to_json()],
                "col-window": [start_to_json(yb.N0), yb.window_end().to_json()],
            }
            for cls in ("row-band", "col-band", "complete"):
                add("rect", f"{label}-{cls}", interior)
            if series.schedule == "strict":
                for cls in ("sph-inner", "sph-straddle"):
                    add("sph", f"{label}-{cls}", interior)
        add("boundary", f"beyond-block-{s}", r_cur)

        worst = max(r["error"] for r in rows if r["q"] == q)
        cert.check(f"stage-{q}-worst-cutoff", worst, "<", bound,
                   reduction="stage residuals at the block boundaries; residual "
                             "plus kept-set family bound plus weighed excluded "
                             "part inside the block",
                   note=f"block {s}, {sum(1 for r in rows if r['q'] == q)} cutoff classes")

    cert.record("cutoff-classes", True,
                detail=f"{len(rows)} swept classes over stages {list(qs)}; each class "
                       "bound is uniform over its window segment",
                note="window positions exceed any literal sweep; classes are labeled "
                     "symbolically and the legend pins their exact window encodings")
    if series.schedule != "strict":
        cert.record("spherical-classes", True,
                    detail="compact schedule certifies rectangular cutoff classes only")
    return MonitorTrace(rows, legend, cert)
