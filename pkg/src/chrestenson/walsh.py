"""Generalized Rademacher and Walsh (Chrestenson) characters of order a >= 2.

The order-a Rademacher function of rank n is

    phi_n(x) = omega_a ** (floor(a^(n+1) * x) mod a),      omega_a = e^(2*pi*i/a),

and the Walsh system is indexed by n = sum_j alpha_j * a^(n_j) (the base-a
digit expansion, alpha_j in 1..a-1, n_1 > n_2 > ...):

    psi_0 = 1,    psi_n = prod_j phi_(n_j) ** alpha_j.

Everything here works in *exponents modulo a*; actual root-of-unity values
are materialized on demand as :class:`~chrestenson.exactnum.QCyc` elements.
Pointwise evaluation never expands a^(n+1), so ranks with millions of bits
are fine: the needed digit of x is extracted with a modular power.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence, Union

import numpy as np

from .exactnum import QCyc, Rat, floor_log


def digits(n: int, a: int, length: int | None = None) -> list[int]:
    """Base-a digits of n >= 0, little-endian; padded/truncated to ``length``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    out = []
    while n:
        n, d = divmod(n, a)
        out.append(d)
    if length is not None:
        out = out[:length] + [0] * (length - len(out))
    return out


def digit_sum(a: int, n: int) -> int:
    return sum(digits(n, a))


@dataclass(frozen=True)
class WalshIndex:
    """Index n decomposed as [(n_1, alpha_1), ...], ranks strictly decreasing."""

    a: int
    pairs: tuple[tuple[int, int], ...]

    @staticmethod
    def decompose(a: int, n: int) -> "WalshIndex":
        if a < 2:
            raise ValueError("order must be >= 2")
        if n < 0:
            raise ValueError("index must be >= 0")
        pairs = [
            (rank, d)
            for rank, d in enumerate(digits(n, a))
            if d != 0
        ]
        pairs.reverse()  # descending rank
        return WalshIndex(a, tuple(pairs))

    @property
    def n(self) -> int:
        return sum(alpha * self.a ** rank for rank, alpha in self.pairs)

    @property
    def constancy_rank(self) -> int:
        """Smallest m such that psi_n is constant on rank-m cells: n_1 + 1."""
        if not self.pairs:
            return 0
        return self.pairs[0][0] + 1

    def __iter__(self):
        return iter(self.pairs)


def constancy_rank(a: int, n: int) -> int:
    if n == 0:
        return 0
    return floor_log(a, n) + 1


def _frac_part(x: Fraction) -> Fraction:
    return x - (x.numerator // x.denominator)


def rademacher_exponent(a: int, n: int, x: Rat) -> int:
    """Exponent e in phi_n(x) = omega_a^e, i.e. floor(a^(n+1)*x) mod a.

    Computed as floor((a^(n+1)*u mod (a*v)) / v) for x = u/v, via a modular
    power -- sound for ranks n far too large to expand a^(n+1).
    """
    if a < 2 or n < 0:
        raise ValueError("need order >= 2 and rank >= 0")
    x = _frac_part(Fraction(x))
    u, v = x.numerator, x.denominator
    av = a * v
    return (pow(a, n + 1, av) * u % av) // v


def walsh_exponent(a: int, n: int, x: Rat) -> int:
    """Exponent e in psi_n(x) = omega_a^e."""
    idx = WalshIndex.decompose(a, n)
    e = 0
    for rank, alpha in idx.pairs:
        e += alpha * rademacher_exponent(a, rank, x)
    return e % a


def walsh_value(a: int, n: int, x: Rat) -> QCyc:
    return QCyc.root(a, walsh_exponent(a, n, x))


def rademacher_value(a: int, n: int, x: Rat) -> QCyc:
    return QCyc.root(a, rademacher_exponent(a, n, x))


def cell_exponent(a: int, m: int, n: int, i: int) -> int:
    """Exponent of psi_n on rank-m cell i = [i*a^-m, (i+1)*a^-m).

    Requires constancy: n < a^m.  Equals sum_l n_l * i_(m-1-l) mod a with
    n_l, i_l the little-endian base-a digits -- the digit-reversed bilinear
    form that also drives the fast transform's index reversal.
    """
    if not (0 <= i < a ** m):
        raise ValueError("cell index out of range")
    if n >= a ** m:
        raise ValueError("character not constant at this rank")
    nd = digits(n, a, m)
    idg = digits(i, a, m)
    return sum(nd[l] * idg[m - 1 - l] for l in range(m)) % a


def exponent_table(a: int, m: int) -> np.ndarray:
    """(a^m, a^m) table T[n, i] = exponent of psi_n on rank-m cell i."""
    N = a ** m
    digs = np.empty((N, m), dtype=np.int64)
    idx = np.arange(N)
    for l in range(m):
        idx, digs[:, l] = np.divmod(idx, a)
    return (digs @ digs[:, ::-1].T) % a


def exponent_row(a: int, m: int, n: int) -> np.ndarray:
    """Exponents of psi_n across all rank-m cells, as a length-a^m vector."""
    N = a ** m
    if n >= N:
        raise ValueError("character not constant at this rank")
    nd = np.array(digits(n, a, m), dtype=np.int64)
    digs = np.empty((N, m), dtype=np.int64)
    idx = np.arange(N)
    for l in range(m):
        idx, digs[:, l] = np.divmod(idx, a)
    return (digs[:, ::-1] @ nd) % a


def root_powers(a: int) -> list[QCyc]:
    return [QCyc.root(a, k) for k in range(a)]
