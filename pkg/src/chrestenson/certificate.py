"""Verification certificates: named inequality/equality checks with sound
directed comparisons.

Every check compares two quantities given either exactly (int/Fraction) or as
directed enclosures ``(lo, hi)``.  A strict/weak inequality passes only when
it holds for the *worst* ends of the enclosures; an equality passes only when
both sides are exact and equal.  Overlapping enclosures therefore fail the
check (conservative), never pass it; the entry records which reduction or
closed form produced each side.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

from .exactnum import Ivl, ivl_str

Cmp = Union[int, Fraction, Ivl]

_RELATIONS = ("<", "<=", "==", ">=", ">")


def _as_ivl(x: Cmp) -> Ivl:
    if isinstance(x, tuple):
        lo, hi = Fraction(x[0]), Fraction(x[1])
        if lo > hi:
            raise ValueError("enclosure with lo > hi")
        return (lo, hi)
    x = Fraction(x)
    return (x, x)


def sound_compare(lhs: Cmp, relation: str, rhs: Cmp) -> bool:
    """True only when the relation is certain given the enclosures."""
    if relation not in _RELATIONS:
        raise ValueError(f"unknown relation {relation!r}")
    llo, lhi = _as_ivl(lhs)
    rlo, rhi = _as_ivl(rhs)
    if relation == "<":
        return lhi < rlo
    if relation == "<=":
        return lhi <= rlo
    if relation == ">":
        return llo > rhi
    if relation == ">=":
        return llo >= rhi
    return llo == lhi == rlo == rhi


@dataclass(frozen=True)
class CertEntry:
    name: str
    lhs: str
    relation: str
    rhs: str
    passed: bool
    reduction: str = ""
    note: str = ""

    def to_json(self) -> dict:
        out = {
            "name": self.name,
            "lhs": self.lhs,
            "relation": self.relation,
            "rhs": self.rhs,
            "passed": self.passed,
        }
        if self.reduction:
            out["reduction"] = self.reduction
        if self.note:
            out["note"] = self.note
        return out

    @staticmethod
    def from_json(obj: dict) -> "CertEntry":
        return CertEntry(
            name=obj["name"],
            lhs=obj["lhs"],
            relation=obj["relation"],
            rhs=obj["rhs"],
            passed=obj["passed"],
            reduction=obj.get("reduction", ""),
            note=obj.get("note", ""),
        )


@dataclass
class Certificate:
    """Ordered list of checks; ``ok`` iff every check passed."""

    title: str = ""
    entries: list[CertEntry] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(e.passed for e in self.entries)

    def check(
        self,
        name: str,
        lhs: Cmp,
        relation: str,
        rhs: Cmp,
        reduction: str = "",
        note: str = "",
    ) -> bool:
        passed = sound_compare(lhs, relation, rhs)
        self.entries.append(
            CertEntry(
                name=name,
                lhs=ivl_str(_as_ivl(lhs)),
                relation=relation,
                rhs=ivl_str(_as_ivl(rhs)),
                passed=passed,
                reduction=reduction,
                note=note,
            )
        )
        return passed

    def record(self, name: str, passed: bool, detail: str = "", reduction: str = "", note: str = "") -> bool:
        """Record a boolean check whose sides are not simple scalars."""
        self.entries.append(
            CertEntry(
                name=name,
                lhs=detail or ("holds" if passed else "violated"),
                relation="assert",
                rhs="",
                passed=bool(passed),
                reduction=reduction,
                note=note,
            )
        )
        return bool(passed)

    def extend(self, other: "Certificate", prefix: str = "") -> None:
        for e in other.entries:
            self.entries.append(
                CertEntry(
                    name=f"{prefix}{e.name}",
                    lhs=e.lhs,
                    relation=e.relation,
                    rhs=e.rhs,
                    passed=e.passed,
                    reduction=e.reduction,
                    note=e.note,
                )
            )

    def failures(self) -> list[CertEntry]:
        return [e for e in self.entries if not e.passed]

    def to_json(self) -> dict:
        return {
            "title": self.title,
            "ok": self.ok,
            "entries": [e.to_json() for e in self.entries],
        }

    @staticmethod
    def from_json(obj: dict) -> "Certificate":
        cert = Certificate(title=obj.get("title", ""))
        cert.entries = [CertEntry.from_json(e) for e in obj.get("entries", [])]
        return cert
