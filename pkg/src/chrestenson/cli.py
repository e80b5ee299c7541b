"""Batch front door: evaluation tables, transforms, certified approximation
runs, universal-series builds, greedy selection, and trace export.

Every subcommand reads its settings from an optional single config file
(JSON always; TOML when the interpreter ships ``tomllib``) plus explicit
flag overrides.  Environment variables are never consulted, outputs are
canonical JSON/CSV, and reruns with the same configuration are
byte-identical.

Exit codes: 0 all certificates pass; 2 certificate failure; 3 construction
budget exhausted; 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, fields, replace
from fractions import Fraction

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    tomllib = None

from .approx1d import (
    BudgetError,
    Lemma33Request,
    lemma33_construct,
    lemma33_reverify,
)
from .approx2d import (
    Lemma34Request,
    Lemma34Result,
    Lemma35Request,
    Lemma35Result,
    lemma34_construct,
    lemma34_verify,
    lemma35_construct,
    lemma35_verify,
)
from .exactnum import parse_frac, sc_eq, sc_from_json, sc_to_json
from .transform import fct_forward, fct_forward_naive, fct_inverse
from .universal import (
    GreedySelection,
    StratifiedWeight,
    UniversalSeries,
    build_universal,
    build_weight,
    greedy_select,
    make_enumerator,
    monitor_convergence,
)
from .walsh import cell_exponent

EXIT_OK = 0
EXIT_CERT = 2
EXIT_BUDGET = 3
EXIT_USAGE = 64

TABLE_CELL_CAP = 1 << 12


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so main() owns exit codes."""

    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# run configuration

@dataclass(frozen=True)
class RunConfig:
    order: int = 2
    mode: str = "certificate"  # certificate | fast
    schedule: str = "strict"   # strict | compact
    S: int = 2
    m_max: int = 7
    d_max: int = 3
    q_max: int = 3
    retry: int = 4
    seed: int = 0
    out: str = "."
    threads: int = 0           # 0 = all available cores

    def validate(self) -> "RunConfig":
        if self.order < 2:
            raise UsageError(f"order must be at least 2, got {self.order}")
        if self.mode not in ("certificate", "fast"):
            raise UsageError(f"mode must be 'certificate' or 'fast', got {self.mode!r}")
        if self.schedule not in ("strict", "compact"):
            raise UsageError(f"schedule must be 'strict' or 'compact', got {self.schedule!r}")
        for name in ("S", "m_max", "d_max", "q_max"):
            if getattr(self, name) < 1:
                raise UsageError(f"budget {name} must be positive")
        if self.retry < 0 or self.seed < 0 or self.threads < 0:
            raise UsageError("retry, seed, and threads must be non-negative")
        return self

    def resolved_threads(self) -> int:
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)


def _load_config_file(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as err:
        raise UsageError(f"cannot read config file: {err}")
    if path.endswith(".toml"):
        if tomllib is None:
            raise UsageError(
                "TOML config files need Python 3.11+ (tomllib); use a JSON config here")
        try:
            return tomllib.loads(raw.decode())
        except tomllib.TOMLDecodeError as err:
            raise UsageError(f"invalid TOML config: {err}")
    try:
        return json.loads(raw.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise UsageError(f"invalid JSON config: {err}")


def _build_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        data = _load_config_file(args.config)
        known = {f.name for f in fields(RunConfig)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        cfg = replace(cfg, **data)
    overrides = {}
    for flag, field_name in (("order", "order"), ("mode", "mode"),
                             ("schedule", "schedule"), ("out", "out"),
                             ("threads", "threads")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field_name] = value
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg.validate()


# ---------------------------------------------------------------------------
# output plumbing

def _out_path(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.out, exist_ok=True)
    return os.path.join(cfg.out, name)


def _write_json(path: str, obj: dict) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=2) + "\n")
    print(f"wrote {path}")


def _write_text(path: str, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)
    print(f"wrote {path}")


def _load_json(path: str, role: str) -> dict:
    if not os.path.exists(path):
        raise UsageError(f"missing {role} file: {path}")
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise UsageError(f"cannot load {role} file {path}: {err}")


def _report(cert) -> int:
    """Print a certificate verdict and map it to an exit code."""
    entries = cert.entries
    fails = cert.failures()
    if not fails:
        print(f"certificate: PASS ({len(entries)} checks)")
        return EXIT_OK
    names = ", ".join(e.name for e in fails[:8])
    more = "" if len(fails) <= 8 else f" (+{len(fails) - 8} more)"
    print(f"certificate: FAIL ({len(fails)}/{len(entries)}): {names}{more}",
          file=sys.stderr)
    return EXIT_CERT


# ---------------------------------------------------------------------------
# walsh-table

def cmd_walsh_table(cfg: RunConfig, args) -> int:
    a, n_max, rank = cfg.order, args.n_max, args.rank
    if n_max < 0 or rank < 0:
        raise UsageError("n-max and rank must be non-negative")
    cells = a ** rank
    if cells > TABLE_CELL_CAP:
        raise UsageError(f"a^rank = {cells} exceeds the table cap {TABLE_CELL_CAP}")
    if n_max >= cells:
        raise UsageError(
            f"n-max must stay below a^rank = {cells}: higher-index functions "
            "are not constant on rank-" + str(rank) + " cells")
    lines = ["n," + ",".join(f"cell{j}" for j in range(cells))]
    for n in range(n_max + 1):
        row = [str(cell_exponent(a, rank, n, j)) for j in range(cells)]
        lines.append(f"{n}," + ",".join(row))
    _write_text(_out_path(cfg, "walsh_table.csv"), "\n".join(lines) + "\n")
    print(f"table: {n_max + 1} functions x {cells} cells, entries are "
          f"exponents k of omega_{a}^k")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fct

def _exact_entry(v):
    if isinstance(v, dict):
        return sc_from_json(v)
    return parse_frac(v) if isinstance(v, str) else Fraction(v)


def _complex_entry(v):
    if isinstance(v, list):
        return complex(v[0], v[1])
    return complex(float(Fraction(v)) if isinstance(v, str) else v)


def _fct_exact_one(values, a: int, inverse: bool):
    vec = [_exact_entry(v) for v in values]
    if inverse:
        out = fct_inverse(vec, a, "exact")
        return [sc_to_json(v) for v in out], None
    out = fct_forward(vec, a, "exact")
    naive = fct_forward_naive(vec, a, "exact")
    back = fct_inverse(out, a, "exact")
    checks = {
        "oracle-agreement": all(sc_eq(x, y) for x, y in zip(out, naive)),
        "round-trip-identity": all(sc_eq(x, y) for x, y in zip(back, vec)),
    }
    return [sc_to_json(v) for v in out], checks


def _fct_fast_one(values, a: int, inverse: bool):
    fn = fct_inverse if inverse else fct_forward
    out = fn([_complex_entry(v) for v in values], a, "fast")
    return [[z.real, z.imag] for z in out]


def cmd_fct(cfg: RunConfig, args) -> int:
    a = cfg.order
    data = _load_json(args.input, "input")
    batch = data.get("batch")
    if batch is None:
        if "values" not in data:
            raise UsageError("input file needs a 'values' or 'batch' entry")
        batch = [data["values"]]
    if not batch:
        raise UsageError("input batch is empty")
    length = len(batch[0])
    m = 0
    while a ** m < length:
        m += 1
    if a ** m != length or any(len(v) != length for v in batch):
        raise UsageError(f"every vector must have length a^m, got {length}")
    if m > cfg.m_max:
        raise UsageError(f"rank {m} exceeds the configured budget m_max = {cfg.m_max}")

    out = {
        "format": "fct/1",
        "order": a,
        "rank": m,
        "mode": cfg.mode,
        "direction": "inverse" if args.inverse else "forward",
    }
    all_ok = True
    if cfg.mode == "certificate":
        vectors = []
        checks = []
        for values in batch:
            enc, chk = _fct_exact_one(values, a, args.inverse)
            vectors.append(enc)
            if chk is not None:
                checks.append(chk)
                all_ok &= all(chk.values())
        out["vectors"] = vectors
        if checks:
            out["checks"] = checks
    else:
        threads = min(cfg.resolved_threads(), len(batch))
        if threads > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(max_workers=threads) as pool:
                vectors = list(pool.map(
                    lambda v: _fct_fast_one(v, a, args.inverse), batch))
        else:
            vectors = [_fct_fast_one(v, a, args.inverse) for v in batch]
        out["vectors"] = vectors
    _write_json(_out_path(cfg, "fct.json"), out)
    if not all_ok:
        print("certificate: FAIL: transform oracle disagreement", file=sys.stderr)
        return EXIT_CERT
    print(f"transformed {len(batch)} vector(s) of length {length}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# lemma subcommands

def cmd_lemma33(cfg: RunConfig, args) -> int:
    req = Lemma33Request.from_json(_load_json(args.request, "request"))
    if args.verify:
        cert = lemma33_reverify(req, _load_json(args.verify, "result"))
        _write_json(_out_path(cfg, "lemma33_verify.json"), cert.to_json())
        return _report(cert)
    res = lemma33_construct(req, retry_budget=cfg.retry)
    _write_json(_out_path(cfg, "lemma33_result.json"), res.to_json())
    _write_json(_out_path(cfg, "lemma33_certificate.json"), res.certificate.to_json())
    return _report(res.certificate)


def cmd_lemma34(cfg: RunConfig, args) -> int:
    req = Lemma34Request.from_json(_load_json(args.request, "request"))
    if args.verify:
        result = Lemma34Result.from_json(_load_json(args.verify, "result"))
        cert = lemma34_verify(req, result)
        _write_json(_out_path(cfg, "lemma34_verify.json"), cert.to_json())
        return _report(cert)
    res = lemma34_construct(req, schedule=cfg.schedule)
    _write_json(_out_path(cfg, "lemma34_result.json"), res.to_json())
    _write_json(_out_path(cfg, "lemma34_certificate.json"), res.certificate.to_json())
    return _report(res.certificate)


def cmd_lemma35(cfg: RunConfig, args) -> int:
    req = Lemma35Request.from_json(_load_json(args.request, "request"))
    if args.verify:
        result = Lemma35Result.from_json(_load_json(args.verify, "result"))
        cert = lemma35_verify(req, result, threads=cfg.resolved_threads())
        _write_json(_out_path(cfg, "lemma35_verify.json"), cert.to_json())
        return _report(cert)
    res = lemma35_construct(req, schedule=cfg.schedule)
    _write_json(_out_path(cfg, "lemma35_result.json"), res.to_json())
    _write_json(_out_path(cfg, "lemma35_certificate.json"), res.certificate.to_json())
    return _report(res.certificate)


# ---------------------------------------------------------------------------
# universal-series subcommands

MANIFEST = "universal_manifest.json"
WEIGHT = "universal_weight.json"
SELECTION = "universal_selection.json"


def _load_series(cfg: RunConfig) -> UniversalSeries:
    return UniversalSeries.from_manifest(
        _load_json(os.path.join(cfg.out, MANIFEST), "series manifest"))


def _load_weight(cfg: RunConfig, series: UniversalSeries) -> StratifiedWeight:
    return StratifiedWeight.from_json(
        _load_json(os.path.join(cfg.out, WEIGHT), "weight"), series)


def cmd_universal_build(cfg: RunConfig, args) -> int:
    series = build_universal(cfg.order, cfg.S, cfg.schedule,
                             enumerator=args.enumerator)
    _write_json(_out_path(cfg, MANIFEST), series.to_manifest())
    print(f"built {cfg.S} blocks at order {cfg.order} ({cfg.schedule} schedule, "
          f"{series.enumerator} enumeration)")
    return _report(series.certificate)


def cmd_universal_weight(cfg: RunConfig, args) -> int:
    series = _load_series(cfg)
    weight = build_weight(series, parse_frac(args.eps), mode=cfg.mode)
    _write_json(_out_path(cfg, WEIGHT), weight.to_json())
    print(f"weight: n0 = {weight.n0}, {len(weight.mu)} strata beyond the unit set")
    return _report(weight.certificate)


def cmd_universal_approx(cfg: RunConfig, args) -> int:
    series = _load_series(cfg)
    weight = _load_weight(cfg, series)
    enum = make_enumerator(series.enumerator, series.a)
    target = enum.function(args.target_slot)
    selection = greedy_select(series, weight, target, cfg.q_max)
    _write_json(_out_path(cfg, SELECTION), selection.to_json())
    picks = ", ".join(str(s) for s in selection.picks)
    print(f"selected blocks [{picks}] for slot {args.target_slot} "
          f"over {cfg.q_max} accuracy stages")
    return _report(selection.certificate)


def cmd_universal_monitor(cfg: RunConfig, args) -> int:
    series = _load_series(cfg)
    weight = _load_weight(cfg, series)
    selection = GreedySelection.from_json(
        _load_json(os.path.join(cfg.out, SELECTION), "selection"))
    try:
        qs = tuple(int(q) for q in args.stages.split(","))
    except ValueError:
        raise UsageError(f"--stages must be comma-separated integers, got {args.stages!r}")
    try:
        trace = monitor_convergence(series, weight, selection, qs)
    except ValueError as err:
        raise UsageError(str(err))
    _write_text(_out_path(cfg, "universal_monitor.csv"), trace.to_csv())
    _write_json(_out_path(cfg, "universal_monitor.json"), trace.to_json())
    passed = sum(1 for r in trace.rows if r["passed"])
    print(f"monitored {len(trace.rows)} cutoff classes over stages {list(qs)}: "
          f"{passed} within bounds")
    return _report(trace.certificate)


# ---------------------------------------------------------------------------
# parser

def _make_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="FILE",
                        help="single JSON (or, on 3.11+, TOML) run-config file")
    common.add_argument("--order", type=int, metavar="A", help="system order a >= 2")
    common.add_argument("--mode", choices=("certificate", "fast"))
    common.add_argument("--schedule", choices=("strict", "compact"))
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--threads", type=int, metavar="N",
                        help="cap internal parallelism (default: all cores)")

    p = _Parser(prog="chrestenson",
                description="Generalized Walsh systems: tables, transforms, "
                            "certified approximation, universal series")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    q = sub.add_parser("walsh-table", parents=[common],
                       help="CSV of function values (as root-of-unity exponents) per cell")
    q.add_argument("--n-max", type=int, required=True)
    q.add_argument("--rank", type=int, required=True)
    q.set_defaults(func=cmd_walsh_table)

    q = sub.add_parser("fct", parents=[common],
                       help="forward/inverse fast transform of value vectors")
    q.add_argument("input", help="JSON file with 'values' or 'batch'")
    q.add_argument("--inverse", action="store_true")
    q.set_defaults(func=cmd_fct)

    for kind, fn in (("lemma33", cmd_lemma33), ("lemma34", cmd_lemma34),
                     ("lemma35", cmd_lemma35)):
        q = sub.add_parser(kind, parents=[common],
                           help=f"run the {kind[-2:]} construction (or re-verify a result)")
        q.add_argument("request", help="request JSON file")
        q.add_argument("--verify", metavar="RESULT",
                       help="re-verify a stored result file instead of constructing")
        q.set_defaults(func=fn)

    q = sub.add_parser("universal-build", parents=[common],
                       help="assemble the first S series blocks")
    q.add_argument("--enumerator", choices=("thin", "census"), default="thin")
    q.set_defaults(func=cmd_universal_build)

    q = sub.add_parser("universal-weight", parents=[common],
                       help="synthesize the stratified weight for a built series")
    q.add_argument("--eps", default="1/4", help="deficiency budget (default 1/4)")
    q.set_defaults(func=cmd_universal_weight)

    q = sub.add_parser("universal-approx", parents=[common],
                       help="greedy subseries selection toward an enumerated target")
    q.add_argument("--target-slot", type=int, default=3,
                   help="enumeration slot of the planted target (default 3)")
    q.set_defaults(func=cmd_universal_approx)

    q = sub.add_parser("universal-monitor", parents=[common],
                       help="bound every swept partial-sum cutoff class; emit CSV")
    q.add_argument("--stages", default="1,2",
                   help="comma-separated accuracy stages (default 1,2)")
    q.set_defaults(func=cmd_universal_monitor)
    return p


def main(argv=None) -> int:
    parser = _make_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        cfg = _build_config(args)
        return args.func(cfg, args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except BudgetError as err:
        print(f"budget exhausted [{err.condition}]: {err}", file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
