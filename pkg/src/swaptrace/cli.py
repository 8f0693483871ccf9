"""Batch command line front end.

Exit codes: 0 on success, 1 on bad input (missing or malformed files and
arguments), 2 on internal errors.  Machine-readable reports go to files in
``--out``; stdout carries a short human summary.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .amm_sim import InvalidScenario, Scenario, random_scenario, scenario_rates, simulate, strategy_scenario
from .attack_detect import DetectionParams, TraceIndex, classify_account, indicator_csv, indicators_for_report
from .crosschain import bancorx_trace, delay_stats, groups_csv, join_crosschain, records_from_calls
from .ingest import IngestError, dump_trace, load_registry, parse_trace
from .lost_tokens import detect_lost, findings_csv, standalone_deposits, summarize
from .matchmaker import MatchParams
from .oracle import MAX_WINDOW, oracle_check
from .pipeline import detect, split_streams
from .violations import RateTable, aggregate, usd_str

log = logging.getLogger("swaptrace")


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise InputError(message)


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


def _need(path: Optional[str], what: str) -> Path:
    if not path:
        raise InputError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} file not found: {path}")
    return p


def _match_params(args) -> MatchParams:
    try:
        return MatchParams(tolerance_pct=Fraction(str(args.tolerance_pct)), max_group=int(args.max_group),
                           timeout_blocks=int(args.timeout_blocks))
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _detection_params(args) -> DetectionParams:
    if not args.params:
        return DetectionParams()
    try:
        return DetectionParams.from_json(_need(args.params, "params").read_text())
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise InputError(f"bad params file: {exc}") from None


def _rates(args) -> Optional[RateTable]:
    if not args.rates:
        return None
    try:
        return RateTable.load(_need(args.rates, "rates"))
    except (ValueError, KeyError) as exc:
        raise InputError(f"bad rates file: {exc}") from None


def _load(args):
    trace = _need(args.trace, "trace")
    registry = _need(args.registry, "registry")
    try:
        return parse_trace(trace), load_registry(registry)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise InputError(f"bad registry: {exc}") from None


def cmd_detect(args) -> int:
    records, registry = _load(args)
    params = _match_params(args)
    report = detect(records, registry, params, jobs=args.jobs)
    table = aggregate(report, _rates(args))
    out = Path(args.out)
    _write(out, "report.json", json.dumps(report.to_dict(), indent=2) + "\n")
    _write(out, f"summary.{args.format}", table.to_json() if args.format == "json" else table.to_csv())
    print(f"records {report.record_count}  matches {len(report.matches)}  violations {len(report.violations)}")
    for row in table.rows:
        if row.count:
            print(f"  {row.kind:<12} {row.count:>8}  usd {usd_str(row.total_value_usd)}"
                  + (f"  unvalued {row.unvalued}" if row.unvalued else ""))
    if args.oracle_compare:
        for (pool, token), (deps, wds) in split_streams(records, registry).items():
            if len(deps) > MAX_WINDOW or len(wds) > MAX_WINDOW:
                print(f"oracle {pool} {token} skipped: more than {MAX_WINDOW} records per side")
                continue
            diff = oracle_check(deps, wds, params)
            print(f"oracle {pool} {token} violation_delta {diff.violation_delta}")
    return 0


def _scenario(args) -> Scenario:
    if args.scenario:
        try:
            sc = Scenario.load(_need(args.scenario, "scenario"))
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise InputError(f"bad scenario: {exc}") from None
        if args.seed is not None:
            sc.seed = int(args.seed)
        return sc
    seed = int(args.seed or 0)
    if args.kind == "strategy":
        return strategy_scenario(seed)
    return random_scenario(seed, target_events=int(args.events))


def cmd_simulate(args) -> int:
    out = Path(args.out)
    if args.kind == "bancorx":
        b = bancorx_trace(int(args.seed or 0), n_swaps=int(args.swaps))
        _write(out, "source.jsonl", dump_trace(b.source))
        _write(out, "destination.jsonl", dump_trace(b.destination))
        print(f"xTransfers {len(b.source)}  reports {len(b.destination)}  short of quorum {len(b.underwater_txids)}")
        return 0
    sc = _scenario(args)
    try:
        res = simulate(sc)
    except InvalidScenario as exc:
        raise InputError(str(exc)) from None
    _write(out, "trace.jsonl", res.trace)
    _write(out, "labels.jsonl", res.labels_jsonl())
    _write(out, "registry.json", json.dumps(res.registry.to_dict(), indent=2) + "\n")
    _write(out, "scenario.json", json.dumps(sc.to_dict(), indent=2) + "\n")
    _write(out, "rates.csv", scenario_rates(sc))
    counts: dict[str, int] = {}
    for lb in res.labels:
        counts[lb.label.value] = counts.get(lb.label.value, 0) + 1
    print(f"records {len(res.records)}  " + "  ".join(f"{k} {v}" for k, v in sorted(counts.items())))
    return 0


def cmd_indicators(args) -> int:
    records, registry = _load(args)
    report = detect(records, registry, _match_params(args), jobs=args.jobs)
    idx = TraceIndex(records)
    vectors = indicators_for_report(report, idx)
    params = _detection_params(args)
    _write(Path(args.out), "indicators.csv", indicator_csv(vectors, params, args.scavenger_spread))
    for acct, v in sorted(vectors.items()):
        lab = classify_account(v, params, args.scavenger_spread)
        if lab.label.is_attacker:
            print(f"{acct} {lab.label.value} {','.join(sorted(lab.fired_indicators))}")
    print(f"accounts {len(vectors)}")
    return 0


def cmd_lost(args) -> int:
    records, registry = _load(args)
    report = detect(records, registry, _match_params(args), jobs=args.jobs)
    privileged = [a for a in (args.privileged or "").split(",") if a]
    tol = Fraction(str(args.value_tolerance_pct)) if args.value_tolerance_pct is not None else None
    findings = detect_lost(standalone_deposits(report.violations), records, privileged, registry,
                           _rates(args), tol)
    _write(Path(args.out), "lost_tokens.csv", findings_csv(findings, registry))
    s = summarize(findings)
    mean = f"{float(s.mean_block_diff):.2f}" if s.mean_block_diff is not None else "-"
    print(f"lost-token findings {s.count}  usd {usd_str(s.total_usd)}  mean block diff {mean}")
    return 0


def cmd_crosschain(args) -> int:
    paths = [p for p in (args.source, args.destination, args.trace) if p]
    if not paths:
        raise InputError("--source/--destination or --trace is required")
    calls = []
    for p in paths:
        calls.extend(parse_trace(_need(p, "trace")))
    src, dst = records_from_calls(calls)
    if args.quorum < 1:
        raise InputError("--quorum must be at least 1")
    tol = Fraction(str(args.value_tolerance_pct)) if args.value_tolerance_pct is not None else None
    result = join_crosschain(src, dst, args.quorum, tol)
    stats = delay_stats(result)
    out = Path(args.out)
    _write(out, "crosschain.csv", groups_csv(result))
    _write(out, "delays.csv", stats.to_csv())
    print(f"xTransfers {len(src)}  minted {len(result.matched)}  underwater {len(result.underwater)}  "
          f"orphans {len(result.orphans)}")
    if stats.total:
        print(f"reports under 10 min {float(stats.fraction_under(10)):.4%}  max delay {stats.max_delay} s")
    if stats.negative:
        print(f"negative delays {len(stats.negative)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="swaptrace", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--config", help="key=value file supplying option defaults")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, trace: bool = True):
        if trace:
            sp.add_argument("--trace")
            sp.add_argument("--registry")
        sp.add_argument("--out", default="out")
        sp.add_argument("--jobs", type=int, default=1)

    def matching(sp):
        sp.add_argument("--tolerance-pct", default="10")
        sp.add_argument("--max-group", type=int, default=2)
        sp.add_argument("--timeout-blocks", type=int, default=MatchParams().timeout_blocks)
        sp.add_argument("--rates")

    d = sub.add_parser("detect", help="match deposits to withdrawals and report violations")
    common(d)
    matching(d)
    d.add_argument("--format", choices=["json", "csv"], default="json")
    d.add_argument("--oracle-compare", action="store_true")
    d.set_defaults(func=cmd_detect)

    s = sub.add_parser("simulate", help="generate a labeled trace")
    common(s, trace=False)
    s.add_argument("--scenario")
    s.add_argument("--seed", type=int)
    s.add_argument("--kind", choices=["mixed", "strategy", "bancorx"], default="mixed")
    s.add_argument("--events", type=int, default=10_000)
    s.add_argument("--swaps", type=int, default=1000)
    s.set_defaults(func=cmd_simulate)

    i = sub.add_parser("indicators", help="per-account theft indicators and labels")
    common(i)
    matching(i)
    i.add_argument("--params")
    i.add_argument("--scavenger-spread", type=float, default=100.0)
    i.set_defaults(func=cmd_indicators)

    lo = sub.add_parser("lost", help="lost-token findings among standalone deposits")
    common(lo)
    matching(lo)
    lo.add_argument("--privileged", help="comma separated operator accounts")
    lo.add_argument("--value-tolerance-pct")
    lo.set_defaults(func=cmd_lost)

    c = sub.add_parser("crosschain", help="reconcile xTransfer and reportTx calls")
    common(c, trace=False)
    c.add_argument("--trace")
    c.add_argument("--source")
    c.add_argument("--destination")
    c.add_argument("--quorum", type=int, default=3)
    c.add_argument("--value-tolerance-pct")
    c.set_defaults(func=cmd_crosschain)
    return p


def read_config(path: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; keys use - or _."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read config: {exc}") from None
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {n}: expected key=value")
        k, v = (x.strip() for x in line.split("=", 1))
        out[k.replace("-", "_")] = v.strip('"').strip("'")
    return out


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    cfg = read_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    for k in cfg:
        if k not in known:
            raise InputError(f"unknown config key {k!r}")
    defaults = {}
    for k, v in cfg.items():
        act = known[k]
        if isinstance(act, argparse._StoreTrueAction):
            defaults[k] = v.lower() in ("1", "true", "yes", "on")
        elif act.type is not None:
            try:
                defaults[k] = act.type(v)
            except ValueError:
                raise InputError(f"config key {k!r}: bad value {v!r}") from None
        else:
            defaults[k] = v
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        if not getattr(args, "command", None):
            parser.print_help()
            return 1
        return args.func(args)
    except (InputError, IngestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - internal failures map to exit code 2
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
