"""Trace-to-report detection over every registered pool."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Iterable

from .ingest import DEPOSIT_FUNCS, WITHDRAWAL_FUNCS, PoolRegistry, deposit_from_call, withdrawals_from_call
from .matchmaker import DetectionReport, MatchParams, run_matchmaker
from .trace_model import CallRecord, DepositRecord, WithdrawalRecord

Stream = tuple[list[DepositRecord], list[WithdrawalRecord]]


def split_streams(records: Iterable[CallRecord], registry: PoolRegistry) -> dict[tuple[str, str], Stream]:
    """Candidates of every pool in one pass, keyed by (pool, deposit token).

    Equivalent to calling ``extract_candidates`` per pool and splitting by
    token, without rescanning the trace for each pool.
    """
    infos = {p.pool: p for p in registry}
    by_token: dict[str, list[str]] = {}
    for p in infos.values():
        for tok in (p.token0, p.token1, p.pool):
            by_token.setdefault(tok, []).append(p.pool)
    streams: dict[tuple[str, str], Stream] = {}
    for rec in records:
        if not rec.success:
            continue
        callee = rec.callee_contract
        func = rec.callee_func
        if func in WITHDRAWAL_FUNCS and callee in infos:
            for w in withdrawals_from_call(rec, infos[callee]):
                streams.setdefault((w.pool, w.token_in), ([], []))[1].append(w)
        elif func in DEPOSIT_FUNCS and callee in by_token:
            to = rec.args.get("to", rec.args.get("recipient", rec.args.get("_to")))
            if to is None:
                continue
            for pool in by_token[callee]:
                d = deposit_from_call(rec, pool)
                if d is not None:
                    streams.setdefault((pool, d.token), ([], []))[0].append(d)
    for deps, wds in streams.values():
        deps.sort(key=lambda r: r.key)
        wds.sort(key=lambda r: r.key)
    return dict(sorted(streams.items()))


def detect(records: Iterable[CallRecord], registry: PoolRegistry,
           params: MatchParams = MatchParams(), jobs: int = 1) -> DetectionReport:
    """Run the matchmaker on each (pool, token) stream and merge the reports.

    With ``jobs`` > 1 streams are matched in a thread pool; reports are still
    merged in stream order, so the output does not depend on ``jobs``.
    """
    streams = list(split_streams(records, registry).values())
    report = DetectionReport()
    if jobs > 1 and len(streams) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(lambda s: run_matchmaker(s[0], s[1], params), streams))
    else:
        parts = [run_matchmaker(deps, wds, params) for deps, wds in streams]
    for part in parts:
        report.extend(part)
    return report
