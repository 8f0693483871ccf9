"""Lost-token findings among standalone deposits.

A standalone deposit is taken as lost when its sender later pays the same
pool the same token again through the other deposit mechanism (a transfer
retried as a router ``transferFrom``, or the reverse).  Accounts that call
privileged pool functions are pool operators topping up reserves and are
never attributed lost tokens.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .attack_detect import PRIVILEGED_FUNCS
from .ingest import PoolRegistry, deposit_from_call
from .matchmaker import ViolationRecord, within_tolerance
from .pipeline import split_streams
from .trace_model import CallRecord, DepositRecord, ViolationKind, normalize_account
from .violations import NoRate, RateTable, estimate_value, usd_str


@dataclass(frozen=True)
class LostTokenFinding:
    deposit: DepositRecord
    retry: Optional[DepositRecord]
    block_diff: int
    value_usd: Optional[Fraction]
    privileged_excluded: bool = False

    @property
    def value_equal(self) -> bool:
        return self.retry is not None and self.retry.value == self.deposit.value

    def to_row(self, registry: Optional[PoolRegistry] = None) -> dict:
        protocol = ""
        if registry is not None and self.deposit.pool in registry:
            protocol = registry.get(self.deposit.pool).protocol.value
        return {"deposit_tx": self.deposit.txid, "retry_tx": self.retry.txid if self.retry else "",
                "value_equal": str(self.value_equal).lower(),
                "value_usd": usd_str(self.value_usd) if self.value_usd is not None else "",
                "block_diff": self.block_diff, "protocol": protocol, "token": self.deposit.token}


def standalone_deposits(violations: Iterable[ViolationRecord]) -> list[DepositRecord]:
    out = []
    for v in violations:
        if v.kind is ViolationKind.II_STANDALONE_DEPOSIT:
            out.extend(v.deposits)
    return out


def privileged_callers(stream: Iterable[CallRecord]) -> set[str]:
    roots: dict[str, str] = {}
    calls = []
    for r in stream:
        if r.call_seq.segments == (0,):
            roots[r.txid] = r.caller
        if r.callee_func in PRIVILEGED_FUNCS:
            calls.append(r)
    return {roots.get(r.txid, r.caller) for r in calls}


def detect_lost(standalone: Sequence[DepositRecord], stream: Sequence[CallRecord],
                privileged_accounts: Iterable[str] = (), registry: Optional[PoolRegistry] = None,
                rates: Optional[RateTable] = None, tolerance_pct: Optional[Fraction] = None,
                include_excluded: bool = False) -> list[LostTokenFinding]:
    """Findings for standalone deposits followed by a retry.

    ``tolerance_pct`` None requires the retry to carry exactly the same value;
    otherwise values within that tolerance count as the same.
    ``include_excluded`` keeps privileged senders' findings, flagged.
    """
    stream = list(stream)
    blocked = {normalize_account(a) for a in privileged_accounts} | privileged_callers(stream)
    later: dict[tuple[str, str, str], list[DepositRecord]] = {}
    if registry is not None:
        for (pool, token), (deps, _) in split_streams(stream, registry).items():
            for d in deps:
                later.setdefault((d.depositor, pool, token), []).append(d)
    else:
        # without a registry only the pools named by the deposits are scanned
        pools = {d.pool for d in standalone}
        for r in stream:
            if not r.success or r.callee_func not in ("transfer", "transferFrom"):
                continue
            to = r.args.get("to")
            if to is None or normalize_account(to) not in pools:
                continue
            d = deposit_from_call(r, normalize_account(to))
            if d is not None:
                later.setdefault((d.depositor, d.pool, d.token), []).append(d)
        for v in later.values():
            v.sort(key=lambda r: r.key)
    out = []
    for d in sorted(standalone, key=lambda r: r.key):
        retry = None
        for cand in later.get((d.depositor, d.pool, d.token), []):
            if cand.key <= d.key or cand.txid == d.txid or cand.origin_func == d.origin_func:
                continue
            same = cand.value == d.value if tolerance_pct is None else \
                within_tolerance(cand.value, d.value, tolerance_pct)
            if same:
                retry = cand
                break
        if retry is None:
            continue
        excluded = d.depositor in blocked
        if excluded and not include_excluded:
            continue
        usd = None
        if rates is not None:
            try:
                usd = estimate_value(d.token, d.value, d.block, rates)
            except NoRate:
                usd = None
        out.append(LostTokenFinding(d, retry, retry.block - d.block, usd, excluded))
    return out


FINDING_FIELDS = ["deposit_tx", "retry_tx", "value_equal", "value_usd", "block_diff", "protocol", "token"]


def findings_csv(findings: Sequence[LostTokenFinding], registry: Optional[PoolRegistry] = None) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=FINDING_FIELDS, lineterminator="\n")
    w.writeheader()
    for f in findings:
        w.writerow(f.to_row(registry))
    return buf.getvalue()


@dataclass(frozen=True)
class LostSummary:
    count: int
    total_usd: Fraction
    mean_block_diff: Optional[Fraction]


def summarize(findings: Sequence[LostTokenFinding]) -> LostSummary:
    diffs = [f.block_diff for f in findings]
    return LostSummary(len(findings), sum((f.value_usd or Fraction(0) for f in findings), Fraction(0)),
                       Fraction(sum(diffs), len(diffs)) if diffs else None)
