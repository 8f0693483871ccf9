"""Cross-chain transfer reconciliation with a reporter quorum.

A source-chain ``xTransfer`` is minted on the destination chain once enough
distinct custodians call ``reportTx`` with its transaction id, amount and
target.  Transfers short of the quorum are underwater; reports naming no
known transfer (or disagreeing with it) are orphans.
"""

from __future__ import annotations

import csv
import hashlib
import io
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .matchmaker import within_tolerance
from .trace_model import CallRecord, CallSeq

MINUTE = 60
# histogram bucket edges in minutes; the last bucket is open ended
BUCKET_EDGES = [0, 2, 3, 4, 5, 6, 10, 60, 600, 1200]


@dataclass(frozen=True)
class XTransferRecord:
    sender: str
    amount: int
    target_account: str
    txid: str
    chain: str
    block: int
    timestamp: int

    def __post_init__(self) -> None:
        if self.amount <= 0:
            raise ValueError("xTransfer amount must be positive")


@dataclass(frozen=True)
class ReportRecord:
    reporter: str
    reported_txid: str
    target_account: str
    amount: int
    txid: str
    chain: str
    timestamp: int

    def __post_init__(self) -> None:
        if not self.reported_txid:
            raise ValueError("reportTx needs a transaction id")


@dataclass(frozen=True)
class MatchedTransfer:
    xtransfer: XTransferRecord
    reports: tuple[ReportRecord, ...]
    minted: bool

    @property
    def reporters(self) -> frozenset[str]:
        return frozenset(r.reporter for r in self.reports)

    @property
    def delays(self) -> tuple[int, ...]:
        return tuple(r.timestamp - self.xtransfer.timestamp for r in self.reports)


@dataclass
class CrossChainResult:
    # minted transfers
    matched: list[MatchedTransfer] = field(default_factory=list)
    # transfers short of the quorum, with the reports they did get
    underwater: list[MatchedTransfer] = field(default_factory=list)
    orphans: list[ReportRecord] = field(default_factory=list)

    @property
    def groups(self) -> list[MatchedTransfer]:
        return sorted(self.matched + self.underwater, key=lambda g: (g.xtransfer.timestamp, g.xtransfer.txid))


def records_from_calls(calls: Iterable[CallRecord]) -> tuple[list[XTransferRecord], list[ReportRecord]]:
    """Source transfers and destination reports found in a call trace."""
    src, dst = [], []
    for r in calls:
        if not r.success:
            continue
        if r.callee_func == "xTransfer":
            src.append(XTransferRecord(
                sender=r.caller, amount=int(r.args["amount"]), target_account=str(r.args["to"]),
                txid=r.txid, chain=r.chain, block=r.block, timestamp=int(r.timestamp or 0)))
        elif r.callee_func == "reportTx":
            dst.append(ReportRecord(
                reporter=r.caller, reported_txid=str(r.args["_txId"]), target_account=str(r.args["_to"]),
                amount=int(r.args["_amount"]), txid=r.txid, chain=r.chain, timestamp=int(r.timestamp or 0)))
    return src, dst


def join_crosschain(src: Sequence[XTransferRecord], dst: Sequence[ReportRecord], quorum: int = 3,
                    tolerance_pct: Optional[Fraction] = None) -> CrossChainResult:
    """Group reports under their transfer and apply the quorum.

    Amounts must agree exactly unless ``tolerance_pct`` is given.  Only
    distinct reporters count toward the quorum.
    """
    if quorum < 1:
        raise ValueError("quorum must be at least 1")
    by_id: dict[str, list[ReportRecord]] = {}
    for r in sorted(dst, key=lambda r: (r.timestamp, r.txid)):
        by_id.setdefault(r.reported_txid, []).append(r)
    known = {x.txid for x in src}
    result = CrossChainResult()
    for x in sorted(src, key=lambda x: (x.timestamp, x.txid)):
        agreeing, rest = [], []
        for r in by_id.get(x.txid, []):
            same_amount = r.amount == x.amount if tolerance_pct is None else \
                within_tolerance(r.amount, x.amount, tolerance_pct)
            (agreeing if same_amount and r.target_account == x.target_account else rest).append(r)
        result.orphans.extend(rest)
        group = MatchedTransfer(x, tuple(agreeing), len({r.reporter for r in agreeing}) >= quorum)
        (result.matched if group.minted else result.underwater).append(group)
    for txid, reports in by_id.items():
        if txid not in known:
            result.orphans.extend(reports)
    result.orphans.sort(key=lambda r: (r.timestamp, r.txid))
    return result


@dataclass(frozen=True)
class Bucket:
    lo_min: int
    hi_min: Optional[int]
    count: int
    fraction: Fraction

    @property
    def label(self) -> str:
        return f"[{self.lo_min},{'inf' if self.hi_min is None else self.hi_min})"


@dataclass(frozen=True)
class DelayStats:
    buckets: tuple[Bucket, ...]
    negative: tuple[ReportRecord, ...]
    max_delay: Optional[int]
    total: int

    def fraction_under(self, minutes: int) -> Fraction:
        n = sum(b.count for b in self.buckets if b.hi_min is not None and b.hi_min <= minutes)
        return Fraction(n, self.total) if self.total else Fraction(0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bucket", "count", "fraction"])
        for b in self.buckets:
            w.writerow([b.label, b.count, f"{float(b.fraction):.6f}"])
        return buf.getvalue()


def delay_stats(result: CrossChainResult, edges: Sequence[int] = BUCKET_EDGES) -> DelayStats:
    """Histogram of report delays over every grouped report, minted or not."""
    counts = [0] * len(edges)
    negative = []
    delays = []
    for g in result.groups:
        for r, d in zip(g.reports, g.delays):
            if d < 0:
                negative.append(r)
                continue
            delays.append(d)
            i = len(edges) - 1
            while edges[i] * MINUTE > d:
                i -= 1
            counts[i] += 1
    total = len(delays)
    buckets = tuple(Bucket(edges[i], edges[i + 1] if i + 1 < len(edges) else None, c,
                           Fraction(c, total) if total else Fraction(0)) for i, c in enumerate(counts))
    return DelayStats(buckets, tuple(negative), max(delays) if delays else None, total)


# share of reports per bucket below and above ten minutes
_FAST_WEIGHTS = [5, 20, 35, 25, 10, 5]
_SLOW_WEIGHTS = [70, 20, 7, 3]


def _apportion(n: int, weights: Sequence[int]) -> list[int]:
    """Split ``n`` in proportion to ``weights`` by largest remainder."""
    total = sum(weights)
    raw = [Fraction(n * w, total) for w in weights]
    out = [int(x) for x in raw]
    for i in sorted(range(len(weights)), key=lambda i: (-(raw[i] - out[i]), i))[: n - sum(out)]:
        out[i] += 1
    return out


def _hex(*parts) -> str:
    return "0x" + hashlib.sha256(":".join(map(str, parts)).encode()).hexdigest()


@dataclass
class BancorXTrace:
    source: list[CallRecord]
    destination: list[CallRecord]
    underwater_txids: list[str]
    under10_target: Fraction


def bancorx_trace(seed: int, n_swaps: int = 1000, under10: Fraction = Fraction("0.9806"),
                  two_report: int = 3, reporters: int = 3, slow_third_hours: int = 20) -> BancorXTrace:
    """Synthetic transfers with ``reporters`` reports each, except
    ``two_report`` transfers that only ever get two.  Report delays are
    stratified so that the share under ten minutes is ``under10`` up to
    rounding, and one third report arrives ``slow_third_hours`` late."""
    rng = random.Random(seed)
    bridge = _hex("bancorx", seed)
    custodians = [_hex("custodian", seed, i) for i in range(reporters)]
    short = set(rng.sample(range(n_swaps), two_report))
    n_reports = sum(2 if i in short else reporters for i in range(n_swaps))
    fast = round(under10 * n_reports)
    pool_delays = []
    for i, c in enumerate(_apportion(fast, _FAST_WEIGHTS)):
        lo, hi = BUCKET_EDGES[i] * MINUTE, BUCKET_EDGES[i + 1] * MINUTE
        pool_delays += [rng.randrange(lo, hi) for _ in range(c)]
    slow_counts = _apportion(n_reports - fast, _SLOW_WEIGHTS)
    for j, c in enumerate(slow_counts):
        if 7 + j < len(BUCKET_EDGES):
            lo, hi = BUCKET_EDGES[6 + j] * MINUTE, BUCKET_EDGES[7 + j] * MINUTE
        else:
            # stragglers in the open bucket arrive about slow_third_hours late
            lo = max(BUCKET_EDGES[-1] * MINUTE, slow_third_hours * 60 * MINUTE)
            hi = lo + 10 * MINUTE
        pool_delays += [rng.randrange(lo, hi) for _ in range(c)]
    rng.shuffle(pool_delays)
    if slow_counts[-1] and 0 not in short and reporters >= 3:
        # the longest delay goes to the third report of the first transfer
        longest = max(range(len(pool_delays)), key=lambda i: pool_delays[i])
        pool_delays[2], pool_delays[longest] = pool_delays[longest], pool_delays[2]
    src, dst, underwater = [], [], []
    t0 = 1_600_000_000
    k = 0
    for i in range(n_swaps):
        ts = t0 + i * 97
        txid = _hex("x", seed, i)
        user = _hex("user", seed, i % 50)
        target = f"eos{i % 50:04d}"
        amount = rng.randint(10**18, 10**21)
        src.append(CallRecord(txid=txid, block=10_000_000 + ts // 13 - t0 // 13, tx_index=i % 7,
                              call_seq=CallSeq.parse("0"), caller=user, callee_contract=bridge,
                              callee_func="xTransfer", args={"amount": amount, "to": target},
                              chain="eth", timestamp=ts))
        if i in short:
            underwater.append(txid)
        for c in custodians[: 2 if i in short else reporters]:
            delay = pool_delays[k]
            k += 1
            dst.append(CallRecord(txid=_hex("r", seed, i, c), block=2 * (ts + delay - t0), tx_index=0,
                                  call_seq=CallSeq.parse("0"), caller=c, callee_contract="bancorxeos",
                                  callee_func="reportTx",
                                  args={"_txId": txid, "_to": target, "_amount": amount},
                                  chain="eos", timestamp=ts + delay))
    dst.sort(key=lambda r: (r.timestamp, r.txid))
    return BancorXTrace(src, dst, underwater, Fraction(fast, n_reports))


def groups_csv(result: CrossChainResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["xtransfer_tx", "amount", "target", "reports", "reporters", "minted", "max_delay"])
    for g in result.groups:
        w.writerow([g.xtransfer.txid, g.xtransfer.amount, g.xtransfer.target_account, len(g.reports),
                    len(g.reporters), str(g.minted).lower(), max(g.delays) if g.delays else ""])
    return buf.getvalue()

