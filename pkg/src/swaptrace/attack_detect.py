"""Theft indicators, account classification and threshold calibration.

A theft candidate is a violation whose withdrawal side took value the
withdrawer did not deposit (kinds I, III and IV).  Each candidate gets a
deposit pattern and a block gap from trace evidence; gaps, probes and
patterns are then folded into one indicator vector per withdrawing account.
"""

from __future__ import annotations

import bisect
import csv
import enum
import io
import json
import math
import statistics
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence, Union

from .matchmaker import DetectionReport, ViolationRecord
from .trace_model import CallRecord, ViolationKind, WithdrawalRecord, normalize_account

INF = math.inf
Number = Union[Fraction, float]

THEFT_KINDS = (ViolationKind.I_STANDALONE_WITHDRAWAL, ViolationKind.III_ACCOUNT_MISMATCH,
               ViolationKind.IV_LOWER_VALUE_DEPOSIT)
P1_MARKERS = frozenset({"rebase", "airdrop", "redistribute"})
P2_MARKERS = frozenset({"accrueInterest"})
SYNC_FUNCS = frozenset({"swap", "mint", "burn", "sync"})
PROBE_FUNCS = frozenset({"getReserves"})
PRIVILEGED_FUNCS = frozenset({"setSwapFee", "setFeeTo", "setFeeToSetter", "skim", "initialize"})
# blocks after the withdrawal in which competing attempts still count
FRONTRUN_WINDOW = 10


class NoPositives(ValueError):
    pass


class DepositPattern(str, enum.Enum):
    P1_NON_STANDARD_BALANCE = "P1"
    P2_INTEREST = "P2"
    P3_EXTERNAL_TRANSFER = "P3"
    P4_BUGGY_ROUTER = "P4"
    UNKNOWN = "Unknown"


def _pos(rec) -> tuple[int, int]:
    return (rec.block, rec.tx_index)


class TraceIndex:
    """Lookup tables over a call stream used by every indicator."""

    def __init__(self, records: Iterable[CallRecord]):
        self.by_tx: dict[str, list[CallRecord]] = {}
        self.pool_calls: dict[str, list[CallRecord]] = {}
        self.syncs: dict[str, list[tuple[int, int]]] = {}
        self.markers: dict[str, list[tuple[tuple[int, int], CallRecord]]] = {}
        self.deposits: dict[str, list[tuple[int, int]]] = {}
        self.privileged: set[str] = set()
        for r in records:
            self.by_tx.setdefault(r.txid, []).append(r)
            self.pool_calls.setdefault(r.callee_contract, []).append(r)
            if r.callee_func in P1_MARKERS and r.success:
                self.markers.setdefault(r.callee_contract, []).append((_pos(r), r))
        for recs in self.by_tx.values():
            recs.sort(key=lambda r: r.call_seq.segments)
            self.privileged.update(recs[0].caller for r in recs if r.callee_func in PRIVILEGED_FUNCS)
        for contract, recs in self.pool_calls.items():
            recs.sort(key=lambda r: (r.block, r.tx_index, r.call_seq.segments))
            self.syncs[contract] = sorted({_pos(r) for r in recs if r.success and r.callee_func in SYNC_FUNCS})
        for recs in self.markers.values():
            recs.sort(key=lambda e: e[0])
        for recs in self.by_tx.values():
            for r in recs:
                if r.success and r.callee_func in ("transfer", "transferFrom"):
                    to = r.args.get("to")
                    if to is not None:
                        self.deposits.setdefault(normalize_account(to), []).append(_pos(r))
        for v in self.deposits.values():
            v.sort()
        self._blocks = {pool: [r.block for r in recs] for pool, recs in self.pool_calls.items()}

    def sender(self, rec: CallRecord) -> str:
        """Transaction sender: the caller of the root call."""
        return self.by_tx[rec.txid][0].caller if rec.txid in self.by_tx else rec.caller

    def account_of(self, rec: CallRecord) -> str:
        to = rec.args.get("to") if rec.callee_func in SYNC_FUNCS else None
        return normalize_account(to) if to else self.sender(rec)

    def last_sync_before(self, pool: str, pos: tuple[int, int]) -> Optional[tuple[int, int]]:
        syncs = self.syncs.get(pool, [])
        i = bisect.bisect_left(syncs, pos)
        return syncs[i - 1] if i else None

    def next_deposit_after(self, pool: str, pos: tuple[int, int]) -> Optional[tuple[int, int]]:
        deps = self.deposits.get(pool, [])
        i = bisect.bisect_right(deps, pos)
        return deps[i] if i < len(deps) else None

    def pool_calls_between(self, pool: str, lo_block: int, hi_block: int) -> list[CallRecord]:
        blocks = self._blocks.get(pool, [])
        i = bisect.bisect_left(blocks, lo_block)
        j = bisect.bisect_right(blocks, hi_block)
        return self.pool_calls[pool][i:j] if blocks else []


def _index(stream) -> TraceIndex:
    return stream if isinstance(stream, TraceIndex) else TraceIndex(stream)


@dataclass(frozen=True)
class Attribution:
    pattern: DepositPattern
    source_block: Optional[int]
    gap: Optional[int]


def theft_withdrawal(v: ViolationRecord) -> Optional[WithdrawalRecord]:
    if v.kind not in THEFT_KINDS or not v.withdrawals:
        return None
    return v.withdrawals[0]


def attribute_pattern(v: ViolationRecord, stream) -> Attribution:
    """Deposit pattern and block gap of one theft candidate."""
    idx = _index(stream)
    w = theft_withdrawal(v)
    if w is None:
        return Attribution(DepositPattern.UNKNOWN, None, None)
    if v.deposits:
        d = min(v.deposits, key=_pos)
        failed = any(r.callee_contract == d.pool and not r.success for r in idx.by_tx.get(d.txid, []))
        pattern = DepositPattern.P4_BUGGY_ROUTER if failed else DepositPattern.P3_EXTERNAL_TRANSFER
        return Attribution(pattern, d.block, w.block - d.block)
    last = idx.last_sync_before(w.pool, _pos(w))
    for r in idx.by_tx.get(w.txid, []):
        if r.callee_func in P2_MARKERS and r.callee_contract == w.token_in and r.call_seq.segments < w.call_seq.segments:
            src = last[0] if last else w.block
            return Attribution(DepositPattern.P2_INTEREST, src, w.block - src)
    lo = last if last else (-1, -1)
    for pos, _ in idx.markers.get(w.token_in, []):
        if lo < pos < _pos(w):
            return Attribution(DepositPattern.P1_NON_STANDARD_BALANCE, pos[0], w.block - pos[0])
    return Attribution(DepositPattern.UNKNOWN, last[0] if last else None, None)


@dataclass(frozen=True)
class Attempt:
    account: str
    call: CallRecord


def expand_attempts(v: ViolationRecord, stream, source_block: Optional[int] = None) -> dict[str, list[CallRecord]]:
    """Every swap or reserve probe on the pool, failed or not, between the
    value's source and the next deposit into the pool, grouped by account."""
    idx = _index(stream)
    w = theft_withdrawal(v)
    if w is None:
        return {}
    if source_block is None:
        source_block = attribute_pattern(v, idx).source_block
    if source_block is None:
        source_block = w.block
    start = (source_block, -1)
    if v.deposits:
        start = _pos(min(v.deposits, key=_pos))
    nxt = idx.next_deposit_after(w.pool, start)
    hi_block = nxt[0] if nxt else w.block + FRONTRUN_WINDOW
    out: dict[str, list[CallRecord]] = {}
    for r in idx.pool_calls_between(w.pool, source_block, max(hi_block, w.block)):
        if r.callee_func not in ("swap", *PROBE_FUNCS):
            continue
        if _pos(r) < start or (nxt and _pos(r) >= nxt and r.txid != w.txid):
            continue
        out.setdefault(idx.account_of(r), []).append(r)
    return out


def _competing(r: CallRecord, idx: TraceIndex) -> bool:
    if r.callee_func in PROBE_FUNCS:
        return True
    if r.callee_func != "swap":
        return False
    if not r.success:
        return True
    # a successful swap competes only if it deposits nothing itself
    return not any(c.callee_func in ("transfer", "transferFrom")
                   and c.args.get("to") is not None and normalize_account(c.args["to"]) == r.callee_contract
                   for c in idx.by_tx[r.txid])


def competitors(v: ViolationRecord, stream, source_block: Optional[int] = None) -> set[str]:
    """Other accounts racing for the same value in [source, withdrawal + 10]."""
    idx = _index(stream)
    w = theft_withdrawal(v)
    if w is None:
        return set()
    if source_block is None:
        source_block = attribute_pattern(v, idx).source_block
    lo = source_block if source_block is not None else w.block
    me = w.withdrawer
    owners = {d.depositor for d in v.deposits}
    out = set()
    for r in idx.pool_calls_between(w.pool, lo, w.block + FRONTRUN_WINDOW):
        acct = idx.account_of(r)
        if acct == me or acct in owners or r.txid == w.txid:
            continue
        if _competing(r, idx):
            out.add(acct)
    return out


def detect_frontrunning(v: ViolationRecord, stream) -> bool:
    return bool(competitors(v, stream))


def probed(w_call_tx: str, pool: str, account: str, block: int, idx: TraceIndex) -> bool:
    """Reserve and balance probes in the same transaction, or in an earlier
    transaction of the same account in the same block."""
    txs = [w_call_tx]
    tx_index = idx.by_tx[w_call_tx][0].tx_index if w_call_tx in idx.by_tx else 0
    for r in idx.pool_calls_between(pool, block, block):
        if r.tx_index < tx_index and r.callee_func in PROBE_FUNCS and idx.sender(r) == account:
            txs.append(r.txid)
    for txid in txs:
        calls = idx.by_tx.get(txid, [])
        reserves = any(c.callee_func in PROBE_FUNCS and c.callee_contract == pool for c in calls)
        balance = any(c.callee_func == "balanceOf" and c.args.get("account") is not None
                      and normalize_account(c.args["account"]) == pool for c in calls)
        if reserves and balance:
            return True
    return False


@dataclass
class IndicatorVector:
    account: str
    i1: Optional[Fraction] = None
    i2: Optional[Fraction] = None
    i3: Optional[Number] = None
    i4: Fraction = Fraction(0)
    i5: bool = True
    i6: Fraction = Fraction(0)
    i7: bool = False
    swap_count: int = 0
    pattern_counts: dict = field(default_factory=dict)
    gap_std: Optional[float] = None

    def __post_init__(self) -> None:
        self.account = normalize_account(self.account) if self.account.startswith("0x") else self.account
        if not (0 <= self.i4 <= 1 and 0 <= self.i6 <= 1):
            raise ValueError("i4 and i6 are fractions in [0, 1]")
        for g in (self.i1, self.i2):
            if g is not None and g < 0:
                raise ValueError("block gaps are non-negative")

    @staticmethod
    def ratio(i1: Optional[Fraction], i2: Optional[Fraction]) -> Optional[Number]:
        if i2 is None:
            return None
        if i1 is None or i1 == 0:
            return INF
        return Fraction(i2) / Fraction(i1)

    @classmethod
    def profile(cls, account: str, i1=None, i2=None, i4=0, i6=0, **kw) -> "IndicatorVector":
        """Vector from the headline indicators, deriving i3."""
        i1 = None if i1 is None else Fraction(i1)
        i2 = None if i2 is None else Fraction(i2)
        return cls(account, i1=i1, i2=i2, i3=cls.ratio(i1, i2), i4=Fraction(i4), i6=Fraction(i6), **kw)

    @property
    def p2_share(self) -> Fraction:
        total = sum(self.pattern_counts.values())
        return Fraction(self.pattern_counts.get("P2", 0), total) if total else Fraction(0)

    def to_row(self) -> dict:
        return {"account": self.account, "i1": fmt_num(self.i1), "i2": fmt_num(self.i2),
                "i3": fmt_num(self.i3), "i4": fmt_num(self.i4), "i5": str(self.i5).lower(),
                "i6": fmt_num(self.i6), "i7": str(self.i7).lower(), "swap_count": self.swap_count,
                "patterns": ";".join(f"{k}={v}" for k, v in sorted(self.pattern_counts.items())),
                "gap_std": "" if self.gap_std is None else f"{self.gap_std:.6f}"}


def fmt_num(x) -> str:
    """Exact text form: decimal when it terminates in 6 digits, else num/den."""
    if x is None:
        return ""
    if x in (INF, -INF):
        return "inf" if x > 0 else "-inf"
    x = Fraction(x)
    scaled = x * 10**6
    if scaled.denominator != 1:
        return f"{x.numerator}/{x.denominator}"
    units = abs(scaled.numerator)
    sign = "-" if x < 0 else ""
    whole, frac = divmod(units, 10**6)
    return f"{sign}{whole}" + (f".{frac:06d}".rstrip("0") if frac else "")


def parse_num(text: str) -> Optional[Number]:
    text = str(text).strip()
    if text == "":
        return None
    if text.lower() in ("inf", "infinity", "-inf"):
        return INF if text[0] != "-" else -INF
    return Fraction(text)


@dataclass(frozen=True)
class TheftCase:
    violation: ViolationRecord
    account: str
    pattern: DepositPattern
    gap: Optional[int]
    source_block: Optional[int]
    probed: bool
    self_funded: bool
    competitors: frozenset
    attempt: bool = False


def theft_cases(report: DetectionReport, stream) -> list[TheftCase]:
    """Theft candidates of a report plus failed attempts on the same value."""
    idx = _index(stream)
    out = []
    for v in report.violations:
        w = theft_withdrawal(v)
        if w is None:
            continue
        att = attribute_pattern(v, idx)
        rivals = competitors(v, idx, att.source_block)
        funded = any(c.callee_func in ("transfer", "transferFrom") and c.args.get("to") is not None
                     and normalize_account(c.args["to"]) == w.pool for c in idx.by_tx.get(w.txid, []))
        out.append(TheftCase(v, w.withdrawer, att.pattern, att.gap, att.source_block,
                             probed(w.txid, w.pool, w.withdrawer, w.block, idx), funded, frozenset(rivals)))
        owners = {d.depositor for d in v.deposits}
        for acct, calls in sorted(expand_attempts(v, idx, att.source_block).items()):
            if acct == w.withdrawer or acct in owners:
                continue
            for c in calls:
                if c.callee_func == "swap" and not c.success:
                    gap = None if att.gap is None else c.block - att.source_block
                    out.append(TheftCase(v, acct, att.pattern, gap, att.source_block,
                                         probed(c.txid, w.pool, acct, c.block, idx), False,
                                         frozenset(rivals | {w.withdrawer}) - {acct}, attempt=True))
    return out


def _mean(xs: Sequence[int]) -> Optional[Fraction]:
    return Fraction(sum(xs), len(xs)) if xs else None


def vector_from_cases(account: str, cases: Sequence[TheftCase]) -> IndicatorVector:
    mine = [c for c in cases if c.account == account]
    if not mine:
        raise ValueError(f"{account} never withdrew in a violation")
    p2 = [c.gap for c in mine if c.pattern is DepositPattern.P2_INTEREST and c.gap is not None]
    other = [c.gap for c in mine if c.pattern is not DepositPattern.P2_INTEREST and c.gap is not None]
    counts: dict[str, int] = {}
    for c in mine:
        counts[c.pattern.value] = counts.get(c.pattern.value, 0) + 1
    intended = counts.get("P1", 0) + counts.get("P2", 0)
    gaps = p2 + other
    i1, i2 = _mean(other), _mean(p2)
    return IndicatorVector(
        account, i1=i1, i2=i2, i3=IndicatorVector.ratio(i1, i2),
        i4=Fraction(sum(c.probed for c in mine), len(mine)),
        i5=not any(c.self_funded for c in mine),
        i6=Fraction(intended, len(mine)),
        i7=any(c.competitors for c in mine),
        swap_count=len(mine), pattern_counts=counts,
        gap_std=statistics.pstdev(gaps) if len(gaps) > 1 else (0.0 if gaps else None),
    )


def compute_indicators(account: str, violations: Iterable[ViolationRecord], stream) -> IndicatorVector:
    idx = _index(stream)
    return vector_from_cases(normalize_account(account),
                             theft_cases(DetectionReport(violations=list(violations)), idx))


def indicators_for_report(report: DetectionReport, stream) -> dict[str, IndicatorVector]:
    cases = theft_cases(report, _index(stream))
    accounts = sorted({c.account for c in cases})
    return {a: vector_from_cases(a, cases) for a in accounts}


@dataclass(frozen=True)
class DetectionParams:
    x1: Number = Fraction(2)
    x2: Number = Fraction(617)
    x3: Number = Fraction("19.28")
    x4: Number = Fraction("0.975")
    x6: Number = Fraction("0.692")

    def __post_init__(self) -> None:
        for name in ("x1", "x2", "x3", "x4", "x6"):
            x = getattr(self, name)
            # x1 = -inf disables the gap indicator
            if x < 0 and not (name == "x1" and x == -INF):
                raise ValueError(f"{name} must be non-negative")

    def to_json(self) -> str:
        return json.dumps({k: fmt_num(getattr(self, k)) for k in ("x1", "x2", "x3", "x4", "x6")}) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DetectionParams":
        d = json.loads(text)
        if not isinstance(d, dict):
            raise ValueError("detection parameters must be a JSON object")
        base = cls()
        return cls(**{k: parse_num(d[k]) if k in d else getattr(base, k) for k in ("x1", "x2", "x3", "x4", "x6")})


class Label(str, enum.Enum):
    ATTACKER_A1 = "Attacker_A1"
    ATTACKER_A2 = "Attacker_A2"
    ATTACKER_GENERIC = "Attacker_Generic"
    SCAVENGER_A3 = "ScavengerA3"
    BENIGN = "Benign"

    @property
    def is_attacker(self) -> bool:
        return self.value.startswith("Attacker")


@dataclass(frozen=True)
class AccountLabel:
    label: Label
    fired_indicators: frozenset = frozenset()

    def __post_init__(self) -> None:
        if self.label.is_attacker and not self.fired_indicators:
            raise ValueError("an attacker label needs a fired indicator")


def fired(v: IndicatorVector, p: DetectionParams) -> frozenset:
    out = set()
    if v.i1 is not None and v.i1 <= p.x1:
        out.add("i1")
    if v.i2 is not None and v.i2 >= p.x2:
        out.add("i2")
    # an infinite threshold disables its indicator, even for an infinite ratio
    if v.i3 is not None and p.x3 != INF and v.i3 >= p.x3:
        out.add("i3")
    if v.i4 > 0 and v.i4 >= p.x4:
        out.add("i4")
    if v.i6 >= p.x6 and v.i6 > 0:
        out.add("i6")
    return frozenset(out)


def classify_account(v: IndicatorVector, params: DetectionParams = DetectionParams(),
                     scavenger_spread: float = 100.0) -> AccountLabel:
    hits = fired(v, params)
    if hits:
        if "i1" in hits:
            return AccountLabel(Label.ATTACKER_A1, hits)
        if "i4" in hits:
            return AccountLabel(Label.ATTACKER_A2, hits)
        return AccountLabel(Label.ATTACKER_GENERIC, hits)
    if v.gap_std is not None and v.gap_std > scavenger_spread:
        return AccountLabel(Label.SCAVENGER_A3, frozenset())
    return AccountLabel(Label.BENIGN, frozenset())


def _floor_to(x: Fraction, places: int) -> Fraction:
    q = 10**places
    return Fraction(math.floor(x * q), q)


# a mean gap this large is no longer "consistently within a few blocks"
I1_CAP = 10


def calibrate(labeled: Sequence[tuple[IndicatorVector, bool]]) -> DetectionParams:
    """Tightest thresholds under which every positive fires an indicator.

    Each threshold is fitted on the positives its indicator is meant for:
    x1 on fast claimers (mean gap under ``I1_CAP``), x2 and x3 on accounts whose
    interest claims wait longer than their other claims, x4 on probing
    accounts that mostly race for non-interest value, x6 on accounts with any
    P1/P2 value.  Thresholds are rounded outward (x1, x2 to whole blocks,
    x3 to 0.01, x4 and x6 to 0.001).  A positive left uncovered loosens the
    first indicator it has evidence for.
    """
    pos = [v for v, is_attacker in labeled if is_attacker]
    if not pos:
        raise NoPositives("calibration needs at least one attacker")
    fast = [v.i1 for v in pos if v.i1 is not None and v.i1 < I1_CAP]
    x1: Number = Fraction(math.ceil(max(fast))) if fast else -INF
    slow = [v for v in pos if v.i1 is not None and v.i2 is not None and v.i2 > v.i1]
    x2: Number = Fraction(math.floor(min(v.i2 for v in slow))) if slow else INF
    x3: Number = _floor_to(min(Fraction(v.i3) for v in slow if v.i3 != INF), 2) \
        if any(v.i3 != INF for v in slow) else INF
    probing = [v.i4 for v in pos if v.i4 > 0 and v.p2_share <= Fraction(1, 2)]
    x4: Number = _floor_to(min(probing), 3) if probing else INF
    shared = [v.i6 for v in pos if v.i6 > 0]
    x6: Number = _floor_to(min(shared), 3) if shared else INF
    th = {"x1": x1, "x2": x2, "x3": x3, "x4": x4, "x6": x6}

    def covered(v: IndicatorVector) -> bool:
        return ((v.i1 is not None and v.i1 <= th["x1"]) or (v.i2 is not None and v.i2 >= th["x2"])
                or (v.i3 is not None and th["x3"] != INF and v.i3 >= th["x3"]) or (v.i4 > 0 and v.i4 >= th["x4"])
                or (v.i6 > 0 and v.i6 >= th["x6"]))

    for v in sorted(pos, key=lambda v: v.account):
        if covered(v):
            continue
        if v.i1 is not None:
            th["x1"] = max(th["x1"], Fraction(math.ceil(v.i1)))
        elif v.i2 is not None:
            th["x2"] = min(th["x2"], Fraction(math.floor(v.i2)))
        elif v.i4 > 0:
            th["x4"] = min(th["x4"], _floor_to(v.i4, 3))
        elif v.i6 > 0:
            th["x6"] = min(th["x6"], _floor_to(v.i6, 3))
        else:
            raise NoPositives(f"{v.account} carries no indicator evidence")
    return DetectionParams(**th)


INDICATOR_FIELDS = ["account", "i1", "i2", "i3", "i4", "i5", "i6", "i7", "swap_count", "patterns", "gap_std",
                    "label", "fired"]


def indicator_csv(vectors: dict[str, IndicatorVector], params: DetectionParams = DetectionParams(),
                  scavenger_spread: float = 100.0) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=INDICATOR_FIELDS, lineterminator="\n")
    w.writeheader()
    for acct in sorted(vectors):
        v = vectors[acct]
        lab = classify_account(v, params, scavenger_spread)
        row = v.to_row()
        row.update(label=lab.label.value, fired=";".join(sorted(lab.fired_indicators)))
        w.writerow(row)
    return buf.getvalue()


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Rank correlation with average ranks for ties."""
    def ranks(vals):
        order = sorted(range(len(vals)), key=lambda i: vals[i])
        r = [0.0] * len(vals)
        i = 0
        while i < len(order):
            j = i
            while j + 1 < len(order) and vals[order[j + 1]] == vals[order[i]]:
                j += 1
            for k in range(i, j + 1):
                r[order[k]] = (i + j) / 2 + 1
            i = j + 1
        return r
    if len(xs) < 2:
        return 0.0
    return statistics.correlation(ranks(xs), ranks(ys))
