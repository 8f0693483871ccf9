"""Linear-time matchmaking of pool deposits against pool withdrawals.

Deposits and withdrawals of one (pool, token) stream are joined in three rounds:

1. records of the same transaction are joined and matched by value; leftovers
   that still disagree are merged into a single virtual record carrying the
   signed remainder;
2. across transactions, a deposit may only fund withdrawals that follow it and
   precede the next deposit (the pool executes one call at a time), so each
   deposit is matched against subsets of that window, and symmetrically each
   withdrawal against the deposits since the previous withdrawal;
3. whatever is left is reported as a value mismatch or a standalone operation.

Runtime is O(n * C(w, m)) where ``w`` is the widest window between
consecutive deposits and ``m`` the group bound; with the default ``m = 2`` and
ordinary traffic this is linear in the number of records.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Optional, Sequence, Union

from .trace_model import (
    ANOMALY_OF_KIND,
    AnomalyClass,
    DepositRecord,
    ViolationKind,
    WithdrawalRecord,
)

Record = Union[DepositRecord, WithdrawalRecord]


@dataclass(frozen=True)
class MatchParams:
    tolerance_pct: Fraction = Fraction(10)
    max_group: int = 2
    # roughly one day of blocks; configuration only
    timeout_blocks: int = 6646
    use_reverse_pass: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "tolerance_pct", Fraction(self.tolerance_pct))
        if not (0 <= self.tolerance_pct < 100):
            raise ValueError("tolerance_pct must be in [0, 100)")
        if self.max_group < 1:
            raise ValueError("max_group must be >= 1")
        if self.timeout_blocks < 0:
            raise ValueError("timeout_blocks must be >= 0")


def within_tolerance(a: int, b: int, tolerance_pct: Fraction) -> bool:
    """|a - b| / max(a, b, 1) <= tolerance_pct / 100, in exact arithmetic."""
    tol = Fraction(tolerance_pct)
    return abs(a - b) * 100 * tol.denominator <= tol.numerator * max(a, b, 1)


class MatchKind(str, enum.Enum):
    ATOMIC_SWAP = "AtomicSwap"
    ATOMIC_ADD_LIQUIDITY = "AtomicAddLiquidity"


@dataclass(frozen=True)
class MatchResult:
    deposits: tuple[DepositRecord, ...]
    withdrawals: tuple[WithdrawalRecord, ...]
    kind: MatchKind
    intra_tx: bool

    @property
    def records(self) -> tuple[Record, ...]:
        return self.deposits + self.withdrawals

    @property
    def rate(self) -> Optional[Fraction]:
        """Exchange rate: deposited value per unit withdrawn."""
        out = sum(w.value_out for w in self.withdrawals)
        if out == 0:
            return None
        return Fraction(sum(d.value for d in self.deposits), out)

    @property
    def block_gap(self) -> int:
        if not self.deposits or not self.withdrawals:
            return 0
        return max(w.block for w in self.withdrawals) - min(d.block for d in self.deposits)


@dataclass(frozen=True)
class ViolationRecord:
    kind: ViolationKind
    deposits: tuple[DepositRecord, ...]
    withdrawals: tuple[WithdrawalRecord, ...]
    value_gap: int
    block_gap: Optional[int]

    @property
    def anomaly(self) -> Optional[AnomalyClass]:
        return ANOMALY_OF_KIND[self.kind]

    @property
    def records(self) -> tuple[Record, ...]:
        return self.deposits + self.withdrawals

    @property
    def txids(self) -> frozenset[str]:
        return frozenset(r.txid for r in self.records)


@dataclass
class DetectionReport:
    matches: list[MatchResult] = field(default_factory=list)
    violations: list[ViolationRecord] = field(default_factory=list)

    def extend(self, other: "DetectionReport") -> None:
        self.matches.extend(other.matches)
        self.violations.extend(other.violations)

    @property
    def record_count(self) -> int:
        return sum(len(m.records) for m in self.matches) + sum(len(v.records) for v in self.violations)

    def violating_record_count(self) -> int:
        return sum(len(v.records) for v in self.violations)

    def to_dict(self) -> dict:
        return {
            "matches": [match_to_dict(m) for m in self.matches],
            "violations": [violation_to_dict(v) for v in self.violations],
        }


def record_ref(r: Record) -> dict:
    if isinstance(r, DepositRecord):
        return {"side": "deposit", "txid": r.txid, "call_seq": str(r.call_seq), "block": r.block,
                "tx_index": r.tx_index, "account": r.depositor, "pool": r.pool, "token": r.token,
                "value": r.value, "func": r.origin_func}
    return {"side": "withdrawal", "txid": r.txid, "call_seq": str(r.call_seq), "block": r.block,
            "tx_index": r.tx_index, "account": r.withdrawer, "pool": r.pool, "token": r.token_in,
            "value": r.expected_value_in, "token_out": r.token_out, "value_out": r.value_out,
            "func": r.origin_func}


def _frac(x: Optional[Fraction]) -> Optional[str]:
    return None if x is None else f"{x.numerator}/{x.denominator}"


def match_to_dict(m: MatchResult) -> dict:
    return {"kind": m.kind.value, "intra_tx": m.intra_tx, "rate": _frac(m.rate),
            "block_gap": m.block_gap, "records": [record_ref(r) for r in m.records]}


def violation_to_dict(v: ViolationRecord) -> dict:
    return {"kind": v.kind.value, "anomaly": v.anomaly.value if v.anomaly else None,
            "value_gap": v.value_gap, "block_gap": v.block_gap,
            "records": [record_ref(r) for r in v.records]}


# -- internal working items ----------------------------------------------------

class _Item:
    """A real record, or a virtual record merged from one transaction."""

    __slots__ = ("sign", "value", "pos", "block", "txid", "deps", "wds", "account", "alive", "seg")

    def __init__(self, sign, value, pos, block, txid, deps, wds, account, seg=0):
        self.sign = sign          # +1 deposit-like, -1 withdrawal-like
        self.value = value        # magnitude in deposit-token units
        self.pos = pos
        self.block = block
        self.txid = txid
        self.deps = deps
        self.wds = wds
        self.account = account    # None when members disagree
        self.alive = True
        self.seg = seg            # stretch of the stream between atomic transactions


def _match_kind(wds: Iterable[WithdrawalRecord]) -> MatchKind:
    for w in wds:
        if w.origin_func in ("mint", "burn"):
            return MatchKind.ATOMIC_ADD_LIQUIDITY
    return MatchKind.ATOMIC_SWAP


def _sort_key(r):
    return (r.block, r.tx_index, r.call_seq.segments)


def _violation(deps: Sequence[DepositRecord], wds: Sequence[WithdrawalRecord],
               kind: Optional[ViolationKind] = None) -> ViolationRecord:
    gap = sum(d.value for d in deps) - sum(w.expected_value_in for w in wds)
    if kind is None:
        if not deps:
            kind = ViolationKind.I_STANDALONE_WITHDRAWAL
        elif not wds:
            kind = ViolationKind.II_STANDALONE_DEPOSIT
        elif gap < 0:
            kind = ViolationKind.IV_LOWER_VALUE_DEPOSIT
        else:
            kind = ViolationKind.V_HIGHER_VALUE_DEPOSIT
    block_gap = None
    if deps and wds:
        block_gap = max(0, max(w.block for w in wds) - min(d.block for d in deps))
    return ViolationRecord(kind, tuple(deps), tuple(wds), gap, block_gap)


# -- stack automaton ---------------------------------------------------------------

def check_interleaving(tx_records: Sequence[Record], params: MatchParams = MatchParams()) -> list[WithdrawalRecord]:
    """Replay one transaction's deposits/withdrawals and return interleaving flags.

    Deposits are pushed; a withdrawal pops the smallest top-of-stack group
    (at most ``max_group`` deposits) whose value it consumes.  A withdrawal is
    flagged when it leaves an earlier deposit pending underneath, or when it
    cannot be attributed to the top group while two or more deposits wait.
    A withdrawal on an empty stack is not flagged; it stays a standalone
    candidate.
    """
    tol = params.tolerance_pct
    m = params.max_group
    stack: list[int] = []
    flagged: list[WithdrawalRecord] = []
    for r in tx_records:
        if type(r) is DepositRecord:
            stack.append(r.value)
            continue
        if not stack:
            continue
        need = r.expected_value_in
        hit = 0
        total = 0
        for k in range(1, min(m, len(stack)) + 1):
            total += stack[-k]
            if within_tolerance(total, need, tol):
                hit = k
                break
        if hit:
            del stack[-hit:]
            if stack:
                flagged.append(r)
        elif len(stack) >= 2:
            flagged.append(r)
            stack.clear()
        else:
            stack.clear()
    return flagged


# -- round 1 ---------------------------------------------------------------------

@dataclass(frozen=True)
class MergedRecord:
    """Unmatched deposits and withdrawals of one transaction, netted."""

    deposits: tuple[DepositRecord, ...]
    withdrawals: tuple[WithdrawalRecord, ...]

    @property
    def net(self) -> int:
        return sum(d.value for d in self.deposits) - sum(w.expected_value_in for w in self.withdrawals)

    @property
    def txid(self) -> str:
        return (self.deposits + self.withdrawals)[0].txid

    @property
    def block(self) -> int:
        return (self.deposits + self.withdrawals)[0].block


def _find_group(deps: list, wds: list, m: int, tol: Fraction):
    """Smallest (deposit subset, withdrawal subset) agreeing in value; earliest first."""
    nd, nw = len(deps), len(wds)
    for size in range(2, 2 * m + 1):
        for kd in range(max(1, size - m), min(m, size - 1) + 1):
            kw = size - kd
            if kd > nd or kw > nw:
                continue
            for dsub in combinations(range(nd), kd):
                dsum = sum(deps[i].value for i in dsub)
                for wsub in combinations(range(nw), kw):
                    wsum = sum(wds[j].expected_value_in for j in wsub)
                    if within_tolerance(dsum, wsum, tol):
                        return dsub, wsub
    return None


def _single(r, pos: int, seg: int = 0) -> _Item:
    if type(r) is DepositRecord:
        return _Item(1, r.value, pos, r.block, r.txid, (r,), (), r.depositor, seg)
    return _Item(-1, r.expected_value_in, pos, r.block, r.txid, (), (r,), r.withdrawer, seg)


def _merged_item(deps, wds, pos: int, seg: int = 0) -> _Item:
    net = sum(x.value for x in deps) - sum(x.expected_value_in for x in wds)
    accts = {x.depositor for x in deps} | {x.withdrawer for x in wds}
    acct = next(iter(accts)) if len(accts) == 1 else None
    first = (deps or wds)[0]
    return _Item(1 if net > 0 else -1, abs(net), pos, first.block, first.txid, tuple(deps), tuple(wds), acct, seg)


def _to_items(residuals: Iterable) -> list[_Item]:
    keyed = []
    for obj in residuals:
        if isinstance(obj, MergedRecord):
            key = max(_sort_key(r) for r in obj.deposits + obj.withdrawals)
        else:
            key = _sort_key(obj)
        keyed.append((key, obj))
    keyed.sort(key=lambda kv: kv[0])
    items = []
    for pos, (_, obj) in enumerate(keyed):
        if isinstance(obj, MergedRecord):
            items.append(_merged_item(obj.deposits, obj.withdrawals, pos))
        else:
            items.append(_single(obj, pos))
    return items


def _from_item(it: _Item):
    if len(it.deps) + len(it.wds) == 1:
        return (it.deps + it.wds)[0]
    return MergedRecord(it.deps, it.wds)


def round1_intra_tx(deposits: Sequence[DepositRecord], withdrawals: Sequence[WithdrawalRecord],
                    params: MatchParams = MatchParams()):
    """Join records by transaction id and match them by value.

    Returns ``(matches, residual_deposits, residual_withdrawals)``.  A
    transaction whose records cannot all be matched contributes one
    :class:`MergedRecord` to the side its signed remainder points to.
    """
    report = DetectionReport()
    items = _round1(_merge(deposits, withdrawals), params, report, check_interleave=False)
    res_d = [_from_item(it) for it in items if it.sign > 0]
    res_w = [_from_item(it) for it in items if it.sign < 0]
    return report.matches, res_d, res_w


def _merge(deposits, withdrawals) -> list:
    merged = list(deposits)
    merged.extend(withdrawals)
    merged.sort(key=_sort_key)
    return merged


def _round1(merged: list, params: MatchParams, report: DetectionReport,
            check_interleave: bool = True) -> list[_Item]:
    tol = params.tolerance_pct
    m = params.max_group
    tnum, tden = tol.numerator, tol.denominator * 100
    items: list[_Item] = []
    append = items.append
    matches = report.matches
    n = len(merged)
    # An atomic transaction syncs the pool, absorbing any untracked balance, so
    # residuals on either side of it can never fund each other.
    seg = 0
    i = 0
    while i < n:
        r = merged[i]
        txid = r.txid
        j = i + 1
        while j < n and merged[j].txid == txid:
            j += 1
        if j == i + 1:
            append(_single(r, i, seg))
            i = j
            continue
        dpos = [k for k in range(i, j) if type(merged[k]) is DepositRecord]
        wpos = [k for k in range(i, j) if type(merged[k]) is not DepositRecord]
        if not dpos or not wpos:
            for k in range(i, j):
                append(_single(merged[k], k, seg))
            i = j
            continue
        if len(dpos) == 1 and len(wpos) == 1:
            d, w = merged[dpos[0]], merged[wpos[0]]
            a, b = d.value, w.expected_value_in
            if abs(a - b) * tden <= tnum * max(a, b, 1):
                matches.append(MatchResult((d,), (w,), _match_kind((w,)), True))
                seg += 1
            else:
                append(_merged_item((d,), (w,), j - 1, seg))
            i = j
            continue
        chunk = merged[i:j]
        deps = [merged[k] for k in dpos]
        wds = [merged[k] for k in wpos]
        if check_interleave and len(deps) >= 2 and check_interleaving(chunk, params):
            report.violations.append(_violation(deps, wds, ViolationKind.INTERLEAVED))
            seg += 1
            i = j
            continue
        matched_before = len(matches)
        while deps and wds:
            found = _find_group(deps, wds, m, tol)
            if found is None:
                break
            dsub, wsub = found
            gd = tuple(deps[k] for k in dsub)
            gw = tuple(wds[k] for k in wsub)
            matches.append(MatchResult(gd, gw, _match_kind(gw), True))
            deps = [x for k, x in enumerate(deps) if k not in dsub]
            dpos = [x for k, x in enumerate(dpos) if k not in dsub]
            wds = [x for k, x in enumerate(wds) if k not in wsub]
            wpos = [x for k, x in enumerate(wpos) if k not in wsub]
        if deps and wds:
            dsum = sum(x.value for x in deps)
            wsum = sum(x.expected_value_in for x in wds)
            if within_tolerance(dsum, wsum, tol):
                # coordinated by one transaction; no group-size bound
                matches.append(MatchResult(tuple(deps), tuple(wds), _match_kind(wds), True))
                seg += 1
            else:
                if len(matches) > matched_before:
                    seg += 1
                append(_merged_item(deps, wds, max(dpos + wpos), seg))
        else:
            if len(matches) > matched_before:
                seg += 1
            for k in dpos + wpos:
                append(_single(merged[k], k, seg))
        i = j
    items.sort(key=lambda it: it.pos)
    return items


# -- round 2 ---------------------------------------------------------------------

def _emit_cross(group_d: list[_Item], group_w: list[_Item], report: DetectionReport) -> None:
    deps = tuple(x for it in group_d + group_w for x in it.deps)
    wds = tuple(x for it in group_d + group_w for x in it.wds)
    deps = tuple(sorted(deps, key=_sort_key))
    wds = tuple(sorted(wds, key=_sort_key))
    acct = group_d[0].account
    same = acct is not None and all(it.account == acct for it in group_d) and all(
        it.account == acct for it in group_w)
    if same:
        report.matches.append(MatchResult(deps, wds, _match_kind(wds), False))
    else:
        report.violations.append(_violation(deps, wds, ViolationKind.III_ACCOUNT_MISMATCH))
    for it in group_d:
        it.alive = False
    for it in group_w:
        it.alive = False


def _subset_hit(target: int, window: list[_Item], m: int, tnum: int, tden: int):
    """First window subset (smallest, then earliest) matching ``target`` in value."""
    for it in window:
        v = it.value
        if abs(target - v) * tden <= tnum * max(target, v, 1):
            return [it]
    n = len(window)
    for k in range(2, min(m, n) + 1):
        for combo in combinations(window, k):
            s = 0
            for it in combo:
                s += it.value
            if abs(target - s) * tden <= tnum * max(target, s, 1):
                return list(combo)
    return None


def _segments(items: list[_Item]) -> list[list[_Item]]:
    out: list[list[_Item]] = []
    for it in items:
        if not out or out[-1][-1].seg != it.seg:
            out.append([])
        out[-1].append(it)
    return out


def _round2(items: list[_Item], params: MatchParams, report: DetectionReport) -> None:
    # Account-consistent groups are searched first; value-only groups, which
    # become account-mismatch violations, only among what is left after that.
    for part in _segments(items):
        if len(part) > 1:
            _sweep(part, params, report, strict=True)
            _sweep(part, params, report, strict=False)


def _sweep(items: list[_Item], params: MatchParams, report: DetectionReport, strict: bool) -> None:
    tol = params.tolerance_pct
    tnum, tden = tol.numerator, tol.denominator * 100
    m = params.max_group
    tt = params.timeout_blocks
    n = len(items)
    dep_idx = [k for k in range(n) if items[k].sign > 0]
    # forward: a deposit funds withdrawals before the next deposit
    for q, di in enumerate(dep_idx):
        d = items[di]
        stop = dep_idx[q + 1] if q + 1 < len(dep_idx) else n
        if stop == di + 1 or not d.alive:
            continue
        if strict and d.account is None:
            continue
        limit = d.block + tt
        window = []
        for k in range(di + 1, stop):
            w = items[k]
            if w.block > limit:
                break
            if w.alive and (not strict or w.account == d.account):
                window.append(w)
        if not window:
            continue
        hit = _subset_hit(d.value, window, m, tnum, tden)
        if hit is not None:
            _emit_cross([d], hit, report)
    if not params.use_reverse_pass:
        return
    # reverse: a withdrawal is funded by deposits since the previous withdrawal
    pending: list[_Item] = []
    for it in items:
        if not it.alive:
            continue
        if it.sign > 0:
            pending.append(it)
            continue
        if pending and not (strict and it.account is None):
            window = [d for d in pending if it.block - d.block <= tt
                      and (not strict or d.account == it.account)]
            if window:
                hit = _subset_hit(it.value, window, m, tnum, tden)
                if hit is not None:
                    _emit_cross(hit, [it], report)
        pending = []


def round2_cross_tx(residuals: Sequence, params: MatchParams = MatchParams()):
    """Cross-transaction matching of round-1 residuals.

    Returns ``(matches, account_mismatches, residuals)``.
    """
    report = DetectionReport()
    items = _to_items(residuals)
    _round2(items, params, report)
    left = [_from_item(it) for it in items if it.alive]
    return report.matches, report.violations, left


# -- round 3 ---------------------------------------------------------------------

def _round3(items: list[_Item], params: MatchParams, report: DetectionReport) -> None:
    tt = params.timeout_blocks
    n = len(items)
    deps_before = [0] * (n + 1)
    for k in range(n):
        deps_before[k + 1] = deps_before[k] + (1 if items[k].sign > 0 else 0)
    alive = [k for k in range(n) if items[k].alive]
    out = report.violations
    q = 0
    while q < len(alive):
        k = alive[q]
        it = items[k]
        if it.sign > 0 and q + 1 < len(alive):
            k2 = alive[q + 1]
            w = items[k2]
            # value mismatch needs the same trader on both sides, in one stretch
            if (w.sign < 0 and w.seg == it.seg and deps_before[k2] - deps_before[k + 1] == 0
                    and w.block - it.block <= tt and it.account is not None
                    and it.account == w.account):
                deps = sorted(it.deps + w.deps, key=_sort_key)
                wds = sorted(it.wds + w.wds, key=_sort_key)
                out.append(_violation(deps, wds))
                q += 2
                continue
        out.append(_violation(it.deps, it.wds))
        q += 1


def round3_classify(residuals: Sequence, params: MatchParams = MatchParams()) -> list[ViolationRecord]:
    """Classify records left after matching as mismatches or standalone operations."""
    report = DetectionReport()
    _round3(_to_items(residuals), params, report)
    return report.violations


def run_matchmaker(deposits: Sequence[DepositRecord], withdrawals: Sequence[WithdrawalRecord],
                   params: MatchParams = MatchParams()) -> DetectionReport:
    """Match one stream's deposits and withdrawals; every record lands in
    exactly one match or violation."""
    report = DetectionReport()
    merged = _merge(deposits, withdrawals)
    items = _round1(merged, params, report)
    _round2(items, params, report)
    _round3(items, params, report)
    report.violations.sort(key=lambda v: min(_sort_key(r) for r in v.records))
    return report
