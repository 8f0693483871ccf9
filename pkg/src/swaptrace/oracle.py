"""Exhaustive reference matcher for small windows.

Enumerates every admissible (deposit subset, withdrawal subset) group and
searches all families of disjoint groups for one leaving the fewest records
unmatched.  Exponential by design; guarded to 12 records per side, which keeps
the worst case near (2^12)^2 candidate pairings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from itertools import combinations
from typing import Sequence

from .matchmaker import DetectionReport, MatchParams, run_matchmaker
from .trace_model import DepositRecord, WithdrawalRecord

MAX_WINDOW = 12


class WindowTooLarge(ValueError):
    pass


@dataclass
class OracleResult:
    best_matching: list[tuple[tuple[DepositRecord, ...], tuple[WithdrawalRecord, ...]]]
    min_violation_count: int
    explored: int


@dataclass
class Diff:
    violation_delta: int
    mismatched_groups: list[frozenset] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return self.violation_delta == 0 and not self.mismatched_groups


def _key(r):
    return (r.block, r.tx_index, r.call_seq.segments)


def _account(r) -> str:
    return r.depositor if isinstance(r, DepositRecord) else r.withdrawer


def _value(r) -> int:
    return r.value if isinstance(r, DepositRecord) else -r.expected_value_in


def _tx_sides(records: Sequence, params: MatchParams) -> dict[str, tuple[tuple[int, int], int]]:
    """Net direction of every transaction in the window: +1 funds the pool,
    -1 draws from it, 0 settles itself."""
    nets: dict[str, list] = {}
    for r in records:
        e = nets.setdefault(r.txid, [(r.block, r.tx_index), 0, 0])
        if isinstance(r, DepositRecord):
            e[1] += r.value
        else:
            e[2] += r.expected_value_in
    out = {}
    for txid, (pos, din, wout) in nets.items():
        if din and wout and Fraction(abs(din - wout), max(din, wout, 1)) <= params.tolerance_pct / 100:
            side = 0
        else:
            side = (din > wout) - (din < wout)
        out[txid] = (pos, side)
    return out


def _blockers(group: Sequence, sides: dict) -> list[frozenset]:
    """Linearity of one group in a linear pool.

    A deposit funds withdrawals issued before the next deposit; a withdrawal
    consumes deposits made since the previous withdrawal.  Units inside the
    group's span that would break this are returned; the group is admissible
    only if all of them are settled by other groups of the same family.
    Returns one set of blocking txids per admissible orientation.
    """
    txs = {r.txid for r in group}
    dep_pos = [sides[t][0] for t in txs if sides[t][1] > 0]
    wd_pos = [sides[t][0] for t in txs if sides[t][1] < 0]
    lo, hi = min(dep_pos), max(wd_pos)

    def inside(blocking: int) -> frozenset:
        return frozenset(t for t, (pos, side) in sides.items()
                         if lo < pos < hi and side == blocking and t not in txs)

    if any(lo < pos < hi and side == 0 for t, (pos, side) in sides.items() if t not in txs):
        # an atomic transaction in between syncs the pool
        return []
    options = []
    if len(dep_pos) == 1:
        options.append(inside(1))
    if len(wd_pos) == 1:
        options.append(inside(-1))
    return options


def _admissible(group: Sequence, params: MatchParams) -> bool:
    """Tolerance, time order and one-to-m shape of one group.

    Account agreement is checked separately: a cross-transaction group whose
    accounts disagree still settles the pool but counts as violating.
    """
    deps = [r for r in group if isinstance(r, DepositRecord)]
    wds = [r for r in group if not isinstance(r, DepositRecord)]
    if not deps or not wds:
        return False
    din = sum(r.value for r in deps)
    wout = sum(r.expected_value_in for r in wds)
    if Fraction(abs(din - wout), max(din, wout, 1)) > params.tolerance_pct / 100:
        return False
    units: dict[str, list] = {}
    for r in group:
        units.setdefault(r.txid, []).append(r)
    if len(units) == 1:
        return True
    dep_units, wd_units = [], []
    for recs in units.values():
        net = sum(_value(r) for r in recs)
        if net == 0:
            return False
        (dep_units if net > 0 else wd_units).append(recs)
    if not dep_units or not wd_units:
        return False
    m = params.max_group
    if len(dep_units) > m or len(wd_units) > m or min(len(dep_units), len(wd_units)) != 1:
        return False
    last_dep = max((r.block, r.tx_index) for u in dep_units for r in u)
    first_wd = min((r.block, r.tx_index) for u in wd_units for r in u)
    if not last_dep < first_wd:
        return False
    if max(r.block for r in wds) - min(r.block for r in deps) > params.timeout_blocks:
        return False
    return True


def exhaustive_match(window_deposits: Sequence[DepositRecord], window_withdrawals: Sequence[WithdrawalRecord],
                     params: MatchParams = MatchParams()) -> OracleResult:
    if len(window_deposits) > MAX_WINDOW or len(window_withdrawals) > MAX_WINDOW:
        raise WindowTooLarge(f"window exceeds {MAX_WINDOW} records per side")
    records = sorted(list(window_deposits) + list(window_withdrawals), key=_key)
    n = len(records)
    dep_idx = [i for i, r in enumerate(records) if isinstance(r, DepositRecord)]
    wd_idx = [i for i, r in enumerate(records) if not isinstance(r, DepositRecord)]
    cap = 2 * params.max_group
    sides = _tx_sides(records, params)

    tx_mask: dict[str, int] = {}
    for i, r in enumerate(records):
        tx_mask[r.txid] = tx_mask.get(r.txid, 0) | 1 << i

    # group mask -> {(records that must be settled elsewhere, violating records)}
    masks: dict[int, set[tuple[int, int]]] = {}

    def consider(idx: tuple[int, ...]) -> None:
        group = [records[i] for i in idx]
        if not _admissible(group, params):
            return
        mk = sum(1 << i for i in idx)
        if len({r.txid for r in group}) == 1:
            masks.setdefault(mk, set()).add((0, 0))
            return
        cost = 0 if len({_account(r) for r in group}) == 1 else len(group)
        for blocking in _blockers(group, sides):
            need = 0
            for t in blocking:
                need |= tx_mask[t]
            masks.setdefault(mk, set()).add((need, cost))

    for kd in range(1, min(cap, len(dep_idx)) + 1):
        for ds in combinations(dep_idx, kd):
            for kw in range(1, min(cap, len(wd_idx)) + 1):
                for ws in combinations(wd_idx, kw):
                    consider(ds + ws)
    # single-transaction groups are not size bounded
    by_tx: dict[str, list[int]] = {}
    for i, r in enumerate(records):
        by_tx.setdefault(r.txid, []).append(i)
    for idx in by_tx.values():
        if len(idx) <= cap:
            continue
        for k in range(cap + 1, len(idx) + 1):
            for sub in combinations(idx, k):
                consider(sub)

    by_low: dict[int, list[tuple[int, int, int]]] = {}
    for mk, opts in sorted(masks.items()):
        low = (mk & -mk).bit_length() - 1
        for need, cost in sorted(opts):
            by_low.setdefault(low, []).append((mk, need, cost))

    explored = 0

    def positions(mk: int) -> tuple[int, ...]:
        return tuple(i for i in range(n) if mk >> i & 1)

    # Records are decided lowest index first.  ``dropped`` holds records left
    # unmatched so far, ``owed`` records that chosen groups require matched.
    @lru_cache(maxsize=None)
    def best(remaining: int, dropped: int, owed: int):
        nonlocal explored
        explored += 1
        if remaining == 0:
            return (0, ())
        low = (remaining & -remaining).bit_length() - 1
        bit = 1 << low
        choice = None
        if not owed & bit:
            sub = best(remaining & ~bit, dropped | bit, owed)
            if sub is not None:
                choice = (sub[0] + 1, sub[1])
        for mk, need, cost in by_low.get(low, ()):
            if mk & remaining != mk or need & dropped:
                continue
            sub = best(remaining & ~mk, dropped, (owed | need) & remaining & ~mk)
            if sub is None:
                continue
            placed = sub[1] if cost else tuple(sorted(sub[1] + (positions(mk),)))
            cand = (sub[0] + cost, placed)
            if choice is None or cand < choice:
                choice = cand
        return choice

    count, groups = best((1 << n) - 1, 0, 0)
    best.cache_clear()
    matching = []
    for pos in groups:
        deps = tuple(records[i] for i in pos if isinstance(records[i], DepositRecord))
        wds = tuple(records[i] for i in pos if not isinstance(records[i], DepositRecord))
        matching.append((deps, wds))
    return OracleResult(best_matching=matching, min_violation_count=count, explored=explored)


def _ref(r) -> tuple:
    return (r.txid, str(r.call_seq), "d" if isinstance(r, DepositRecord) else "w")


def compare_with_oracle(greedy: DetectionReport, oracle: OracleResult) -> Diff:
    greedy_groups = {frozenset(_ref(r) for r in m.records) for m in greedy.matches}
    oracle_groups = {frozenset(_ref(r) for r in d + w) for d, w in oracle.best_matching}
    delta = greedy.violating_record_count() - oracle.min_violation_count
    mismatched = sorted(greedy_groups ^ oracle_groups, key=lambda g: sorted(g))
    return Diff(violation_delta=delta, mismatched_groups=mismatched)


def oracle_check(deposits: Sequence[DepositRecord], withdrawals: Sequence[WithdrawalRecord],
                 params: MatchParams = MatchParams()) -> Diff:
    """Run the greedy matcher and the exhaustive oracle on one window and diff them."""
    return compare_with_oracle(run_matchmaker(deposits, withdrawals, params),
                               exhaustive_match(deposits, withdrawals, params))
