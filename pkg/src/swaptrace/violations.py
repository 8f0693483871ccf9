"""USD valuation and aggregate tables of detected operations."""

from __future__ import annotations

import bisect
import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional

from .matchmaker import DetectionReport, ViolationRecord
from .trace_model import ANOMALY_OF_KIND, ViolationKind, normalize_account


class NoRate(KeyError):
    def __init__(self, token: str):
        super().__init__(token)
        self.token = token


@dataclass
class RateTable:
    """USD rates per token observed at given blocks."""

    entries: list[tuple[str, int, int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        for _, _, num, den in self.entries:
            if den <= 0 or num < 0:
                raise ValueError("rates need num >= 0 and den > 0")
        self.entries.sort(key=lambda e: (e[0], e[1]))
        self._by_token: dict[str, tuple[list[int], list[Fraction]]] = {}
        for token, block, num, den in self.entries:
            blocks, rates = self._by_token.setdefault(token, ([], []))
            blocks.append(block)
            rates.append(Fraction(num, den))

    def rate_at(self, token: str, block: int) -> Fraction:
        """Rate of the entry nearest to ``block``; ties go to the earlier entry."""
        try:
            blocks, rates = self._by_token[token]
        except KeyError:
            raise NoRate(token) from None
        i = bisect.bisect_left(blocks, block)
        if i == len(blocks):
            return rates[-1]
        if i == 0 or blocks[i] == block:
            return rates[i]
        before, after = blocks[i - 1], blocks[i]
        return rates[i - 1] if block - before <= after - block else rates[i]

    @classmethod
    def from_csv(cls, text: str) -> "RateTable":
        rows = csv.DictReader(io.StringIO(text))
        entries = []
        for row in rows:
            entries.append((normalize_account(row["token"]), int(row["block"]),
                            int(row["rate_num"]), int(row["rate_den"])))
        return cls(entries)

    @classmethod
    def load(cls, path) -> "RateTable":
        with open(path) as fh:
            return cls.from_csv(fh.read())


def estimate_value(token: str, amount: int, block: int, rates: RateTable) -> Fraction:
    return amount * rates.rate_at(token, block)


def usd_str(x: Fraction) -> str:
    """Decimal string with 6 fractional digits, rounded half away from zero."""
    sign = "-" if x < 0 else ""
    scaled = abs(x) * 10**6
    units = int(scaled)
    if scaled - units >= Fraction(1, 2):
        units += 1
    return f"{sign}{units // 10**6}.{units % 10**6:06d}"


def violation_value(v: ViolationRecord, rates: RateTable) -> Fraction:
    """Value at stake: the standalone amount, or the absolute mismatch."""
    if v.deposits and not v.withdrawals:
        recs = [(d.token, d.value, d.block) for d in v.deposits]
    elif v.withdrawals and not v.deposits:
        recs = [(w.token_in, w.expected_value_in, w.block) for w in v.withdrawals]
    elif v.kind in (ViolationKind.IV_LOWER_VALUE_DEPOSIT, ViolationKind.V_HIGHER_VALUE_DEPOSIT):
        d = v.deposits[0]
        return abs(v.value_gap) * rates.rate_at(d.token, d.block)
    else:
        # account mismatch and interleaving: the deposited value is at stake
        recs = [(d.token, d.value, d.block) for d in v.deposits]
    return sum((estimate_value(t, a, b, rates) for t, a, b in recs), Fraction(0))


ROW_ORDER = [k.value for k in ViolationKind] + ["Atomic"]


@dataclass
class SummaryRow:
    kind: str
    anomaly: Optional[str]
    count: int = 0
    total_value_usd: Fraction = Fraction(0)
    unvalued: int = 0
    txids: set = field(default_factory=set)

    @property
    def distinct_tx(self) -> int:
        return len(self.txids)


@dataclass
class SummaryTable:
    rows: list[SummaryRow]

    def row(self, kind: str) -> SummaryRow:
        for r in self.rows:
            if r.kind == kind:
                return r
        raise KeyError(kind)

    @property
    def total_count(self) -> int:
        return sum(r.count for r in self.rows)

    def to_records(self) -> list[dict]:
        return [{"kind": r.kind, "anomaly": r.anomaly or "", "count": r.count,
                 "total_value_usd": usd_str(r.total_value_usd), "unvalued": r.unvalued,
                 "distinct_tx": r.distinct_tx} for r in self.rows]

    def to_json(self) -> str:
        return json.dumps(self.to_records(), indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["kind", "anomaly", "count", "total_value_usd", "unvalued",
                                            "distinct_tx"], lineterminator="\n")
        w.writeheader()
        w.writerows(self.to_records())
        return buf.getvalue()


def aggregate(report: DetectionReport, rates: Optional[RateTable] = None) -> SummaryTable:
    """Tally matches and violations per kind; unpriced tokens go to ``unvalued``."""
    rates = rates or RateTable()
    rows = {}
    for k in ViolationKind:
        a = ANOMALY_OF_KIND[k]
        rows[k.value] = SummaryRow(k.value, a.value if a else None)
    rows["Atomic"] = SummaryRow("Atomic", "A")
    for v in report.violations:
        row = rows[v.kind.value]
        row.count += 1
        row.txids.update(v.txids)
        try:
            row.total_value_usd += violation_value(v, rates)
        except NoRate:
            row.unvalued += 1
    atomic = rows["Atomic"]
    for m in report.matches:
        atomic.count += 1
        atomic.txids.update(r.txid for r in m.records)
        try:
            atomic.total_value_usd += sum(
                (estimate_value(d.token, d.value, d.block, rates) for d in m.deposits), Fraction(0))
        except NoRate:
            atomic.unvalued += 1
    return SummaryTable([rows[k] for k in ROW_ORDER])


def tally_labels(kinds: Iterable[str]) -> dict[str, int]:
    out = {k: 0 for k in ROW_ORDER}
    for k in kinds:
        out[k] += 1
    return out
