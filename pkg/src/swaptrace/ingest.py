"""Trace parsing and candidate deposit/withdrawal selection for registered pools."""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .trace_model import CallRecord, CallSeq, DepositRecord, WithdrawalRecord, normalize_account

log = logging.getLogger(__name__)

TRACE_FIELDS = (
    "txid", "block", "tx_index", "chain", "caller", "callee_contract",
    "callee_func", "call_seq", "args", "gas", "gas_price", "success",
)
OPTIONAL_FIELDS = ("timestamp",)
REQUIRED_FIELDS = ("txid", "block", "tx_index", "caller", "callee_contract", "callee_func", "call_seq")

DEPOSIT_FUNCS = ("transfer", "transferFrom")
WITHDRAWAL_FUNCS = ("swap", "mint", "burn")


class IngestError(Exception):
    pass


class MalformedLine(IngestError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class UnknownPool(IngestError):
    pass


class MissingArg(IngestError):
    def __init__(self, func: str, name: str, txid: str = ""):
        super().__init__(f"{func}: missing argument {name!r} (tx {txid})")
        self.func = func
        self.name = name


class Protocol(str, enum.Enum):
    UNISWAP_V2_LIKE = "UniswapV2Like"
    # pool ignores deposit-by-transfer; such deposits are stuck, not extractable
    UNISWAP_V3_LIKE = "UniswapV3Like"
    CROSS_CHAIN_ENDPOINT = "CrossChainEndpoint"


@dataclass(frozen=True)
class PoolInfo:
    pool: str
    token0: str
    token1: str
    protocol: Protocol = Protocol.UNISWAP_V2_LIKE

    @property
    def tokens(self) -> tuple[str, str]:
        return (self.token0, self.token1)

    def other(self, token: str) -> str:
        return self.token1 if token == self.token0 else self.token0


class PoolRegistry:
    def __init__(self, pools: Iterable[PoolInfo] = ()):
        self._pools: dict[str, PoolInfo] = {}
        for p in pools:
            self.add(p)

    def add(self, info: PoolInfo) -> None:
        if info.pool in self._pools:
            raise ValueError(f"duplicate pool {info.pool}")
        if info.token0 == info.token1:
            raise ValueError(f"pool {info.pool}: token0 == token1")
        self._pools[info.pool] = info

    def __contains__(self, pool: str) -> bool:
        return pool in self._pools

    def __iter__(self):
        return iter(self._pools.values())

    def __len__(self) -> int:
        return len(self._pools)

    def get(self, pool: str) -> PoolInfo:
        try:
            return self._pools[pool]
        except KeyError:
            raise UnknownPool(pool) from None

    def to_dict(self) -> dict:
        return {"pools": [
            {"pool": p.pool, "token0": p.token0, "token1": p.token1, "protocol": p.protocol.value}
            for p in self._pools.values()
        ]}

    @classmethod
    def from_dict(cls, data: dict) -> "PoolRegistry":
        reg = cls()
        for entry in data.get("pools", []):
            reg.add(PoolInfo(
                pool=normalize_account(entry["pool"]),
                token0=normalize_account(entry["token0"]),
                token1=normalize_account(entry["token1"]),
                protocol=Protocol(entry.get("protocol", Protocol.UNISWAP_V2_LIKE.value)),
            ))
        return reg


def load_registry(path: str | Path) -> PoolRegistry:
    with open(path) as fh:
        return PoolRegistry.from_dict(json.load(fh))


def parse_lines(lines: Iterable[str], stats: Optional[dict] = None) -> list[CallRecord]:
    """Parse JSON-Lines trace text into stream-ordered call records."""
    records = []
    unknown = 0
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLine(line_no, f"invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise MalformedLine(line_no, "not a JSON object")
        for name in REQUIRED_FIELDS:
            if name not in obj or obj[name] in (None, ""):
                raise MalformedLine(line_no, f"missing field {name!r}")
        unknown += sum(1 for k in obj if k not in TRACE_FIELDS and k not in OPTIONAL_FIELDS)
        try:
            records.append(CallRecord.from_dict(obj))
        except (TypeError, ValueError, KeyError) as exc:
            raise MalformedLine(line_no, str(exc)) from None
    if unknown:
        log.warning("ignored %d unknown trace fields", unknown)
    if stats is not None:
        stats["unknown_fields"] = stats.get("unknown_fields", 0) + unknown
        stats["records"] = stats.get("records", 0) + len(records)
    records.sort(key=lambda r: r.key)
    return records


def parse_trace(path: str | Path, stats: Optional[dict] = None) -> list[CallRecord]:
    with open(path) as fh:
        return parse_lines(fh, stats)


def dump_trace(records: Iterable[CallRecord]) -> str:
    return "".join(json.dumps(r.to_dict(), separators=(",", ":")) + "\n" for r in records)


def _arg(rec: CallRecord, *names: str, default=None, required: bool = True):
    for n in names:
        if n in rec.args:
            return rec.args[n]
    if required:
        raise MissingArg(rec.callee_func, names[0], rec.txid)
    return default


def deposit_from_call(rec: CallRecord, pool: str) -> Optional[DepositRecord]:
    """The deposit a token call makes into ``pool``, or None."""
    if rec.callee_func == "transfer":
        to = normalize_account(_arg(rec, "to", "recipient", "_to"))
        sender = rec.caller
    elif rec.callee_func == "transferFrom":
        to = normalize_account(_arg(rec, "to", "recipient", "_to"))
        sender = normalize_account(_arg(rec, "from", "sender", "_from"))
    else:
        return None
    if to != pool:
        return None
    value = int(_arg(rec, "amount", "value", "_value"))
    if value <= 0:
        return None
    return DepositRecord(
        depositor=sender, pool=pool, token=rec.callee_contract, value=value,
        txid=rec.txid, block=rec.block, tx_index=rec.tx_index,
        call_seq=rec.call_seq, origin_func=rec.callee_func,
    )


def withdrawals_from_call(rec: CallRecord, info: PoolInfo) -> list[WithdrawalRecord]:
    func = rec.callee_func
    common = dict(pool=info.pool, txid=rec.txid, block=rec.block, tx_index=rec.tx_index,
                  call_seq=rec.call_seq, origin_func=func)
    if func == "swap":
        to = normalize_account(_arg(rec, "to"))
        amount_in = int(_arg(rec, "amountIn"))
        amount_out = int(_arg(rec, "amountOut"))
        token_in = normalize_account(_arg(rec, "tokenIn", required=False, default=info.token0))
        if amount_in == 0 and amount_out == 0:
            return []
        return [WithdrawalRecord(withdrawer=to, token_out=info.other(token_in), value_out=amount_out,
                                 expected_value_in=amount_in, token_in=token_in, **common)]
    if func == "mint":
        to = normalize_account(_arg(rec, "to"))
        liquidity = int(_arg(rec, "liquidity"))
        out = []
        for token, name in ((info.token0, "amount0"), (info.token1, "amount1")):
            amount = int(_arg(rec, name))
            if amount > 0:
                out.append(WithdrawalRecord(withdrawer=to, token_out=info.pool, value_out=liquidity,
                                            expected_value_in=amount, token_in=token, **common))
        return out
    if func == "burn":
        to = normalize_account(_arg(rec, "to"))
        liquidity = int(_arg(rec, "liquidity"))
        amount0 = int(_arg(rec, "amount0"))
        amount1 = int(_arg(rec, "amount1"))
        if liquidity == 0 and amount0 == 0 and amount1 == 0:
            return []
        token_out, value_out = (info.token0, amount0) if amount0 >= amount1 else (info.token1, amount1)
        return [WithdrawalRecord(withdrawer=to, token_out=token_out, value_out=value_out,
                                 expected_value_in=liquidity, token_in=info.pool, **common)]
    return []


def extract_candidates(records: Iterable[CallRecord], registry: PoolRegistry,
                       pool: str) -> tuple[list[DepositRecord], list[WithdrawalRecord]]:
    """Select the deposits into and withdrawals from one registered pool.

    Deposits are successful ``transfer``/``transferFrom`` calls on the pool's
    tokens (and its LP token, for burns) whose receiver is the pool.  Liquidity
    workflow transfers are kept; they get matched against ``mint`` later.
    """
    pool = normalize_account(pool)
    info = registry.get(pool)
    deposit_tokens = {info.token0, info.token1, info.pool}
    deposits: list[DepositRecord] = []
    withdrawals: list[WithdrawalRecord] = []
    for rec in records:
        if not rec.success:
            continue
        callee = rec.callee_contract
        if callee == pool and rec.callee_func in WITHDRAWAL_FUNCS:
            withdrawals.extend(withdrawals_from_call(rec, info))
        elif callee in deposit_tokens and rec.callee_func in DEPOSIT_FUNCS:
            d = deposit_from_call(rec, pool)
            if d is not None:
                deposits.append(d)
    deposits.sort(key=lambda r: r.key)
    withdrawals.sort(key=lambda r: r.key)
    return deposits, withdrawals
