"""Domain types shared by every stage: call records, value movements, classifications."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields
from functools import lru_cache
from typing import Any, Optional


def normalize_account(value: str) -> str:
    """Canonical account form: lowercase, 0x-prefixed hex."""
    if not isinstance(value, str):
        raise ValueError("account id must be a non-empty string")
    return _normalize(value)


@lru_cache(maxsize=1 << 16)
def _normalize(value: str) -> str:
    if not value.strip():
        raise ValueError("account id must be a non-empty string")
    v = value.strip().lower()
    if not v.startswith("0x"):
        v = "0x" + v
    if len(v) == 2:
        raise ValueError("account id must be a non-empty string")
    return v


@dataclass(frozen=True, order=True)
class CallSeq:
    """Position of a call in its transaction's call tree.

    A digit string such as ``"032"`` is read one digit per tree level;
    dotted strings (``"0.3.12"``) allow more than ten children per level.
    """

    segments: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("call_seq must be non-empty")
        if any((not isinstance(s, int)) or s < 0 for s in self.segments):
            raise ValueError(f"call_seq segments must be non-negative ints: {self.segments}")

    @classmethod
    def parse(cls, text: str | int | list | tuple) -> "CallSeq":
        if isinstance(text, CallSeq):
            return text
        if isinstance(text, (list, tuple)):
            return cls(tuple(int(s) for s in text))
        if isinstance(text, int):
            text = str(text)
        return _parse_seq(text)

    def __str__(self) -> str:
        return _format_seq(self.segments)

    def child(self, index: int) -> "CallSeq":
        return CallSeq(self.segments + (index,))


@lru_cache(maxsize=1 << 14)
def _format_seq(segments: tuple[int, ...]) -> str:
    if len(segments) == 1 and segments[0] > 9:
        # a trailing dot keeps "10." from reading back as digits 1, 0
        return f"{segments[0]}."
    return ".".join(str(s) for s in segments)


@lru_cache(maxsize=1 << 14)
def _parse_seq(text: str) -> CallSeq:
    text = text.strip()
    if not text:
        raise ValueError("empty call_seq")
    if "." in text:
        parts = text.split(".")
        if len(parts) == 2 and parts[1] == "":
            parts = parts[:1]
        return CallSeq(tuple(int(s) for s in parts))
    if not text.isdigit():
        raise ValueError(f"bad call_seq {text!r}")
    return CallSeq(tuple(int(c) for c in text))


def is_prefix_call(parent: CallSeq, child: CallSeq) -> bool:
    """True iff ``parent`` is a strict ancestor of ``child`` in the call tree."""
    p, c = parent.segments, child.segments
    return len(p) < len(c) and c[: len(p)] == p


@dataclass(frozen=True)
class Transfer:
    sender: str
    receiver: str
    token: str
    value: int
    chain: str
    data: bytes
    txid: str

    def __post_init__(self) -> None:
        if self.value < 0:
            raise ValueError("transfer value must be non-negative")
        if not self.txid:
            raise ValueError("txid must be non-empty")
        if not self.chain:
            raise ValueError("chain must be non-empty")


@dataclass(frozen=True)
class CallRecord:
    txid: str
    block: int
    tx_index: int
    call_seq: CallSeq
    caller: str
    callee_contract: str
    callee_func: str
    args: dict = field(default_factory=dict, compare=False, hash=False)
    gas: int = 0
    gas_price: int = 0
    success: bool = True
    chain: str = "eth"
    timestamp: Optional[int] = None

    @property
    def key(self) -> tuple:
        return (self.block, self.tx_index, self.call_seq.segments)

    def to_dict(self) -> dict:
        d = {
            "txid": self.txid,
            "block": self.block,
            "tx_index": self.tx_index,
            "chain": self.chain,
            "caller": self.caller,
            "callee_contract": self.callee_contract,
            "callee_func": self.callee_func,
            "call_seq": str(self.call_seq),
            "args": self.args,
            "gas": self.gas,
            "gas_price": self.gas_price,
            "success": self.success,
        }
        if self.timestamp is not None:
            d["timestamp"] = self.timestamp
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CallRecord":
        return cls(
            txid=d["txid"],
            block=int(d["block"]),
            tx_index=int(d["tx_index"]),
            call_seq=CallSeq.parse(d["call_seq"]),
            caller=normalize_account(d["caller"]),
            callee_contract=normalize_account(d["callee_contract"]),
            callee_func=d["callee_func"],
            args=dict(d.get("args") or {}),
            gas=int(d.get("gas", 0)),
            gas_price=int(d.get("gas_price", 0)),
            success=bool(d.get("success", True)),
            chain=d.get("chain", "eth"),
            timestamp=None if d.get("timestamp") is None else int(d["timestamp"]),
        )


class Ordering(enum.IntEnum):
    LESS = -1
    EQUAL = 0
    GREATER = 1


def stream_order(a: CallRecord, b: CallRecord) -> Ordering:
    ka, kb = a.key, b.key
    if ka < kb:
        return Ordering.LESS
    if ka > kb:
        return Ordering.GREATER
    return Ordering.EQUAL


@dataclass(frozen=True)
class DepositRecord:
    depositor: str
    pool: str
    token: str
    value: int
    txid: str
    block: int
    tx_index: int
    call_seq: CallSeq
    origin_func: str  # transfer | transferFrom

    def __post_init__(self) -> None:
        if self.value <= 0:
            raise ValueError("deposit value must be positive")

    @property
    def key(self) -> tuple:
        return (self.block, self.tx_index, self.call_seq.segments)

    @property
    def ref(self) -> str:
        return f"{self.txid}:{self.call_seq}:d"


@dataclass(frozen=True)
class WithdrawalRecord:
    """A pool-side withdrawal and the deposit-token value it consumes.

    ``token_in`` names the token of ``expected_value_in``; it selects the
    matching stream the withdrawal belongs to.
    """

    withdrawer: str
    pool: str
    token_out: str
    value_out: int
    expected_value_in: int
    txid: str
    block: int
    tx_index: int
    call_seq: CallSeq
    origin_func: str  # swap | mint | burn
    token_in: str = ""

    def __post_init__(self) -> None:
        if self.value_out < 0 or self.expected_value_in < 0:
            raise ValueError("withdrawal values must be non-negative")
        if self.value_out == 0 and self.expected_value_in == 0:
            raise ValueError("withdrawal must move some value")

    @property
    def key(self) -> tuple:
        return (self.block, self.tx_index, self.call_seq.segments)

    @property
    def ref(self) -> str:
        return f"{self.txid}:{self.call_seq}:w:{self.token_in}"


class ViolationKind(str, enum.Enum):
    I_STANDALONE_WITHDRAWAL = "I"
    II_STANDALONE_DEPOSIT = "II"
    III_ACCOUNT_MISMATCH = "III"
    IV_LOWER_VALUE_DEPOSIT = "IV"
    V_HIGHER_VALUE_DEPOSIT = "V"
    INTERLEAVED = "Interleaved"


class AnomalyClass(str, enum.Enum):
    A_ATOMIC = "A"
    U_UNDERWATER = "U"
    F_FREERIDER = "F"
    D_DISCOUNT = "D"
    O_OVERCHARGE = "O"


ANOMALY_OF_KIND: dict[ViolationKind, Optional[AnomalyClass]] = {
    ViolationKind.I_STANDALONE_WITHDRAWAL: AnomalyClass.F_FREERIDER,
    ViolationKind.II_STANDALONE_DEPOSIT: AnomalyClass.U_UNDERWATER,
    ViolationKind.III_ACCOUNT_MISMATCH: None,
    ViolationKind.IV_LOWER_VALUE_DEPOSIT: AnomalyClass.D_DISCOUNT,
    ViolationKind.V_HIGHER_VALUE_DEPOSIT: AnomalyClass.O_OVERCHARGE,
    ViolationKind.INTERLEAVED: None,
}


# -- serialization -----------------------------------------------------------

_RECORD_TYPES = {"deposit": DepositRecord, "withdrawal": WithdrawalRecord, "call": CallRecord}


def encode(obj: Any) -> Any:
    """Encode domain values to JSON-compatible structures."""
    if isinstance(obj, CallSeq):
        return str(obj)
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, bytes):
        return obj.hex()
    if isinstance(obj, CallRecord):
        return {"type": "call", **obj.to_dict()}
    if isinstance(obj, (DepositRecord, WithdrawalRecord, Transfer)):
        tag = {DepositRecord: "deposit", WithdrawalRecord: "withdrawal", Transfer: "transfer"}[type(obj)]
        out = {"type": tag}
        for f in fields(obj):
            out[f.name] = encode(getattr(obj, f.name))
        return out
    if isinstance(obj, (list, tuple)):
        return [encode(x) for x in obj]
    if isinstance(obj, dict):
        return {k: encode(v) for k, v in obj.items()}
    return obj


def decode(data: dict) -> Any:
    tag = data.get("type")
    if tag == "call":
        return CallRecord.from_dict(data)
    if tag == "transfer":
        kw = {k: v for k, v in data.items() if k != "type"}
        kw["data"] = bytes.fromhex(kw["data"])
        return Transfer(**kw)
    if tag in ("deposit", "withdrawal"):
        kw = {k: v for k, v in data.items() if k != "type"}
        kw["call_seq"] = CallSeq.parse(kw["call_seq"])
        return _RECORD_TYPES[tag](**kw)
    raise ValueError(f"unknown encoded type {tag!r}")
