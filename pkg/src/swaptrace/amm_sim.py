"""Constant-product AMM simulator emitting labeled call traces.

Pools track reserves separately from token balances; rebases, interest and
airdrops move balances only, and the difference is what a permissionless
withdrawal can claim.  Agents trade fairly, leave value behind (external
transfers, buggy routers) or race to claim it.  Every non-fair event is
planned as an *episode* on a reserved pool so that labels are exact.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

from .ingest import PoolInfo, PoolRegistry, Protocol, dump_trace
from .trace_model import CallRecord, CallSeq, ViolationKind

# blocks kept free of other traffic after an episode: the frontrunning window
# plus one
QUIET_BLOCKS = 11


class InvalidScenario(ValueError):
    pass


class EmptyPool(ValueError):
    pass


# -- pool arithmetic -----------------------------------------------------------

@dataclass
class PoolState:
    reserve0: int
    reserve1: int
    balance0: int
    balance1: int
    fee_bps: int = 0
    lp_supply: int = 0

    @classmethod
    def fresh(cls, reserve0: int, reserve1: int, fee_bps: int = 0) -> "PoolState":
        return cls(reserve0, reserve1, reserve0, reserve1, fee_bps, math.isqrt(reserve0 * reserve1))

    def reserve(self, side: int) -> int:
        return self.reserve0 if side == 0 else self.reserve1

    def balance(self, side: int) -> int:
        return self.balance0 if side == 0 else self.balance1

    def extractable(self, side: int) -> int:
        return self.balance(side) - self.reserve(side)

    def _add(self, side: int, reserve: int = 0, balance: int = 0) -> None:
        if side == 0:
            self.reserve0 += reserve
            self.balance0 += balance
        else:
            self.reserve1 += reserve
            self.balance1 += balance

    def sync(self) -> None:
        self.reserve0, self.reserve1 = self.balance0, self.balance1


def quote(pool: PoolState, dx: int, direction: int) -> int:
    """Output of a swap of ``dx`` units of token ``direction`` without applying it."""
    if dx <= 0:
        raise ValueError("swap input must be positive")
    x, y = pool.reserve(direction), pool.reserve(1 - direction)
    if x <= 0 or y <= 0:
        raise EmptyPool("pool has an empty reserve")
    dx_eff = dx * (10_000 - pool.fee_bps) // 10_000
    k = x * y
    # floor(y - k / (x + dx)) == y - ceil(k / (x + dx))
    return y - (-(-k // (x + dx_eff)))


def fair_swap(pool: PoolState, dx: int, direction: int) -> int:
    """Swap ``dx`` of token ``direction`` (0 or 1) in; returns the output amount."""
    dy = quote(pool, dx, direction)
    pool._add(direction, reserve=dx, balance=dx)
    pool._add(1 - direction, reserve=-dy, balance=-dy)
    return dy


def claim_swap(pool: PoolState, direction: int) -> tuple[int, int]:
    """Swap the untracked balance of token ``direction`` out; returns (input, output)."""
    dx = pool.extractable(direction)
    if dx <= 0:
        raise ValueError("nothing to claim")
    dy = quote(pool, dx, direction)
    pool._add(direction, reserve=dx)
    pool._add(1 - direction, reserve=-dy, balance=-dy)
    return dx, dy


def apply_rebase(pool: PoolState, side: int, factor: Fraction) -> int:
    factor = Fraction(factor)
    if factor <= 0:
        raise ValueError("rebase factor must be positive")
    new = pool.balance(side) * factor.numerator // factor.denominator
    delta = new - pool.balance(side)
    pool._add(side, balance=delta)
    return delta


def accrue_interest(pool: PoolState, side: int, rate: Fraction, blocks: int) -> int:
    """Simple interest on the pool's balance over ``blocks`` blocks."""
    rate = Fraction(rate)
    if rate < 0 or blocks < 0:
        raise ValueError("rate and blocks must be non-negative")
    gained = pool.balance(side) * rate.numerator * blocks // rate.denominator
    pool._add(side, balance=gained)
    return gained


def apply_airdrop(pool: PoolState, side: int, amount: int) -> int:
    if amount < 0:
        raise ValueError("airdrop amount must be non-negative")
    pool._add(side, balance=amount)
    return amount


def apply_shareholder_fee(pool: PoolState, side: int, amount: int, fee_bps: int, supply: int) -> int:
    """Credit the pool's pro-rata share of a transfer fee redistributed to holders."""
    if supply <= 0:
        raise ValueError("supply must be positive")
    share = amount * fee_bps * pool.balance(side) // (10_000 * supply)
    pool._add(side, balance=share)
    return share


# -- scenario model ------------------------------------------------------------

@dataclass
class TokenBehavior:
    rebase_events: list[tuple[int, Fraction]] = field(default_factory=list)
    interest_rate_per_block: Fraction = Fraction(0)
    airdrop_events: list[tuple[int, int]] = field(default_factory=list)
    shareholder_fee_bps: int = 0
    # (block, transfer amount) of holder-to-holder transfers charged the fee
    fee_transfers: list[tuple[int, int]] = field(default_factory=list)
    total_supply: int = 0

    def __post_init__(self) -> None:
        self.rebase_events = [(int(b), Fraction(f)) for b, f in self.rebase_events]
        self.airdrop_events = [(int(b), int(a)) for b, a in self.airdrop_events]
        self.fee_transfers = [(int(b), int(a)) for b, a in self.fee_transfers]
        self.interest_rate_per_block = Fraction(self.interest_rate_per_block)
        if any(f <= 0 for _, f in self.rebase_events):
            raise InvalidScenario("rebase factor must be positive")
        if self.interest_rate_per_block < 0:
            raise InvalidScenario("interest rate must be non-negative")

    def to_dict(self) -> dict:
        return {
            "rebase_events": [[b, str(f)] for b, f in self.rebase_events],
            "interest_rate_per_block": str(self.interest_rate_per_block),
            "airdrop_events": [[b, a] for b, a in self.airdrop_events],
            "shareholder_fee_bps": self.shareholder_fee_bps,
            "fee_transfers": [[b, a] for b, a in self.fee_transfers],
            "total_supply": self.total_supply,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TokenBehavior":
        return cls(
            rebase_events=[(b, Fraction(f)) for b, f in d.get("rebase_events", [])],
            interest_rate_per_block=Fraction(d.get("interest_rate_per_block", "0")),
            airdrop_events=[(b, a) for b, a in d.get("airdrop_events", [])],
            shareholder_fee_bps=int(d.get("shareholder_fee_bps", 0)),
            fee_transfers=[(b, a) for b, a in d.get("fee_transfers", [])],
            total_supply=int(d.get("total_supply", 0)),
        )


class AgentKind(str, enum.Enum):
    FAIR_TRADER = "FairTrader"
    EXTERNAL_TRANSFER_TRADER = "ExternalTransferTrader"
    BUGGY_ROUTER_TRADER = "BuggyRouterTrader"
    AGGRESSIVE_ATTACKER = "AggressiveAttacker"
    GENERAL_ATTACKER = "GeneralAttacker"
    SCAVENGER = "Scavenger"
    POOL_SAFEGUARD = "PoolSafeguard"


STRATEGY = {
    AgentKind.AGGRESSIVE_ATTACKER: "A1",
    AgentKind.GENERAL_ATTACKER: "A2",
    AgentKind.SCAVENGER: "A3",
}

DEFAULT_PARAMS = {
    AgentKind.FAIR_TRADER: {"count": 1},
    AgentKind.EXTERNAL_TRANSFER_TRADER: {"count": 1, "episodes": 1, "attack_prob": 0.5, "retry_gap": [30, 40]},
    AgentKind.BUGGY_ROUTER_TRADER: {"count": 1, "episodes": 1, "attack_prob": 0.5},
    AgentKind.AGGRESSIVE_ATTACKER: {"count": 1, "gap": [0, 1], "patterns": ["P1", "P3", "P4"]},
    AgentKind.GENERAL_ATTACKER: {"count": 1, "gap": [1, 1], "patterns": ["P1", "P3", "P4"], "probe": True},
    AgentKind.SCAVENGER: {"count": 1, "gap": [1, 1000], "patterns": ["P1"]},
    AgentKind.POOL_SAFEGUARD: {"count": 1, "episodes": 1},
}


@dataclass
class AgentSpec:
    kind: AgentKind
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.kind = AgentKind(self.kind)
        merged = dict(DEFAULT_PARAMS[self.kind])
        merged.update(self.params)
        self.params = merged

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "params": self.params}


@dataclass
class PoolSpec:
    pool: str
    token0: str
    token1: str
    reserve0: int
    reserve1: int
    fee_bps: int = 0
    protocol: Protocol = Protocol.UNISWAP_V2_LIKE

    def __post_init__(self) -> None:
        self.protocol = Protocol(self.protocol)

    def to_dict(self) -> dict:
        return {"pool": self.pool, "token0": self.token0, "token1": self.token1,
                "reserve0": self.reserve0, "reserve1": self.reserve1, "fee_bps": self.fee_bps,
                "protocol": self.protocol.value}


@dataclass
class Scenario:
    pools: list[PoolSpec]
    behaviors: dict[str, TokenBehavior] = field(default_factory=dict)
    agents: list[AgentSpec] = field(default_factory=list)
    horizon_blocks: int = 1000
    seed: int = 0
    # expected fair transactions per pool and block
    fair_rate: float = 0.5

    def validate(self) -> None:
        if self.horizon_blocks <= 0:
            raise InvalidScenario("horizon must be positive")
        if not self.pools:
            raise InvalidScenario("scenario needs at least one pool")
        seen = set()
        for p in self.pools:
            if p.pool in seen:
                raise InvalidScenario(f"duplicate pool {p.pool}")
            seen.add(p.pool)
            if p.token0 == p.token1:
                raise InvalidScenario(f"pool {p.pool}: token0 == token1")
            if p.reserve0 <= 0 or p.reserve1 <= 0:
                raise InvalidScenario(f"pool {p.pool}: reserves must be positive")
            if not 0 <= p.fee_bps < 10_000:
                raise InvalidScenario(f"pool {p.pool}: bad fee")
        if self.fair_rate < 0:
            raise InvalidScenario("fair_rate must be non-negative")

    def registry(self) -> PoolRegistry:
        return PoolRegistry(PoolInfo(p.pool, p.token0, p.token1, p.protocol) for p in self.pools)

    def to_dict(self) -> dict:
        return {
            "pools": [p.to_dict() for p in self.pools],
            "behaviors": {t: b.to_dict() for t, b in sorted(self.behaviors.items())},
            "agents": [a.to_dict() for a in self.agents],
            "horizon_blocks": self.horizon_blocks,
            "seed": self.seed,
            "fair_rate": self.fair_rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        try:
            sc = cls(
                pools=[PoolSpec(**p) for p in d["pools"]],
                behaviors={t: TokenBehavior.from_dict(b) for t, b in d.get("behaviors", {}).items()},
                agents=[AgentSpec(a["kind"], a.get("params", {})) for a in d.get("agents", [])],
                horizon_blocks=int(d.get("horizon_blocks", 1000)),
                seed=int(d.get("seed", 0)),
                fair_rate=float(d.get("fair_rate", 0.5)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidScenario(str(exc)) from None
        sc.validate()
        return sc

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class LabelKind(str, enum.Enum):
    ATOMIC_SWAP = "AtomicSwap"
    ATOMIC_ADD_LIQUIDITY = "AtomicAddLiquidity"
    VIOLATION = "Violation"
    THEFT = "Theft"
    LOST_TOKEN = "LostToken"


@dataclass(frozen=True)
class GroundTruthLabel:
    label: LabelKind
    txids: tuple[str, ...]
    kind: Optional[ViolationKind] = None
    pattern: Optional[str] = None
    strategy: Optional[str] = None
    attacker: Optional[str] = None
    victim: Optional[str] = None
    pool: Optional[str] = None
    token: Optional[str] = None
    block_gap: Optional[int] = None
    competitors: int = 0

    def to_dict(self) -> dict:
        return {
            "label": self.label.value, "txids": list(self.txids),
            "kind": self.kind.value if self.kind else None, "pattern": self.pattern,
            "strategy": self.strategy, "attacker": self.attacker, "victim": self.victim,
            "pool": self.pool, "token": self.token, "block_gap": self.block_gap,
            "competitors": self.competitors,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruthLabel":
        return cls(
            label=LabelKind(d["label"]), txids=tuple(d["txids"]),
            kind=ViolationKind(d["kind"]) if d.get("kind") else None, pattern=d.get("pattern"),
            strategy=d.get("strategy"), attacker=d.get("attacker"), victim=d.get("victim"),
            pool=d.get("pool"), token=d.get("token"), block_gap=d.get("block_gap"),
            competitors=int(d.get("competitors", 0)),
        )


@dataclass
class SimResult:
    records: list[CallRecord]
    labels: list[GroundTruthLabel]
    registry: PoolRegistry
    states: dict[str, PoolState]
    # untracked value injected and not yet withdrawn, per (pool, side)
    injected: dict[tuple[str, int], int]

    @property
    def trace(self) -> str:
        return dump_trace(self.records)

    def labels_jsonl(self) -> str:
        return "".join(json.dumps(lb.to_dict(), separators=(",", ":")) + "\n" for lb in self.labels)


# -- simulation ----------------------------------------------------------------

def _address(*parts) -> str:
    h = hashlib.sha256(":".join(str(p) for p in parts).encode()).hexdigest()
    return "0x" + h[:40]


@dataclass
class _Agent:
    kind: AgentKind
    account: str
    params: dict


@dataclass
class _Tx:
    block: int
    phase: int
    order: int
    sender: str
    calls: list = field(default_factory=list)
    txid: str = ""

    def add(self, seq: str, caller: str, contract: str, func: str, args: dict, success: bool = True):
        self.calls.append((seq, caller, contract, func, args, success))


class _Sim:
    def __init__(self, sc: Scenario):
        sc.validate()
        self.sc = sc
        self.rng = random.Random(sc.seed)
        self.specs = {p.pool: p for p in sc.pools}
        self.states = {p.pool: PoolState.fresh(p.reserve0, p.reserve1, p.fee_bps) for p in sc.pools}
        self.injected: dict[tuple[str, int], int] = {}
        self.last_accrual: dict[str, int] = {}
        self.reserved: dict[str, list[tuple[int, int]]] = {p.pool: [] for p in sc.pools}
        self.free_at = {p.pool: 1 for p in sc.pools}
        self.steps: dict[int, list[tuple[int, int, Callable]]] = {}
        self.txs: list[_Tx] = []
        self.labels: list[GroundTruthLabel] = []
        self.lp: dict[tuple[str, str], int] = {}
        self.counter = 0
        self.router = _address(sc.seed, "router")
        self.keeper = _address(sc.seed, "keeper")
        self.agents: list[_Agent] = []
        for idx, spec in enumerate(sc.agents):
            for i in range(int(spec.params.get("count", 1))):
                acct = spec.params.get("accounts", [None] * (i + 1))[i] if "accounts" in spec.params else None
                self.agents.append(_Agent(spec.kind, acct or _address(sc.seed, spec.kind.value, idx, i), spec.params))
        self.fair = [a for a in self.agents if a.kind is AgentKind.FAIR_TRADER]
        if not self.fair:
            self.fair = [_Agent(AgentKind.FAIR_TRADER, _address(sc.seed, "fair", 0), {})]

    # -- helpers --
    def tx(self, block: int, phase: int, sender: str) -> _Tx:
        self.counter += 1
        t = _Tx(block, phase, self.counter, sender)
        t.txid = "0x" + hashlib.sha256(f"{self.sc.seed}:{self.counter}".encode()).hexdigest()
        self.txs.append(t)
        return t

    def at(self, block: int, phase: int, fn: Callable) -> None:
        self.counter += 1
        self.steps.setdefault(block, []).append((phase, self.counter, fn))

    def reserve_pools(self, pools: list[str], start: int, end: int) -> None:
        for p in pools:
            self.reserved[p].append((start, end + QUIET_BLOCKS))
            self.free_at[p] = end + QUIET_BLOCKS + 1

    def is_reserved(self, pool: str, block: int) -> bool:
        return any(a <= block <= b for a, b in self.reserved[pool])

    def slot(self, pools: list[str], wanted: int, length: int) -> Optional[int]:
        start = max([wanted] + [self.free_at[p] for p in pools])
        if start + length + QUIET_BLOCKS > self.sc.horizon_blocks:
            return None
        return start

    def side_of(self, pool: str, token: str) -> int:
        return 0 if self.specs[pool].token0 == token else 1

    def label(self, what: LabelKind, txids, **kw) -> None:
        self.labels.append(GroundTruthLabel(what, tuple(txids), **kw))

    # -- fair operations --
    def fair_swap_tx(self, block: int, phase: int, pool: str, trader: str, side: Optional[int] = None) -> _Tx:
        spec, st = self.specs[pool], self.states[pool]
        if side is None:
            side = self.rng.randint(0, 1)
        token_in = spec.token0 if side == 0 else spec.token1
        dx = max(1, st.reserve(side) * self.rng.randint(1, 20) // 1000)
        dy = fair_swap(st, dx, side)
        t = self.tx(block, phase, trader)
        if self.rng.random() < 0.5:
            t.add("0", trader, self.router, "swapExactTokensForTokens", {"amountIn": dx, "pool": pool})
            t.add("0.0", self.router, token_in, "transferFrom", {"from": trader, "to": pool, "amount": dx})
            t.add("0.1", self.router, pool, "swap", {"amountIn": dx, "amountOut": dy, "to": trader, "tokenIn": token_in})
        else:
            t.add("0", trader, trader, "execute", {})
            t.add("0.0", trader, token_in, "transfer", {"to": pool, "amount": dx})
            t.add("0.1", trader, pool, "swap", {"amountIn": dx, "amountOut": dy, "to": trader, "tokenIn": token_in})
        self.label(LabelKind.ATOMIC_SWAP, [t.txid], pool=pool, token=token_in)
        return t

    def fair_mint_tx(self, block: int, pool: str, trader: str) -> None:
        spec, st = self.specs[pool], self.states[pool]
        a0 = max(1, st.reserve0 * self.rng.randint(1, 20) // 1000)
        a1 = max(1, a0 * st.reserve1 // st.reserve0)
        liq = min(a0 * st.lp_supply // st.reserve0, a1 * st.lp_supply // st.reserve1)
        if liq <= 0:
            return
        st._add(0, reserve=a0, balance=a0)
        st._add(1, reserve=a1, balance=a1)
        st.lp_supply += liq
        self.lp[(pool, trader)] = self.lp.get((pool, trader), 0) + liq
        t = self.tx(block, 0, trader)
        t.add("0", trader, self.router, "addLiquidity", {"pool": pool})
        t.add("0.0", self.router, spec.token0, "transferFrom", {"from": trader, "to": pool, "amount": a0})
        t.add("0.1", self.router, spec.token1, "transferFrom", {"from": trader, "to": pool, "amount": a1})
        t.add("0.2", self.router, pool, "mint", {"amount0": a0, "amount1": a1, "liquidity": liq, "to": trader})
        self.label(LabelKind.ATOMIC_ADD_LIQUIDITY, [t.txid], pool=pool)

    def fair_burn_tx(self, block: int, pool: str, trader: str) -> bool:
        held = self.lp.get((pool, trader), 0)
        if held <= 0:
            return False
        spec, st = self.specs[pool], self.states[pool]
        liq = max(1, held // 2)
        a0 = liq * st.reserve0 // st.lp_supply
        a1 = liq * st.reserve1 // st.lp_supply
        if a0 <= 0 and a1 <= 0:
            return False
        st._add(0, reserve=-a0, balance=-a0)
        st._add(1, reserve=-a1, balance=-a1)
        st.lp_supply -= liq
        self.lp[(pool, trader)] = held - liq
        t = self.tx(block, 0, trader)
        t.add("0", trader, self.router, "removeLiquidity", {"pool": pool})
        t.add("0.0", self.router, pool, "transferFrom", {"from": trader, "to": pool, "amount": liq})
        t.add("0.1", self.router, pool, "burn", {"liquidity": liq, "amount0": a0, "amount1": a1, "to": trader})
        self.label(LabelKind.ATOMIC_ADD_LIQUIDITY, [t.txid], pool=pool)
        return True

    def fair_traffic(self, block: int) -> None:
        rate = self.sc.fair_rate
        for pool in self.specs:
            if self.is_reserved(pool, block):
                continue
            n = int(rate) + (1 if self.rng.random() < rate - int(rate) else 0)
            for _ in range(n):
                trader = self.rng.choice(self.fair).account
                r = self.rng.random()
                if r < 0.08:
                    self.fair_mint_tx(block, pool, trader)
                elif r < 0.12 and self.fair_burn_tx(block, pool, trader):
                    pass
                else:
                    self.fair_swap_tx(block, 0, pool, trader)

    # -- races --
    def racers(self, pattern: str, token: Optional[str] = None) -> list[tuple[_Agent, int]]:
        # an agent with a "tokens" list only hunts value in those tokens
        eligible = [a for a in self.agents if a.kind in STRATEGY and pattern in a.params.get("patterns", [])
                    and (token is None or "tokens" not in a.params or token in a.params["tokens"])]
        if not eligible:
            return []
        k = self.rng.randint(1, len(eligible))
        chosen = self.rng.sample(eligible, k)
        out = []
        for a in chosen:
            lo, hi = a.params.get("gap", [0, 1])
            out.append((a, self.rng.randint(int(lo), int(hi))))
        out.sort(key=lambda ag: ag[1])
        return out

    def claim_tx(self, block: int, phase: int, agent: _Agent, pool: str, token: str, success: bool,
                 amount: int = 0, out: int = 0, pre_calls: list = ()) -> _Tx:
        me = agent.account
        t = self.tx(block, phase, me)
        t.add("0", me, me, "execute", {})
        idx = 0
        for contract, func, args in pre_calls:
            t.add(f"0.{idx}", me, contract, func, args)
            idx += 1
        if agent.params.get("probe"):
            t.add(f"0.{idx}", me, pool, "getReserves", {})
            t.add(f"0.{idx + 1}", me, token, "balanceOf", {"account": pool})
            idx += 2
        t.add(f"0.{idx}", me, pool, "swap", {"amountIn": amount, "amountOut": out, "to": me, "tokenIn": token},
              success=success)
        return t

    def probe_tx(self, block: int, phase: int, agent: _Agent, pool: str, token: str) -> None:
        me = agent.account
        t = self.tx(block, phase, me)
        t.add("0", me, me, "execute", {})
        t.add("0.0", me, pool, "getReserves", {})
        t.add("0.1", me, token, "balanceOf", {"account": pool})

    def run_claim(self, pool: str, token: str, origin: int, racers, pattern: str, kind: ViolationKind,
                  victim_tx: Optional[_Tx] = None, victim: Optional[str] = None, pre: Callable = None) -> None:
        """Schedule the winner's claim and the losers' failed attempts."""
        side = self.side_of(pool, token)
        winner, wgap = racers[0]
        for rank, (agent, gap) in enumerate(racers):
            if rank > 0 and gap > wgap + 10:
                continue
            block = origin + gap
            if agent.params.get("probe") and gap >= 1:
                self.at(block - 1, 5, lambda b, a=agent: self.probe_tx(b, 5, a, pool, token))

            def step(b, agent=agent, rank=rank):
                pre_calls = pre(b) if pre is not None else []
                if rank == 0:
                    dx, dy = claim_swap(self.states[pool], side)
                    self.injected[(pool, side)] = self.injected.get((pool, side), 0) - dx
                    t = self.claim_tx(b, 2 + rank, agent, pool, token, True, dx, dy, pre_calls)
                    txids = [victim_tx.txid, t.txid] if victim_tx is not None else [t.txid]
                    self.label(LabelKind.THEFT, txids, kind=kind, pattern=pattern,
                               strategy=STRATEGY[agent.kind], attacker=agent.account, victim=victim,
                               pool=pool, token=token, block_gap=wgap, competitors=len(racers) - 1)
                else:
                    self.claim_tx(b, 2 + rank, agent, pool, token, False, 0, 0)
            self.at(block, 2 + rank, step)

    def span(self, racers) -> int:
        if not racers:
            return 1
        wgap = racers[0][1]
        return max(g for i, (_, g) in enumerate(racers) if i == 0 or g <= wgap + 10) + 1

    # -- episodes --
    def settle(self, pool: str, token: str, block: int) -> None:
        trader = self.rng.choice(self.fair).account
        self.at(block, 0, lambda b: self.fair_swap_tx(b, 0, pool, trader, self.side_of(pool, token)))

    def plan_balance_event(self, token: str, block: int, marker: str, apply: Callable, args: dict) -> None:
        """P1: a token-wide balance change, claimed on every V2 pool holding the token."""
        pools = [p for p, s in self.specs.items() if token in (s.token0, s.token1)
                 and s.protocol is Protocol.UNISWAP_V2_LIKE]
        plans = {p: self.racers("P1", token) for p in pools}
        pools = [p for p in pools if plans[p]]
        if not pools:
            return
        length = 1 + max(self.span(plans[p]) for p in pools)
        start = self.slot(pools, block - 1, length)
        if start is None:
            return
        mark = start + 1
        self.reserve_pools(pools, start, start + length)
        for p in pools:
            self.settle(p, token, start)

        def marker_step(b):
            owner = _address(self.sc.seed, "owner", token)
            t = self.tx(b, 1, owner)
            t.add("0", owner, token, marker, dict(args))
            for p in pools:
                side = self.side_of(p, token)
                delta = apply(self.states[p], side)
                self.injected[(p, side)] = self.injected.get((p, side), 0) + delta
        self.at(mark, 1, marker_step)
        for p in pools:
            self.run_claim(p, token, mark, plans[p], "P1", ViolationKind.I_STANDALONE_WITHDRAWAL)

    def plan_interest(self, token: str, rate: Fraction, wanted: int) -> bool:
        pools = [p for p, s in self.specs.items() if token in (s.token0, s.token1)
                 and s.protocol is Protocol.UNISWAP_V2_LIKE]
        if not pools:
            return False
        pool = self.rng.choice(pools)
        racers = self.racers("P2", token)
        if not racers:
            return False
        length = self.span(racers)
        start = self.slot([pool], wanted, length)
        if start is None:
            return False
        self.reserve_pools([pool], start, start + length)
        self.settle(pool, token, start)
        side = self.side_of(pool, token)
        self.at(start, 1, lambda b: self.last_accrual.__setitem__(pool, b))

        def accrue(b):
            # interest materializes when someone calls accrueInterest
            if self.last_accrual.get(pool, b) < b:
                gained = accrue_interest(self.states[pool], side, rate, b - self.last_accrual[pool])
                self.injected[(pool, side)] = self.injected.get((pool, side), 0) + gained
                self.last_accrual[pool] = b
            return [(token, "accrueInterest", {"account": pool})]
        self.run_claim(pool, token, start, racers, "P2", ViolationKind.I_STANDALONE_WITHDRAWAL, pre=accrue)
        return True

    def plan_external_transfer(self, agent: _Agent, wanted: int) -> bool:
        pool = self.rng.choice(list(self.specs))
        spec = self.specs[pool]
        side = self.rng.randint(0, 1)
        token = spec.token0 if side == 0 else spec.token1
        victim = agent.account
        if spec.protocol is Protocol.UNISWAP_V3_LIKE:
            lo, hi = agent.params.get("retry_gap", [30, 40])
            retry = self.rng.randint(int(lo), int(hi))
            start = self.slot([pool], wanted, retry + 1)
            if start is None:
                return False
            self.reserve_pools([pool], start, start + retry + 1)
            self.settle(pool, token, start)
            box = {}

            def lost(b):
                st = self.states[pool]
                dx = max(1, st.reserve(side) * self.rng.randint(1, 20) // 1000)
                box["dx"] = dx
                t = self.tx(b, 1, victim)
                t.add("0", victim, token, "transfer", {"to": pool, "amount": dx})
                # the pool never credits it: balance grows, nothing is claimable
                st._add(side, reserve=dx, balance=dx)
                box["tx"] = t

            def retry_step(b):
                st = self.states[pool]
                dx = box["dx"]
                dy = fair_swap(st, dx, side)
                t = self.tx(b, 1, victim)
                t.add("0", victim, self.router, "exactInputSingle", {"amountIn": dx, "pool": pool})
                t.add("0.0", self.router, token, "transferFrom", {"from": victim, "to": pool, "amount": dx})
                t.add("0.1", self.router, pool, "swap", {"amountIn": dx, "amountOut": dy, "to": victim, "tokenIn": token})
                self.label(LabelKind.ATOMIC_SWAP, [t.txid], pool=pool, token=token)
                self.label(LabelKind.LOST_TOKEN, [box["tx"].txid, t.txid], kind=ViolationKind.II_STANDALONE_DEPOSIT,
                           pattern="P3", victim=victim, pool=pool, token=token, block_gap=retry)
            self.at(start + 1, 1, lost)
            self.at(start + 1 + retry, 1, retry_step)
            return True
        racers = self.racers("P3", token) if self.rng.random() < float(agent.params.get("attack_prob", 0.5)) else []
        length = max(self.span(racers), 2)
        start = self.slot([pool], wanted, length + 1)
        if start is None:
            return False
        self.reserve_pools([pool], start, start + length + 1)
        self.settle(pool, token, start)
        box = {}
        dep_block = start + 1

        def deposit(b):
            st = self.states[pool]
            dx = max(1, st.reserve(side) * self.rng.randint(1, 20) // 1000)
            t = self.tx(b, 1, victim)
            t.add("0", victim, token, "transfer", {"to": pool, "amount": dx})
            apply_airdrop(st, side, dx)
            self.injected[(pool, side)] = self.injected.get((pool, side), 0) + dx
            box.update(dx=dx, tx=t)
        self.at(dep_block, 1, deposit)
        # the victim's own swap comes after any frontrunner's claim
        victim_block = dep_block + max(1, racers[0][1] if racers else 1)

        def own_swap(b):
            st = self.states[pool]
            dx = box["dx"]
            t = self.tx(b, 50, victim)
            if racers:
                t.add("0", victim, pool, "swap", {"amountIn": dx, "amountOut": 0, "to": victim, "tokenIn": token},
                      success=False)
                return
            dx_claim, dy = claim_swap(st, side)
            self.injected[(pool, side)] -= dx_claim
            t.add("0", victim, pool, "swap", {"amountIn": dx_claim, "amountOut": dy, "to": victim, "tokenIn": token})
            self.label(LabelKind.ATOMIC_SWAP, [box["tx"].txid, t.txid], pool=pool, token=token)
        self.at(victim_block, 50, own_swap)
        if racers:
            self._claim_after_deposit(pool, token, dep_block, racers, "P3", box, victim)
        return True

    def _claim_after_deposit(self, pool, token, dep_block, racers, pattern, box, victim) -> None:
        side = self.side_of(pool, token)
        wgap = racers[0][1]
        for rank, (agent, gap) in enumerate(racers):
            if rank > 0 and gap > wgap + 10:
                continue
            block = dep_block + gap
            if agent.params.get("probe") and gap >= 1:
                self.at(block - 1, 5, lambda b, a=agent: self.probe_tx(b, 5, a, pool, token))

            def step(b, agent=agent, rank=rank):
                if rank == 0:
                    dx, dy = claim_swap(self.states[pool], side)
                    self.injected[(pool, side)] -= dx
                    t = self.claim_tx(b, 2 + rank, agent, pool, token, True, dx, dy)
                    self.label(LabelKind.THEFT, [box["tx"].txid, t.txid], kind=ViolationKind.III_ACCOUNT_MISMATCH,
                               pattern=pattern, strategy=STRATEGY[agent.kind], attacker=agent.account,
                               victim=victim, pool=pool, token=token, block_gap=wgap,
                               competitors=len(racers) - 1)
                else:
                    self.claim_tx(b, 2 + rank, agent, pool, token, False, 0, 0)
            self.at(block, 2 + rank, step)

    def plan_buggy_router(self, agent: _Agent, wanted: int) -> bool:
        pools = [p for p, s in self.specs.items() if s.protocol is Protocol.UNISWAP_V2_LIKE]
        if not pools:
            return False
        pool = self.rng.choice(pools)
        spec = self.specs[pool]
        side = self.rng.randint(0, 1)
        token = spec.token0 if side == 0 else spec.token1
        victim = agent.account
        racers = self.racers("P4", token) if self.rng.random() < float(agent.params.get("attack_prob", 0.5)) else []
        length = max(self.span(racers), 2)
        start = self.slot([pool], wanted, length + 1)
        if start is None:
            return False
        self.reserve_pools([pool], start, start + length + 1)
        self.settle(pool, token, start)
        box = {}
        dep_block = start + 1

        def router_tx(b):
            st = self.states[pool]
            dx = max(1, st.reserve(side) * self.rng.randint(1, 20) // 1000)
            t = self.tx(b, 1, victim)
            t.add("0", victim, self.router, "swapExactTokensForTokens", {"amountIn": dx, "pool": pool})
            t.add("0.0", self.router, token, "transferFrom", {"from": victim, "to": pool, "amount": dx})
            t.add("0.1", self.router, pool, "swap", {"amountIn": dx, "amountOut": 0, "to": victim, "tokenIn": token},
                  success=False)
            apply_airdrop(st, side, dx)
            self.injected[(pool, side)] = self.injected.get((pool, side), 0) + dx
            box.update(dx=dx, tx=t)
        self.at(dep_block, 1, router_tx)
        if racers:
            self._claim_after_deposit(pool, token, dep_block, racers, "P4", box, victim)
        else:
            def absorb(b):
                t = self.tx(b, 1, self.keeper)
                t.add("0", self.keeper, pool, "sync", {})
                st = self.states[pool]
                self.injected[(pool, side)] -= st.extractable(side)
                st.sync()
                self.label(LabelKind.VIOLATION, [box["tx"].txid], kind=ViolationKind.II_STANDALONE_DEPOSIT,
                           pattern="P4", victim=victim, pool=pool, token=token)
            self.at(dep_block + 1, 1, absorb)
        return True

    def plan_safeguard(self, agent: _Agent, wanted: int) -> bool:
        pools = [p for p, s in self.specs.items() if s.protocol is Protocol.UNISWAP_V2_LIKE]
        if not pools:
            return False
        pool = self.rng.choice(pools)
        spec = self.specs[pool]
        side = self.rng.randint(0, 1)
        token = spec.token0 if side == 0 else spec.token1
        start = self.slot([pool], wanted, 2)
        if start is None:
            return False
        self.reserve_pools([pool], start, start + 2)
        self.settle(pool, token, start)
        me = agent.account

        def topup(b):
            st = self.states[pool]
            t = self.tx(b, 1, me)
            t.add("0", me, pool, "setSwapFee", {"fee": st.fee_bps})
            dx = max(1, st.reserve(side) // 100)
            t2 = self.tx(b, 2, me)
            t2.add("0", me, me, "execute", {})
            t2.add("0.0", me, token, "transfer", {"to": pool, "amount": dx})
            t2.add("0.1", me, pool, "sync", {})
            st._add(side, balance=dx)
            st.sync()
            self.label(LabelKind.VIOLATION, [t2.txid], kind=ViolationKind.II_STANDALONE_DEPOSIT,
                       victim=me, pool=pool, token=token)
        self.at(start + 1, 1, topup)
        return True

    # -- driver --
    def plan(self) -> None:
        sc = self.sc
        events = []
        for token, beh in sorted(sc.behaviors.items()):
            for b, f in beh.rebase_events:
                events.append((b, 0, "rebase", token, f))
            for b, a in beh.airdrop_events:
                events.append((b, 1, "airdrop", token, a))
            if beh.shareholder_fee_bps and beh.total_supply:
                for b, a in beh.fee_transfers:
                    events.append((b, 2, "fee", token, a))
            if beh.interest_rate_per_block > 0:
                thieves = [a for a in self.agents if "P2" in a.params.get("patterns", [])]
                for a in thieves:
                    for i in range(int(a.params.get("episodes", 1))):
                        events.append((1 + self.rng.randrange(sc.horizon_blocks), 3, "interest", token,
                                       beh.interest_rate_per_block))
        for a in self.agents:
            n = int(a.params.get("episodes", 0)) if a.kind in (
                AgentKind.EXTERNAL_TRANSFER_TRADER, AgentKind.BUGGY_ROUTER_TRADER, AgentKind.POOL_SAFEGUARD) else 0
            for _ in range(n):
                events.append((1 + self.rng.randrange(sc.horizon_blocks), 4, a.kind.value, a.account, a))
        events.sort(key=lambda e: (e[0], e[1], str(e[3])))
        by_account = {a.account: a for a in self.agents}
        for block, _, what, who, arg in events:
            if what == "rebase":
                self.plan_balance_event(who, block, "rebase", lambda st, s, f=arg: apply_rebase(st, s, f),
                                        {"factor_num": arg.numerator, "factor_den": arg.denominator})
            elif what == "airdrop":
                self.plan_balance_event(who, block, "airdrop", lambda st, s, a=arg: apply_airdrop(st, s, a),
                                        {"amount": arg})
            elif what == "fee":
                beh = sc.behaviors[who]
                self.plan_balance_event(
                    who, block, "redistribute",
                    lambda st, s, a=arg, bps=beh.shareholder_fee_bps, sup=beh.total_supply:
                        apply_shareholder_fee(st, s, a, bps, sup),
                    {"amount": arg, "fee_bps": beh.shareholder_fee_bps})
            elif what == "interest":
                self.plan_interest(who, arg, block)
            elif what == AgentKind.EXTERNAL_TRANSFER_TRADER.value:
                self.plan_external_transfer(by_account[who], block)
            elif what == AgentKind.BUGGY_ROUTER_TRADER.value:
                self.plan_buggy_router(by_account[who], block)
            elif what == AgentKind.POOL_SAFEGUARD.value:
                self.plan_safeguard(by_account[who], block)

    def run(self) -> SimResult:
        self.plan()
        for block in range(1, self.sc.horizon_blocks + 1):
            for _, _, fn in sorted(self.steps.get(block, []), key=lambda s: (s[0], s[1])):
                fn(block)
            self.fair_traffic(block)
        return self.emit()

    def emit(self) -> SimResult:
        self.txs.sort(key=lambda t: (t.block, t.phase, t.order))
        records = []
        idx_in_block = {}
        gas_rng = random.Random(self.sc.seed ^ 0x5EED)
        for t in self.txs:
            idx = idx_in_block.get(t.block, 0)
            idx_in_block[t.block] = idx + 1
            gas_price = gas_rng.randint(10, 200) * 10**9
            for seq, caller, contract, func, args, ok in t.calls:
                records.append(CallRecord(
                    txid=t.txid, block=t.block, tx_index=idx, call_seq=CallSeq.parse(seq),
                    caller=caller, callee_contract=contract, callee_func=func, args=args,
                    gas=21_000 + 30_000 * len(t.calls), gas_price=gas_price, success=ok,
                ))
        return SimResult(records, self.labels, self.sc.registry(), self.states, self.injected)


def simulate(scenario: Scenario) -> SimResult:
    """Run ``scenario`` and return its trace, labels and final pool state."""
    return _Sim(scenario).run()


def random_scenario(seed: int, target_events: int = 10_000, pools: int = 4) -> Scenario:
    """A mixed scenario: fair traffic plus P1-P4 injections and competing attackers."""
    rng = random.Random(seed)
    tokens = [_address("token", seed, i) for i in range(pools + 1)]
    specs = []
    for i in range(pools):
        specs.append(PoolSpec(
            pool=_address("pool", seed, i), token0=tokens[i], token1=tokens[i + 1],
            reserve0=rng.randint(10**6, 10**8) * 10**6, reserve1=rng.randint(10**6, 10**8) * 10**6,
            fee_bps=rng.choice([0, 30]),
            protocol=Protocol.UNISWAP_V3_LIKE if i == pools - 1 else Protocol.UNISWAP_V2_LIKE,
        ))
    # about 8 to 9 call records per block across four pools
    fair_rate = 1.0
    horizon = max(200, target_events // (2 * pools))
    rebase_token, airdrop_token, interest_token = tokens[0], tokens[1], tokens[2]
    behaviors = {
        rebase_token: TokenBehavior(rebase_events=[(rng.randint(1, horizon), Fraction(rng.randint(101, 120), 100))
                                                   for _ in range(6)]),
        airdrop_token: TokenBehavior(airdrop_events=[(rng.randint(1, horizon), rng.randint(10**9, 10**12))
                                                     for _ in range(3)]),
        interest_token: TokenBehavior(interest_rate_per_block=Fraction(1, 10**5)),
    }
    agents = [
        AgentSpec(AgentKind.FAIR_TRADER, {"count": 20}),
        AgentSpec(AgentKind.EXTERNAL_TRANSFER_TRADER, {"count": 3, "episodes": 2}),
        AgentSpec(AgentKind.BUGGY_ROUTER_TRADER, {"count": 2, "episodes": 2}),
        AgentSpec(AgentKind.AGGRESSIVE_ATTACKER, {"count": 2}),
        AgentSpec(AgentKind.GENERAL_ATTACKER, {"count": 1}),
        AgentSpec(AgentKind.GENERAL_ATTACKER, {"count": 1, "gap": [640, 660], "patterns": ["P2"], "episodes": 1}),
        AgentSpec(AgentKind.SCAVENGER, {"count": 1, "gap": [1, 60]}),
        AgentSpec(AgentKind.POOL_SAFEGUARD, {"count": 1, "episodes": 1}),
    ]
    return Scenario(pools=specs, behaviors=behaviors, agents=agents, horizon_blocks=horizon,
                    seed=seed, fair_rate=fair_rate)


def strategy_scenario(seed: int, episodes: int = 8) -> Scenario:
    """Three pools, one value source per strategy: rebases raced by two
    aggressive attackers, interest claimed by a slow thief, and airdrops left
    to a scavenger that waits anywhere from 1 to 1000 blocks."""
    rng = random.Random(seed)
    tokens = [_address("stoken", seed, i) for i in range(4)]
    specs = [PoolSpec(pool=_address("spool", seed, i), token0=tokens[i], token1=tokens[i + 1],
                      reserve0=rng.randint(10**6, 10**8) * 10**6, reserve1=rng.randint(10**6, 10**8) * 10**6)
             for i in range(3)]
    rebase_token, interest_token, airdrop_token = tokens[0], tokens[1], tokens[3]
    spacing = 1100
    horizon = spacing * (episodes + 1)
    behaviors = {
        rebase_token: TokenBehavior(rebase_events=[(i * spacing + rng.randint(1, 100),
                                                    Fraction(rng.randint(101, 120), 100)) for i in range(episodes)]),
        interest_token: TokenBehavior(interest_rate_per_block=Fraction(1, 10**5)),
        airdrop_token: TokenBehavior(airdrop_events=[(i * spacing + rng.randint(1, 100), rng.randint(10**9, 10**12))
                                                     for i in range(episodes)]),
    }
    agents = [
        AgentSpec(AgentKind.FAIR_TRADER, {"count": 5}),
        AgentSpec(AgentKind.AGGRESSIVE_ATTACKER, {"count": 2, "patterns": ["P1"], "tokens": [rebase_token]}),
        AgentSpec(AgentKind.GENERAL_ATTACKER, {"count": 1, "gap": [640, 660], "patterns": ["P2"],
                                               "episodes": episodes // 2, "probe": False}),
        AgentSpec(AgentKind.SCAVENGER, {"count": 1, "gap": [1, 1000], "patterns": ["P1"],
                                        "tokens": [airdrop_token]}),
    ]
    return Scenario(pools=specs, behaviors=behaviors, agents=agents, horizon_blocks=horizon,
                    seed=seed, fair_rate=0.1)


def scenario_rates(scenario: Scenario) -> str:
    """A rate table in USD per smallest token unit, one seeded rate per token
    quoted at the first and last block (pool LP tokens are not priced)."""
    rng = random.Random(scenario.seed ^ 0x7A7E)
    tokens = sorted({t for p in scenario.pools for t in (p.token0, p.token1)})
    lines = ["token,block,rate_num,rate_den"]
    for tok in tokens:
        num = rng.randint(1, 5000)
        for block in (1, scenario.horizon_blocks):
            lines.append(f"{tok},{block},{num},{10**6}")
    return "\n".join(lines) + "\n"
