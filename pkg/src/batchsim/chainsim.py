"""A deterministic single-node blockchain for replaying batching workloads."""

from __future__ import annotations

import bisect
import csv
import enum
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from batchsim.core import Invocation, Transaction, word_len
from batchsim.costmodel import DEFAULT_MODEL, GasCostModel, meter
from batchsim.dispatcher import Dispatcher, DispatchResult
from batchsim.errors import AccessDenied, DispatchError, ModeViolation, NoInclusion, Rejected, Revert, TraceError
from batchsim.primitives import Address, selector, word_bytes
from batchsim.rewriter.interp import execute
from batchsim.rewriter.ir import ContractIR

GAS_LIMIT = 12_500_000
BLOCK_INTERVAL = 13.0
WEI_PER_GWEI = 10**9
COINBASE = Address.from_label("batchsim/coinbase")


class Route(enum.Enum):
    DIRECT = "direct"
    VIA_BATCHER = "via_batcher"


@dataclass
class Account:
    nonce: int = 0
    balance: int = 0


@dataclass
class ContractAccount:
    address: Address
    code: ContractIR
    storage: dict[tuple, int] = field(default_factory=dict)
    balance: int = 0
    _selectors: dict[bytes, str] | None = field(default=None, repr=False)

    def function_name(self, func: bytes) -> str | None:
        if self._selectors is None:
            self._selectors = {selector(f.name): f.name for f in self.code.functions}
        return self._selectors.get(func)


@dataclass(frozen=True)
class TraceBlock:
    """A block from a recorded chain: when it appeared and the prices it carried."""

    height: int
    timestamp: float
    prices: tuple[int, ...] = ()
    gas: tuple[int, ...] = ()

    @property
    def min_price(self) -> int | None:
        return min(self.prices) if self.prices else None


@dataclass(frozen=True)
class Receipt:
    tx_id: bytes
    height: int
    index: int
    gas_used: int
    status: bool
    kind: str
    dispatch: DispatchResult | None = None
    error: str | None = None


@dataclass(frozen=True)
class Block:
    height: int
    timestamp: float
    txs: tuple[Transaction, ...]
    gas_used: int
    gas_limit: int = GAS_LIMIT
    receipts: tuple[Receipt, ...] = ()


@dataclass(frozen=True)
class BlockSchedule:
    """Either a fixed cadence or the timestamps (and contents) of a recorded trace."""

    interval: float | None = BLOCK_INTERVAL
    trace: tuple[TraceBlock, ...] = ()

    def __post_init__(self):
        if self.interval is None and not self.trace:
            raise TraceError("a trace schedule needs at least one block")
        if self.interval is not None and self.interval <= 0:
            raise ValueError("block interval must be positive")
        ts = [b.timestamp for b in self.trace]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise TraceError("trace timestamps must be strictly increasing")

    @classmethod
    def fixed(cls, seconds: float = BLOCK_INTERVAL) -> BlockSchedule:
        return cls(interval=seconds)

    @classmethod
    def from_trace(cls, blocks: Sequence[TraceBlock]) -> BlockSchedule:
        return cls(interval=None, trace=tuple(blocks))

    @property
    def is_trace(self) -> bool:
        return self.interval is None

    def time_of(self, k: int) -> float | None:
        """Timestamp of the ``k``-th produced block (1-based), or None past the trace end."""
        if self.interval is not None:
            return k * self.interval
        return self.trace[k - 1].timestamp if k <= len(self.trace) else None

    def trace_block(self, k: int) -> TraceBlock | None:
        if self.is_trace and k <= len(self.trace):
            return self.trace[k - 1]
        return None


@dataclass
class _Pending:
    tx: Transaction
    arrival: int
    kind: str


class ChainState:
    """Accounts, contracts, blocks, and the txpool; mutated only by sends and block production."""

    def __init__(
        self,
        schedule: BlockSchedule | None = None,
        model: GasCostModel = DEFAULT_MODEL,
        gas_limit: int = GAS_LIMIT,
        dispatcher: Dispatcher | None = None,
    ):
        self.schedule = schedule or BlockSchedule.fixed()
        self.model = model
        self.gas_limit = gas_limit
        self.accounts: dict[Address, Account] = {}
        self.contracts: dict[Address, ContractAccount] = {}
        self.blocks: list[Block] = []
        self.txpool: list[_Pending] = []
        self.clock = 0.0
        self.dispatcher = dispatcher or Dispatcher()
        self.batcher_sink: Callable[[Invocation], None] | None = None
        self.receipts: dict[bytes, Receipt] = {}
        self.fees_paid = 0
        self._arrivals = itertools.count()
        self._seen: set[tuple[Address, int]] = set()

    # -- setup ---------------------------------------------------------------

    @property
    def height(self) -> int:
        return len(self.blocks)

    def fund(self, addr: Address, wei: int) -> None:
        self.accounts.setdefault(addr, Account()).balance += wei

    def deploy(self, addr: Address, code: ContractIR, storage: dict[tuple, int] | None = None) -> ContractAccount:
        acct = ContractAccount(addr, code, dict(storage or {}))
        self.contracts[addr] = acct
        return acct

    def account(self, addr: Address) -> Account:
        return self.accounts.setdefault(addr, Account())

    def next_nonce(self, addr: Address) -> int:
        pending = sum(1 for p in self.txpool if p.tx.sender == addr)
        return self.account(addr).nonce + pending

    def total_balance(self) -> int:
        return sum(a.balance for a in self.accounts.values()) + sum(c.balance for c in self.contracts.values())

    def next_block_time(self) -> float | None:
        return self.schedule.time_of(self.height + 1)

    # -- execution -------------------------------------------------------------

    def _kind(self, tx: Transaction) -> str:
        if tx.to == self.dispatcher.address:
            return "batch"
        if tx.to in self.contracts:
            return "call"
        return "transfer"

    def _execute(self, tx: Transaction) -> tuple[int, bool, DispatchResult | None, str | None]:
        """Run ``tx`` against current state; returns (gas, ok, dispatch result, error)."""
        kind = self._kind(tx)
        if kind == "batch":
            try:
                res = self.dispatcher.dispatch(tx, self)
            except (DispatchError, ModeViolation) as exc:
                return self.model.tx(word_len(tx.data)), False, None, str(exc)
            return meter(res.ops, self.model), True, res, None
        base = self.model.tx(word_len(tx.data))
        if kind == "transfer":
            return base, True, None, None
        contract = self.contracts[tx.to]
        name = contract.function_name(tx.data[:4])
        if name is None or len(tx.data) < 4 or (len(tx.data) - 4) % 32:
            return base, False, None, "no such function"
        args = tuple(int.from_bytes(tx.data[i : i + 32], "big") for i in range(4, len(tx.data), 32))
        try:
            tr = execute(
                contract.code, name, tx.sender.to_int(), contract.storage, args,
                self_addr=contract.address.to_int(), now=int(self.clock), model=self.model,
            )
        except (Revert, AccessDenied) as exc:
            return base + getattr(exc, "gas", 0), False, None, str(exc)
        contract.storage = tr.end_state
        return base + tr.gas, True, None, None

    # -- pool ------------------------------------------------------------------

    def send_raw_transaction(self, tx: Transaction, route: Route = Route.DIRECT) -> bytes:
        if not tx.verify():
            raise Rejected("bad transaction signature")
        if route is Route.VIA_BATCHER:
            if self.batcher_sink is None:
                raise Rejected("no Batcher attached")
            if len(tx.data) < 4 or (len(tx.data) - 4) % 32:
                raise Rejected("not an invocation")
            args = tuple(int.from_bytes(tx.data[i : i + 32], "big") for i in range(4, len(tx.data), 32))
            inv = Invocation(
                caller=tx.sender, callee=tx.to, func=tx.data[:4], args=args,
                caller_nonce=tx.nonce, gas_price=tx.gas_price, submit_time=self.clock,
            )
            self.batcher_sink(inv)
            return tx.id
        key = (tx.sender, tx.nonce)
        if key in self._seen or tx.nonce != self.next_nonce(tx.sender):
            raise Rejected(f"stale or out-of-order nonce {tx.nonce} for {tx.sender}")
        self._seen.add(key)
        self.txpool.append(_Pending(tx, next(self._arrivals), self._kind(tx)))
        return tx.id

    # -- blocks ------------------------------------------------------------------

    def _eligible(self, p: _Pending, tb: TraceBlock | None) -> bool:
        if tb is None:
            return True
        lowest = tb.min_price
        return lowest is not None and lowest < p.tx.gas_price

    def produce_block(self, at_time: float | None = None) -> Block:
        """Pack the pool greedily by descending price and append the block."""
        k = self.height + 1
        scheduled = self.schedule.time_of(k)
        ts = scheduled if at_time is None else at_time
        if ts is None:
            raise TraceError("trace schedule exhausted")
        if self.blocks and ts < self.blocks[-1].timestamp:
            raise ValueError("block time must not go backwards")
        self.clock = max(self.clock, ts)
        tb = self.schedule.trace_block(k)
        order = sorted(self.txpool, key=lambda p: (-p.tx.gas_price, p.arrival))
        included: list[_Pending] = []
        receipts: list[Receipt] = []
        used = 0
        progress = True
        remaining = [p for p in order if self._eligible(p, tb)]
        while progress:
            progress = False
            for p in list(remaining):
                tx = p.tx
                sender = self.account(tx.sender)
                if tx.nonce != sender.nonce:
                    continue
                snapshot = self._snapshot(tx)
                gas, ok, res, err = self._execute(tx)
                fee = gas * tx.gas_price * WEI_PER_GWEI
                if used + gas > self.gas_limit or sender.balance < fee + (tx.value if ok else 0):
                    self._restore(snapshot)
                    if used + gas > self.gas_limit:
                        remaining.remove(p)
                    continue
                self._settle(tx, fee, ok)
                used += gas
                rc = Receipt(tx.id, k, len(included), gas, ok, p.kind, res, err)
                included.append(p)
                receipts.append(rc)
                self.receipts[tx.id] = rc
                remaining.remove(p)
                progress = True
        done = {id(p) for p in included}
        self.txpool = [p for p in self.txpool if id(p) not in done]
        block = Block(k, ts, tuple(p.tx for p in included), used, self.gas_limit, tuple(receipts))
        self.blocks.append(block)
        return block

    def _snapshot(self, tx: Transaction):
        # execution replaces storage dicts rather than mutating them, so references suffice
        return {a: c.storage for a, c in self.contracts.items()}, dict(self.dispatcher.storage)

    def _restore(self, snap) -> None:
        storages, dstore = snap
        for a, st in storages.items():
            self.contracts[a].storage = st
        self.dispatcher.storage = dstore

    def _settle(self, tx: Transaction, fee: int, ok: bool) -> None:
        sender = self.account(tx.sender)
        sender.nonce += 1
        sender.balance -= fee
        self.account(COINBASE).balance += fee
        self.fees_paid += fee
        if ok and tx.value:
            sender.balance -= tx.value
            if tx.to in self.contracts:
                self.contracts[tx.to].balance += tx.value
            else:
                self.account(tx.to).balance += tx.value

    def run_until(self, t: float) -> list[Block]:
        """Produce every scheduled block with timestamp <= ``t``."""
        out = []
        while (nt := self.next_block_time()) is not None and nt <= t:
            out.append(self.produce_block())
        self.clock = max(self.clock, t)
        return out

    def inclusion_height(self, tx_id: bytes) -> int | None:
        rc = self.receipts.get(tx_id)
        return rc.height if rc else None

    def export_history(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["height", "timestamp", "tx_index", "sender", "to", "gas_price", "gas_used", "kind"])
            for b in self.blocks:
                for i, (tx, rc) in enumerate(zip(b.txs, b.receipts)):
                    w.writerow([b.height, b.timestamp, i, tx.sender.hex0x(), tx.to.hex0x(), tx.gas_price, rc.gas_used, rc.kind])


def replay_inclusion_block(trace: Sequence[TraceBlock], t_submit: float, p: int, horizon: int | None = None) -> int:
    """Height of the first trace block after ``t_submit`` carrying a price below ``p``."""
    if not trace:
        raise TraceError("empty trace")
    start = bisect.bisect_right([b.timestamp for b in trace], t_submit)
    stop = len(trace) if horizon is None else min(len(trace), start + horizon)
    for b in trace[start:stop]:
        if b.prices and min(b.prices) < p:
            return b.height
    raise NoInclusion(f"price {p} after t={t_submit} never clears within the horizon")


def block_delay(call: Invocation | None, actual_block: int, baseline_block: int) -> int:
    return actual_block - baseline_block


def call_data(func: bytes, args: Iterable[int]) -> bytes:
    return func + b"".join(word_bytes(a) for a in args)
