"""Replay a trace through the simulated chain under one batching system."""

from __future__ import annotations

import enum
import heapq
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

from batchsim.bench.metrics import CallOutcome, MetricsReport, summarize
from batchsim.bench.trace import TraceRecord
from batchsim.chainsim import GAS_LIMIT, BLOCK_INTERVAL, BlockSchedule, ChainState, Route, TraceBlock, replay_inclusion_block
from batchsim.core import (
    DISPATCHER_ADDRESS,
    BatchMessage,
    BatchSignPayload,
    Invocation,
    assemble_batch_tx,
    encode_invocation,
    sign_transaction,
)
from batchsim.costmodel import DEFAULT_MODEL, GasCostModel, ibatch_entry_gas
from batchsim.dispatcher import DispatchMode, Dispatcher, b2_entry_message, encode_b2_data
from batchsim.errors import AccessDenied, ModeViolation, NoBatch, NoInclusion, Revert
from batchsim.identity import KeyPair, keygen, sign
from batchsim.policy import PolicyMode, PolicySpec, bpool_evict, offline_optimal, price_batch, select_windowed
from batchsim.primitives import Address, selector
from batchsim.protocol import BatcherService, CallerAgent, collect_signatures, emit, form_batch, submit
from batchsim.rewriter.fixtures import erc20
from batchsim.rewriter.interp import execute
from batchsim.rewriter.ir import ContractIR
from batchsim.rewriter.rewrite import rewrite, twin_name

FUNDS = 10**30
TOKEN_BALANCE = 10**15


class System(enum.Enum):
    B0 = "b0"
    IBATCH = "ibatch"
    INLINED = "inlined"
    B1 = "b1"
    B2 = "b2"
    IDEAL = "ideal"
    OFFLINE = "offline"

    @classmethod
    def parse(cls, text: str) -> System:
        return cls(text.strip().lower())


_MODES = {
    System.IBATCH: DispatchMode.IBATCH,
    System.INLINED: DispatchMode.IBATCH_INLINED,
    System.B1: DispatchMode.BASELINE_B1,
    System.B2: DispatchMode.BASELINE_B2,
    System.IDEAL: DispatchMode.IDEAL,
    System.OFFLINE: DispatchMode.IBATCH,
    System.B0: DispatchMode.BASELINE_B0,
}


@dataclass(frozen=True)
class ReplayConfig:
    policy: PolicySpec = field(default_factory=PolicySpec)
    period_windows: int = 200
    model: GasCostModel = DEFAULT_MODEL
    gas_limit: int = GAS_LIMIT
    block_interval: float = BLOCK_INTERVAL
    batcher_seed: int = 0xBA7C4E5
    sign_timeout: float | None = None
    unresponsive: frozenset[Address] = frozenset()
    contracts: Mapping[Address, ContractIR] | None = None
    storage: Mapping[Address, Mapping[tuple, int]] | None = None


def _token_storage(trace: Sequence[TraceRecord], dispatcher: Address) -> dict[tuple, int]:
    # every holder starts funded so transfers only ever update balances
    st: dict[tuple, int] = {}
    for r in trace:
        st[("balances", r.caller.to_int())] = TOKEN_BALANCE
        st[("allowed", r.caller.to_int(), dispatcher.to_int())] = TOKEN_BALANCE
        if r.args:
            st[("balances", r.args[0])] = TOKEN_BALANCE
    return st


@dataclass
class _Pending:
    indices: list[int]
    price: int
    batched: bool
    dropped: set[int] = field(default_factory=set)


class _Replayer:
    BLOCK, SUBMIT, WINDOW, EVICT, EMIT = range(5)

    def __init__(self, trace, system, keys, blocks, cfg: ReplayConfig):
        self.trace = list(trace)
        self.system = system
        self.cfg = cfg
        self.spec = cfg.policy
        self.blocks = list(blocks) if blocks else None
        schedule = BlockSchedule.from_trace(self.blocks) if self.blocks else BlockSchedule.fixed(cfg.block_interval)
        self.chain = ChainState(schedule, cfg.model, cfg.gas_limit, Dispatcher(_MODES[system]))
        self._deploy()
        self.agents: dict[Address, CallerAgent] = {}
        for r in self.trace:
            if r.caller not in self.agents:
                delay = None if r.caller in cfg.unresponsive else 0.0
                self.agents[r.caller] = CallerAgent(keys[r.caller], reply_delay=delay)
                self.chain.fund(r.caller, FUNDS)
        self._batcher_keys = itertools.count(cfg.batcher_seed)
        self.batcher = self._new_batcher()
        self.outcomes: dict[int, CallOutcome] = {}
        self.pending: dict[bytes, _Pending] = {}
        self.index_of: dict[tuple[Address, int], int] = {}
        self.batch_sizes: list[int] = []
        self.fallbacks = 0
        self.windows = 0
        self.windows_batched = 0
        self.total_gas = 0
        self.baseline = [self._baseline(r) for r in self.trace]
        self._offline_calls: dict[int, Invocation] = {}

    # -- setup -----------------------------------------------------------------

    def _deploy(self):
        callees = sorted({r.callee for r in self.trace})
        disp = self.chain.dispatcher.address
        for c in callees:
            code = (self.cfg.contracts or {}).get(c) or erc20()
            storage = dict((self.cfg.storage or {}).get(c) or _token_storage([r for r in self.trace if r.callee == c], disp))
            self.chain.deploy(c, rewrite(code, disp), storage)
        if self.system is System.B1:
            for r in self.trace:
                acct = self.chain.contracts[r.callee]
                if not acct.code.has_function("transferFrom") or r.func != selector("transfer"):
                    raise ModeViolation(f"B1 can only batch token transfers; {r.callee} call is not one")

    def _new_batcher(self) -> BatcherService:
        kp = keygen(next(self._batcher_keys))
        self.chain.fund(kp.address, FUNDS)
        return BatcherService(kp, self.chain, self.spec, self.cfg.sign_timeout)

    def _baseline(self, r: TraceRecord) -> int | None:
        if self.blocks:
            try:
                return replay_inclusion_block(self.blocks, r.submit_time, r.gas_price)
            except NoInclusion:
                return None
        return int(r.submit_time // self.cfg.block_interval) + 1

    def _next_trace_block(self, now: float) -> TraceBlock | None:
        if not self.blocks:
            return None
        for b in self.blocks[self.chain.height :]:
            if b.timestamp > now:
                return b
        return None

    # -- sending ---------------------------------------------------------------

    def _send_direct(self, i: int, inv: Invocation):
        kp = self.agents[inv.caller].keys
        tx = sign_transaction(kp, self.chain.next_nonce(inv.caller), inv.callee, 0, inv.gas_price, inv.request_data)
        self.chain.send_raw_transaction(tx, Route.DIRECT)
        self.pending[tx.id] = _Pending([i], inv.gas_price, False)

    def _fallback(self, invs: Sequence[Invocation]):
        for inv in invs:
            self.fallbacks += 1
            self._send_direct(self.index_of[(inv.caller, inv.caller_nonce)], inv)

    def _price(self, selection: Sequence[Invocation], now: float) -> int:
        nb = self._next_trace_block(now)
        ctx = nb.prices if nb else ()
        return price_batch([inv.gas_price for inv in selection], ctx, self.spec.pricing)

    def _emit(self, selection: Sequence[Invocation], now: float, price: int | None = None, batcher=None):
        b = batcher or self.batcher
        price = self._price(selection, now) if price is None else price
        idx = [self.index_of[(inv.caller, inv.caller_nonce)] for inv in selection]
        if self.system in (System.IDEAL, System.B2):
            chosen = {id(inv) for inv in selection}
            b.buffer = [inv for inv in b.buffer if id(inv) not in chosen]
            nonce = self.chain.next_nonce(b.address)
            keys = [self.agents[inv.caller].keys for inv in selection]
            if self.system is System.IDEAL:
                payload = BatchSignPayload(tuple(inv.call for inv in selection), nonce)
                sigs = [sign(k, encode_invocation(inv.call)) for k, inv in zip(keys, selection)]
                tx = assemble_batch_tx(payload, sigs, b.account, price, account_nonce=nonce).tx
            else:
                bmsg = BatchMessage(tuple((inv, inv.caller_nonce) for inv in selection), nonce)
                sigs = [sign(k, b2_entry_message(inv.call, inv.caller_nonce)) for k, inv in zip(keys, selection)]
                tx = sign_transaction(b.account, nonce, DISPATCHER_ADDRESS, 0, price, encode_b2_data(bmsg, sigs))
            self.chain.send_raw_transaction(tx, Route.DIRECT)
            self.pending[tx.id] = _Pending(idx, price, True)
        else:
            bmsg = form_batch(b, now, selection=selection)
            try:
                rnd = collect_signatures(b, bmsg, self.agents)
            except NoBatch:
                b.release(bmsg, requeue=False)
                for i in idx:
                    self.outcomes[i] = self._outcome(i, None, Fraction(0), 0, len(idx), dropped=True)
                return
            btx = emit(b, bmsg, rnd, price, self.agents)
            self.pending[btx.id] = _Pending(idx, price, True, {idx[j] for j in rnd.dropped})
        self.batch_sizes.append(len(idx))

    # -- policy hooks ------------------------------------------------------------

    def _close_window(self, now: float):
        if not any(inv.submit_time <= now for inv in self.batcher.buffer):
            return
        self.windows += 1
        formed = False
        if self.spec.top1:
            try:
                self._emit(select_windowed(self.batcher.buffer, self.spec, now), now)
                formed = True
            except NoBatch:
                pass
        else:
            while self.batcher.buffer:
                try:
                    sel = select_windowed(self.batcher.buffer, self.spec, now)
                except NoBatch:
                    break
                self._emit(sel, now)
                formed = True
        self.windows_batched += formed
        rest, self.batcher.buffer = [inv for inv in self.batcher.buffer if inv.submit_time <= now], [
            inv for inv in self.batcher.buffer if inv.submit_time > now
        ]
        self._fallback(rest)

    def _estimate(self, inv: Invocation) -> int:
        acct = self.chain.contracts[inv.callee]
        name = acct.function_name(inv.func)
        entry = ibatch_entry_gas(inv.request_words, self.cfg.model)
        if name is None or not acct.code.has_function(twin_name(name)):
            return entry
        try:
            tr = execute(
                acct.code, twin_name(name), self.chain.dispatcher.address.to_int(), acct.storage, inv.args,
                from_override=inv.caller.to_int(), self_addr=acct.address.to_int(), model=self.cfg.model,
            )
            return entry + tr.gas
        except (Revert, AccessDenied) as exc:
            return entry + getattr(exc, "gas", 0)

    def _evict(self, now: float):
        if not self.batcher.buffer:
            return
        nb = self._next_trace_block(now)
        txpool = list(zip(nb.prices, nb.gas)) if nb else []
        bpool = [(inv, self._estimate(inv)) for inv in self.batcher.buffer]
        selection, _h = bpool_evict(bpool, txpool, self.cfg.gas_limit)
        cap = self.spec.max_batch
        for k in range(0, len(selection), cap):
            self._emit(selection[k : k + cap], now)
        self.windows += 1
        self.windows_batched += bool(selection)

    # -- outcomes ----------------------------------------------------------------

    def _outcome(self, i, block, gas, price, n, dropped=False) -> CallOutcome:
        r = self.trace[i]
        return CallOutcome(r.submit_time, self.baseline[i], block, gas, gas * price, n, dropped)

    def _on_block(self, blk):
        for tx, rc in zip(blk.txs, blk.receipts):
            p = self.pending.pop(tx.id, None)
            if p is None:
                continue
            self.total_gas += rc.gas_used
            n = len(p.indices)
            share = Fraction(rc.gas_used, n)
            for i in p.indices:
                self.outcomes[i] = self._outcome(i, blk.height, share, p.price, n if p.batched else 1, i in p.dropped)

    # -- driver ------------------------------------------------------------------

    def run(self, offline: bool = False) -> MetricsReport:
        ev: list = []
        seq = itertools.count()
        push = lambda t, kind, arg=None: heapq.heappush(ev, (t, kind, next(seq), arg))  # noqa: E731
        for i, r in enumerate(self.trace):
            push(r.submit_time, self.SUBMIT, i)
        last = max((r.submit_time for r in self.trace), default=0.0)
        windowed = self.system not in (System.B0, System.OFFLINE) and self.spec.mode is PolicyMode.WINDOWED
        if windowed:
            w = self.spec.window_s
            k = 1
            while (k - 1) * w <= last:
                push(k * w, self.WINDOW)
                k += 1
        if offline:
            # caller_nonce carries the trace index so assignments map back to calls
            invs = [r.invocation(caller_nonce=i) for i, r in enumerate(self.trace)]
            for a in offline_optimal(self.blocks, invs, self.spec.min_batch):
                push(a.submit_time, self.EMIT, a)
        nt = self.chain.next_block_time()
        if nt is not None:
            push(nt, self.BLOCK)
        submitted = 0
        while ev:
            t, kind, _, arg = heapq.heappop(ev)
            if kind == self.BLOCK:
                blk = self.chain.produce_block()
                self._on_block(blk)
                done = submitted == len(self.trace) and not self.batcher.buffer and not self.pending
                if done and not any(e[1] in (self.SUBMIT, self.WINDOW, self.EMIT) for e in ev):
                    continue
                if self.system is not System.B0 and self.spec.mode is PolicyMode.ONE_BLOCK and not offline:
                    push(t + self.spec.d_s, self.EVICT)
                nt = self.chain.next_block_time()
                if nt is not None:
                    push(nt, self.BLOCK)
            elif kind == self.SUBMIT:
                submitted += 1
                self._submit(arg)
            elif kind == self.WINDOW:
                self._close_window(t)
            elif kind == self.EVICT:
                if submitted == len(self.trace) and not self.batcher.buffer:
                    continue
                self._evict(t)
            elif kind == self.EMIT:
                self._emit_assignment(arg, t)
        for i in range(len(self.trace)):
            self.outcomes.setdefault(i, self._outcome(i, None, Fraction(0), 0, 0))
        period = self.spec.window_s * self.cfg.period_windows
        label = "" if self.system is System.B0 else (f"min{self.spec.min_batch}" if offline else self.spec.label)
        return summarize(
            self.system.value, label, [self.outcomes[i] for i in range(len(self.trace))],
            batch_sizes=self.batch_sizes, period_s=period, fallback_calls=self.fallbacks,
            windows=self.windows, windows_batched=self.windows_batched, total_gas=self.total_gas,
        )

    def _submit(self, i: int):
        r = self.trace[i]
        agent = self.agents[r.caller]
        if self.system is System.B0:
            inv = agent.new_invocation(r.callee, r.func, r.args, r.gas_price, r.submit_time)
            self.index_of[(inv.caller, inv.caller_nonce)] = i
            self._send_direct(i, inv)
            return
        self.chain.clock = max(self.chain.clock, r.submit_time)
        inv = submit(agent, self.batcher, r.callee, r.func, r.args, r.gas_price, r.submit_time)
        self.index_of[(inv.caller, inv.caller_nonce)] = i
        if self.system is System.OFFLINE:
            self.batcher.buffer.remove(inv)
            self._offline_calls[i] = inv

    def _emit_assignment(self, a, now: float):
        invs = [self._offline_calls[c.caller_nonce] for c in a.calls]
        if a.batched:
            # one Batcher account per batch, so no batch waits on another's nonce
            b = self._new_batcher()
            b.buffer = list(invs)
            self._emit(invs, now, price=a.gas_price, batcher=b)
        else:
            self._fallback(invs)


def replay(
    trace: Sequence[TraceRecord],
    system: System | str,
    keys: Mapping[Address, KeyPair],
    *,
    blocks: Sequence[TraceBlock] | None = None,
    config: ReplayConfig | None = None,
) -> MetricsReport:
    """Run ``trace`` under ``system`` and return its metrics.

    ``blocks`` switches the chain to the recorded schedule and its inclusion
    rule; without it blocks come at a fixed interval and include everything.
    """
    system = System.parse(system) if isinstance(system, str) else system
    cfg = config or ReplayConfig()
    r = _Replayer(trace, system, keys, blocks, cfg)
    if system is System.OFFLINE:
        if not blocks:
            raise ValueError("the offline oracle needs a block trace")
        return r.run(offline=True)
    return r.run()


def replay_many(
    cells: Sequence[tuple[System | str, ReplayConfig]],
    trace: Sequence[TraceRecord],
    keys: Mapping[Address, KeyPair],
    *,
    blocks: Sequence[TraceBlock] | None = None,
    parallel: int = 1,
) -> list[MetricsReport]:
    """Independent replays, optionally across worker threads; results keep ``cells`` order."""
    run: Callable = lambda cell: replay(trace, cell[0], keys, blocks=blocks, config=cell[1])  # noqa: E731
    if parallel <= 1:
        return [run(c) for c in cells]
    with ThreadPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(run, cells))
