"""Off-chain joint signing between the Batcher and its callers, audits, and attack drills."""

from __future__ import annotations

import enum
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Mapping, Sequence

from batchsim.chainsim import ChainState, Route
from batchsim.core import (
    DISPATCHER_ADDRESS,
    BatchMessage,
    BatchSignPayload,
    BatchTransaction,
    Call,
    Invocation,
    assemble_batch_tx,
    decode_batch_data,
    encode_batch_data,
    encode_sign_payload,
    sign_transaction,
    strip_nonces,
)
from batchsim.dispatcher import DispatchMode
from batchsim.errors import ConfigError, DecodingError, NoBatch, Rejected, Retry
from batchsim.identity import KeyPair, keygen, sign
from batchsim.policy import PolicySpec, select_windowed
from batchsim.primitives import SENTINEL_SIGNATURE, Address, Signature, selector

TRANSFER = selector("transfer")


# -- callers -----------------------------------------------------------------


class RefusalReason(enum.Enum):
    MISSING = "missing"
    DUPLICATED = "duplicated"
    NONCE_MISMATCH = "nonce_mismatch"


@dataclass(frozen=True)
class Refusal:
    reason: RefusalReason
    caller: Address


@dataclass
class CallerAgent:
    keys: KeyPair
    local_nonce: int = 0
    pending: dict[int, Invocation] = field(default_factory=dict)
    received_acks: list[bytes] = field(default_factory=list)
    acked: dict[int, bytes] = field(default_factory=dict)
    reply_delay: float | None = 0.0  # None never answers
    verify_peers: bool = False

    @property
    def address(self) -> Address:
        return self.keys.address

    def new_invocation(self, callee: Address, func: bytes, args: Sequence[int], gas_price: int, now: float = 0.0) -> Invocation:
        inv = Invocation(self.address, callee, func, tuple(args), self.local_nonce, gas_price, now)
        self.pending[self.local_nonce] = inv
        self.local_nonce += 1
        return inv

    def validate_and_sign(self, bmsg: BatchMessage) -> Signature | Refusal:
        """Sign the stripped payload only if each of our entries is one of our pending calls, once."""
        mine = [(inv, n) for inv, n in bmsg.entries if inv.caller == self.address]
        if not mine:
            return Refusal(RefusalReason.MISSING, self.address)
        seen = Counter(n for _, n in mine)
        if any(k > 1 for k in seen.values()):
            return Refusal(RefusalReason.DUPLICATED, self.address)
        for inv, n in mine:
            ours = self.pending.get(n)
            if ours is None or ours.caller_nonce != inv.caller_nonce or ours.call != inv.call or n != inv.caller_nonce:
                return Refusal(RefusalReason.NONCE_MISMATCH, self.address)
        return sign(self.keys, encode_sign_payload(strip_nonces(bmsg)))

    def acknowledge(self, tx_id: bytes, nonces: Sequence[int]) -> None:
        self.received_acks.append(tx_id)
        for n in nonces:
            self.acked[n] = tx_id


def caller_validate_and_sign(caller: CallerAgent, bmsg: BatchMessage) -> Signature | Refusal:
    return caller.validate_and_sign(bmsg)


# -- the Batcher ---------------------------------------------------------------


class BatcherService:
    """Buffers invocations, forms batch messages, gathers signatures, and emits batch transactions."""

    def __init__(
        self,
        account: KeyPair,
        chain: ChainState,
        window: PolicySpec | None = None,
        sign_timeout: float | None = None,
    ):
        self.account = account
        self.chain = chain
        self.window = window or PolicySpec()
        self.sign_timeout = self.window.window_s if sign_timeout is None else sign_timeout
        self.buffer: list[Invocation] = []
        self.closed = False
        self.emitted: list[BatchTransaction] = []
        self.last_refusals: list[Refusal] = []
        self._reserved = 0
        chain.batcher_sink = self.accept

    @property
    def address(self) -> Address:
        return self.account.address

    def accept(self, inv: Invocation) -> None:
        if self.closed:
            raise Retry("window closed; resubmit in the next window")
        self.buffer.append(inv)

    def next_batch_nonce(self) -> int:
        return self.chain.next_nonce(self.address) + self._reserved

    def release(self, bmsg: BatchMessage, requeue: bool = True) -> None:
        """Abandon a formed message; its calls go back to the front of the buffer."""
        if self._reserved and bmsg.batcher_nonce == self.next_batch_nonce() - 1:
            self._reserved -= 1
        if requeue:
            self.buffer[:0] = [inv for inv in bmsg.invocations if inv not in self.buffer]


def submit(
    caller: CallerAgent,
    batcher: BatcherService,
    callee: Address,
    func: bytes,
    args: Sequence[int],
    gas_price: int,
    now: float = 0.0,
) -> Invocation:
    """Queue a call with the Batcher; the caller's nonce advances only if the Batcher accepts it."""
    if batcher.closed:
        raise Retry("window closed; resubmit in the next window")
    inv = caller.new_invocation(callee, func, args, gas_price, now)
    batcher.accept(inv)
    return inv


def message_for(batcher: BatcherService, selection: Sequence[Invocation]) -> BatchMessage:
    if not selection:
        raise NoBatch("empty selection")
    bmsg = BatchMessage(tuple((inv, inv.caller_nonce) for inv in selection), batcher.next_batch_nonce())
    batcher._reserved += 1
    chosen = {id(inv) for inv in selection}
    batcher.buffer = [inv for inv in batcher.buffer if id(inv) not in chosen]
    return bmsg


def form_batch(batcher: BatcherService, now: float, selection: Sequence[Invocation] | None = None) -> BatchMessage:
    """Select calls per the windowed policy (or take ``selection``) and wrap them with a fresh nonce_B."""
    if selection is None:
        selection = select_windowed(batcher.buffer, batcher.window, now)
    return message_for(batcher, selection)


@dataclass
class SignatureRound:
    payload: BatchSignPayload
    sigs: tuple[Signature, ...]
    dropped: set[int]
    refusals: list[Refusal] = field(default_factory=list)

    def __iter__(self) -> Iterator:
        return iter((self.payload, self.sigs, self.dropped))


def collect_signatures(
    batcher: BatcherService,
    bmsg: BatchMessage,
    agents: Mapping[Address, CallerAgent],
    timeout: float | None = None,
) -> SignatureRound:
    """Broadcast ``bmsg`` and wait up to ``timeout``; silent or refusing callers get the sentinel."""
    timeout = batcher.sign_timeout if timeout is None else timeout
    payload = strip_nonces(bmsg)
    replies: dict[Address, Signature | Refusal | None] = {}
    for inv in bmsg.invocations:
        if inv.caller in replies:
            continue
        agent = agents.get(inv.caller)
        if agent is None or agent.reply_delay is None or agent.reply_delay > timeout:
            replies[inv.caller] = None
        else:
            replies[inv.caller] = agent.validate_and_sign(bmsg)
    sigs, dropped = [], set()
    for i, inv in enumerate(bmsg.invocations):
        r = replies[inv.caller]
        if isinstance(r, Signature):
            sigs.append(r)
        else:
            sigs.append(SENTINEL_SIGNATURE)
            dropped.add(i)
    refusals = [r for r in replies.values() if isinstance(r, Refusal)]
    batcher.last_refusals = refusals
    if len(dropped) == len(sigs):
        raise NoBatch("no caller signed the batch message")
    return SignatureRound(payload, tuple(sigs), dropped, refusals)


def emit(
    batcher: BatcherService,
    bmsg: BatchMessage,
    rnd: SignatureRound,
    gas_price: int,
    agents: Mapping[Address, CallerAgent] | None = None,
) -> BatchTransaction:
    """Sign and send the batch transaction, then acknowledge every signer."""
    btx = assemble_batch_tx(
        rnd.payload, rnd.sigs, batcher.account, gas_price,
        account_nonce=batcher.chain.next_nonce(batcher.address),
        dispatcher=batcher.chain.dispatcher.address,
    )
    batcher.chain.send_raw_transaction(btx.tx, Route.DIRECT)
    batcher._reserved = max(0, batcher._reserved - 1)
    batcher.emitted.append(btx)
    if agents:
        by_caller: dict[Address, list[int]] = {}
        for i, (inv, n) in enumerate(bmsg.entries):
            if i not in rnd.dropped:
                by_caller.setdefault(inv.caller, []).append(n)
        for addr, nonces in by_caller.items():
            if addr in agents:
                agents[addr].acknowledge(btx.id, nonces)
    return btx


# -- audit ---------------------------------------------------------------------


@dataclass(frozen=True)
class OmissionEvidence:
    caller: Address
    caller_nonce: int
    tx_id: bytes
    height: int | None
    invocation: bytes


@dataclass(frozen=True)
class ReplayEvidence:
    caller: Address
    call: Call
    expected: int
    observed: int
    tx_ids: tuple[bytes, ...]


@dataclass(frozen=True)
class SplitAnomaly:
    batcher: Address
    tx_ids: tuple[bytes, ...]
    heights: tuple[int, ...]


@dataclass
class AuditReport:
    caller: Address
    omissions: list[OmissionEvidence] = field(default_factory=list)
    replays: list[ReplayEvidence] = field(default_factory=list)
    anomalies: list[SplitAnomaly] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not (self.omissions or self.replays or self.anomalies)


def _batch_txs(chain: ChainState):
    for b in chain.blocks:
        for tx, rc in zip(b.txs, b.receipts):
            if rc.kind == "batch" and rc.dispatch is not None:
                yield b, tx, rc


def audit(caller: CallerAgent, chain: ChainState | None, window_s: float = 120.0) -> AuditReport:
    """Check the chain for every acknowledged call: included once, never replayed, not split."""
    if chain is None:
        raise Retry("chain unavailable")
    from batchsim.core import encode_invocation

    report = AuditReport(caller.address)
    executed: Counter[Call] = Counter()
    where: dict[Call, list[bytes]] = {}
    tx_calls: dict[bytes, Counter[Call]] = {}
    acked_txs = set(caller.acked.values())
    acked_senders: dict[Address, list[tuple[float, int, bytes]]] = {}
    for b, tx, rc in _batch_txs(chain):
        try:
            payload, _ = decode_batch_data(tx.data)
        except DecodingError:
            continue
        mine: Counter[Call] = Counter()
        for r in rc.dispatch.results:
            call = payload.calls[r.index]
            if r.status == "ok" and r.caller == caller.address:
                mine[call] += 1
                where.setdefault(call, []).append(tx.id)
        executed.update(mine)
        tx_calls[tx.id] = mine
        acked_senders.setdefault(tx.sender, []).append((b.timestamp, b.height, tx.id))

    expected: Counter[Call] = Counter()
    for n, txid in sorted(caller.acked.items()):
        inv = caller.pending[n]
        expected[inv.call] += 1
        rc = chain.receipts.get(txid)
        in_tx = tx_calls.get(txid, Counter())
        if rc is None or in_tx[inv.call] == 0:
            report.omissions.append(
                OmissionEvidence(caller.address, n, txid, rc.height if rc else None, encode_invocation(inv))
            )
    for call, k in executed.items():
        if k > expected[call]:
            report.replays.append(ReplayEvidence(caller.address, call, expected[call], k, tuple(where[call])))

    # a Batcher that serves us emitted more than one batch inside one window
    for sender, rows in acked_senders.items():
        if not any(tid in acked_txs for _, _, tid in rows):
            continue
        rows.sort()
        for (t0, h0, id0), (t1, h1, id1) in zip(rows, rows[1:]):
            if t1 - t0 < window_s and (id0 in acked_txs or id1 in acked_txs):
                report.anomalies.append(SplitAnomaly(sender, (id0, id1), (h0, h1)))
    return report


# -- adversarial Batcher ---------------------------------------------------------


class AttackKind(enum.Enum):
    FORGE = "forge"
    REPLAY_R1 = "r1"
    REPLAY_R2 = "r2"
    REPLAY_R3 = "r3"
    SPLIT_R4 = "r4"
    OMIT = "omit"
    IMPERSONATE_COLLUDE = "impersonate"

    @classmethod
    def parse(cls, text: str) -> AttackKind:
        t = text.strip().lower().replace("_", "").replace("-", "")
        aliases = {
            "forge": cls.FORGE, "r1": cls.REPLAY_R1, "replayr1": cls.REPLAY_R1,
            "r2": cls.REPLAY_R2, "replayr2": cls.REPLAY_R2, "r3": cls.REPLAY_R3, "replayr3": cls.REPLAY_R3,
            "r4": cls.SPLIT_R4, "splitr4": cls.SPLIT_R4, "split": cls.SPLIT_R4, "omit": cls.OMIT,
            "impersonate": cls.IMPERSONATE_COLLUDE, "impersonatecollude": cls.IMPERSONATE_COLLUDE,
        }
        if t not in aliases:
            raise ConfigError(f"unknown attack kind {text!r}")
        return aliases[t]


class Fate(enum.Enum):
    CALLER_REFUSAL = "caller_refusal"
    DISPATCHER_REJECT = "dispatcher_reject"
    CHAIN_REJECT = "chain_reject"
    DETECTED_BY_AUDIT = "detected_by_audit"
    HARMLESS_TO_VICTIM = "harmless_to_victim"
    UNDETECTED = "undetected"


EXPECTED_FATE = {
    AttackKind.FORGE: Fate.DISPATCHER_REJECT,
    AttackKind.REPLAY_R1: Fate.CALLER_REFUSAL,
    AttackKind.REPLAY_R2: Fate.CHAIN_REJECT,
    AttackKind.REPLAY_R3: Fate.DISPATCHER_REJECT,
    AttackKind.SPLIT_R4: Fate.DETECTED_BY_AUDIT,
    AttackKind.OMIT: Fate.DETECTED_BY_AUDIT,
    AttackKind.IMPERSONATE_COLLUDE: Fate.HARMLESS_TO_VICTIM,
}


@dataclass(frozen=True)
class AdversaryScript:
    kind: AttackKind
    target: int = 0


@dataclass(frozen=True)
class AttackOutcome:
    kind: AttackKind
    fate: Fate
    callee_mutated: bool
    evidence: tuple = ()
    note: str = ""

    @property
    def as_expected(self) -> bool:
        return self.fate is EXPECTED_FATE[self.kind] and not self.callee_mutated


def load_scenarios(path: str | Path) -> list[AdversaryScript]:
    """Read ``kind,target-index`` lines; blank lines and ``#`` comments are skipped."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        kind, _, target = line.partition(",")
        try:
            out.append(AdversaryScript(AttackKind.parse(kind), int(target or 0)))
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad target index {target!r}") from exc
    return out


@dataclass
class AttackBed:
    """A small honest world: one token, a few callers, each with one pending transfer."""

    chain: ChainState
    batcher: BatcherService
    agents: dict[Address, CallerAgent]
    token: Address
    invocations: list[Invocation]
    impersonator: CallerAgent


def build_bed(seed: int = 0, n_callers: int | None = None) -> AttackBed:
    from batchsim.rewriter.fixtures import erc20
    from batchsim.rewriter.rewrite import rewrite

    rng = random.Random(seed)
    n = n_callers or rng.randint(3, 6)
    chain = ChainState()
    chain.dispatcher.mode = DispatchMode.IBATCH
    token = Address.from_label(f"attack-token-{seed}")
    agents = [CallerAgent(keygen(rng.getrandbits(255) | 1)) for _ in range(n)]
    mallory = CallerAgent(keygen(rng.getrandbits(255) | 1))
    batcher_keys = keygen(rng.getrandbits(255) | 1)
    state = {("balances", a.address.to_int()): 10**6 for a in agents + [mallory]}
    chain.deploy(token, rewrite(erc20(), DISPATCHER_ADDRESS), state)
    chain.fund(batcher_keys.address, 10**24)
    batcher = BatcherService(batcher_keys, chain, PolicySpec(min_batch=1))
    invs = []
    for a in agents:
        to = rng.choice([b for b in agents if b is not a]).address.to_int()
        invs.append(submit(a, batcher, token, TRANSFER, (to, rng.randint(1, 1000)), gas_price=rng.randint(1, 50)))
    return AttackBed(chain, batcher, {a.address: a for a in agents}, token, invs, mallory)


def _executed(chain: ChainState) -> Counter[Call]:
    out: Counter[Call] = Counter()
    for _, tx, rc in _batch_txs(chain):
        try:
            payload, _ = decode_batch_data(tx.data)
        except DecodingError:
            continue
        for r in rc.dispatch.results:
            if r.status == "ok":
                # the executed call is the one the recovered sender signed
                c = payload.calls[r.index]
                out[Call(r.caller, c.callee, c.func, c.args)] += 1
    return out


def _mutated(bed: AttackBed, extra_legit: Sequence[Call] = ()) -> bool:
    legit = Counter(inv.call for inv in bed.invocations) + Counter(extra_legit)
    return bool(_executed(bed.chain) - legit)


def _sign_round(bed: AttackBed, bmsg: BatchMessage) -> SignatureRound:
    return collect_signatures(bed.batcher, bmsg, bed.agents)


def _honest_batch(bed: AttackBed, now: float = 0.0) -> tuple[BatchMessage, BatchTransaction]:
    bmsg = form_batch(bed.batcher, now)
    btx = emit(bed.batcher, bmsg, _sign_round(bed, bmsg), 100, bed.agents)
    bed.chain.produce_block()
    return bmsg, btx


def run_adversary(script: AdversaryScript, honest_state: AttackBed | None = None, seed: int = 0) -> AttackOutcome:
    """Play one attack against a fresh (or given) honest world and report where it stopped."""
    bed = honest_state or build_bed(seed)
    kind = script.kind
    victim_inv = bed.invocations[script.target % len(bed.invocations)]
    victim = bed.agents[victim_inv.caller]
    b, chain = bed.batcher, bed.chain

    if kind is AttackKind.FORGE:
        # a call in the victim's name, signed with the Batcher's own key
        forged = Invocation(victim.address, bed.token, TRANSFER, (b.address.to_int(), 500), 10**6, 1)
        bmsg = form_batch(b, 0.0)
        bmsg = BatchMessage(bmsg.entries + ((forged, forged.caller_nonce),), bmsg.batcher_nonce)
        rnd = _sign_round(bed, bmsg)
        sigs = rnd.sigs[:-1] + (sign(b.account, encode_sign_payload(rnd.payload)),)
        rnd = SignatureRound(rnd.payload, sigs, rnd.dropped - {len(sigs) - 1}, rnd.refusals)
        btx = emit(b, bmsg, rnd, 100, bed.agents)
        chain.produce_block()
        res = chain.receipts[btx.id].dispatch.results[-1]
        fate = Fate.DISPATCHER_REJECT if res.status == "skipped" else Fate.UNDETECTED
        return AttackOutcome(kind, fate, _mutated(bed), (btx.id,), f"forged entry {res.status}")

    if kind is AttackKind.REPLAY_R1:
        bmsg = form_batch(b, 0.0)
        dup = bmsg.entries + ((victim_inv, victim_inv.caller_nonce),)
        bmsg = BatchMessage(dup, bmsg.batcher_nonce)
        rnd = _sign_round(bed, bmsg)
        refused = [r for r in rnd.refusals if r.caller == victim.address]
        if rnd.dropped != set(range(len(bmsg.entries))):
            emit(b, bmsg, rnd, 100, bed.agents)
            chain.produce_block()
        fate = Fate.CALLER_REFUSAL if refused and refused[0].reason is RefusalReason.DUPLICATED else Fate.UNDETECTED
        return AttackOutcome(kind, fate, _mutated(bed), tuple(refused))

    if kind is AttackKind.REPLAY_R2:
        _, btx = _honest_batch(bed)
        try:
            chain.send_raw_transaction(btx.tx, Route.DIRECT)
        except Rejected as exc:
            chain.produce_block()
            return AttackOutcome(kind, Fate.CHAIN_REJECT, _mutated(bed), (btx.id,), str(exc))
        chain.produce_block()
        return AttackOutcome(kind, Fate.UNDETECTED, _mutated(bed), (btx.id,))

    if kind is AttackKind.REPLAY_R3:
        _, btx = _honest_batch(bed)
        payload, sigs = decode_batch_data(btx.tx.data)
        stopped = []
        # same signatures with the nonce_B rewritten, then the old data under a fresh account nonce
        fresh = chain.next_nonce(b.address)
        for data in (
            encode_batch_data(replace(payload, batcher_nonce=fresh), sigs),
            btx.tx.data,
        ):
            nonce = chain.next_nonce(b.address)
            tx = sign_transaction(b.account, nonce, chain.dispatcher.address, 0, 100, data)
            chain.send_raw_transaction(tx, Route.DIRECT)
            chain.produce_block()
            rc = chain.receipts[tx.id]
            ok = rc.dispatch is not None and any(r.status == "ok" for r in rc.dispatch.results)
            stopped.append(not ok)
        fate = Fate.DISPATCHER_REJECT if all(stopped) else Fate.UNDETECTED
        return AttackOutcome(kind, fate, _mutated(bed), (btx.id,))

    if kind is AttackKind.OMIT:
        sel = [inv for inv in b.buffer if inv is not victim_inv]
        bmsg = form_batch(b, 0.0, selection=sel) if sel else None
        if bmsg is None:
            return AttackOutcome(kind, Fate.UNDETECTED, False, note="nothing left to batch")
        btx = emit(b, bmsg, _sign_round(bed, bmsg), 100, bed.agents)
        victim.acknowledge(btx.id, [victim_inv.caller_nonce])  # the lie
        chain.produce_block()
        rep = audit(victim, chain, b.window.window_s)
        fate = Fate.DETECTED_BY_AUDIT if rep.omissions else Fate.UNDETECTED
        return AttackOutcome(kind, fate, _mutated(bed), tuple(rep.omissions))

    if kind is AttackKind.SPLIT_R4:
        pool = list(b.buffer)
        k = max(1, len(pool) // 2)
        emitted = []
        for part in (pool[:k], pool[k:]):
            if not part:
                continue
            bmsg = form_batch(b, 0.0, selection=part)
            emitted.append(emit(b, bmsg, _sign_round(bed, bmsg), 100, bed.agents))
            chain.produce_block()
        reports = [audit(a, chain, b.window.window_s) for a in bed.agents.values()]
        anomalies = tuple(x for r in reports for x in r.anomalies)
        fate = Fate.DETECTED_BY_AUDIT if anomalies else Fate.UNDETECTED
        return AttackOutcome(kind, fate, _mutated(bed), anomalies[:1])

    if kind is AttackKind.IMPERSONATE_COLLUDE:
        # Mallory's own call, shaped like the victim's, slipped in beside it
        m = bed.impersonator
        fake = m.new_invocation(bed.token, TRANSFER, victim_inv.args, victim_inv.gas_price)
        bed.agents[m.address] = m
        bmsg = form_batch(b, 0.0, selection=list(b.buffer) + [fake])
        btx = emit(b, bmsg, _sign_round(bed, bmsg), 100, bed.agents)
        chain.produce_block()
        res = chain.receipts[btx.id].dispatch.results[-1]
        harmless = res.status == "ok" and res.caller == m.address
        mutated = _mutated(bed, [fake.call])
        return AttackOutcome(kind, Fate.HARMLESS_TO_VICTIM if harmless else Fate.UNDETECTED, mutated, (res.caller,))

    raise ConfigError(f"unhandled attack {kind}")
