"""The on-chain Dispatcher: verifies batched calls and relays them to callees.

Gas is charged as a list of :class:`~batchsim.costmodel.GasOp` so the meter
and the closed-form costs share one schedule. Per entry the batch pays for
its request words plus one framing word of calldata, a signature check,
the internal call, and the callee's own execution; see
:mod:`batchsim.costmodel` for the per-mode terms.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

from batchsim.core import (
    DISPATCH_FUNC,
    DISPATCHER_ADDRESS,
    BatchMessage,
    Call,
    Transaction,
    decode_batch_data,
    decode_batch_message,
    encode_batch_message,
    encode_invocation,
    encode_sign_payload,
    word_len,
)
from batchsim.costmodel import GasOp
from batchsim.errors import AccessDenied, DecodingError, DispatchError, ModeViolation, Revert
from batchsim.identity import try_recover
from batchsim.primitives import SENTINEL_SIGNATURE, Address, Signature, selector, word_bytes
from batchsim.rewriter.interp import execute
from batchsim.rewriter.rewrite import twin_name

if TYPE_CHECKING:
    from batchsim.chainsim import ChainState

DISPATCH_B2_FUNC = selector("dispatchWithNonces")
_U32 = struct.Struct(">I")


class DispatchMode(enum.Enum):
    IBATCH = "ibatch"
    IBATCH_INLINED = "inlined"
    TOP1_ELIDED = "top1"
    BASELINE_B0 = "b0"
    BASELINE_B1 = "b1"
    BASELINE_B2 = "b2"
    IDEAL = "ideal"


class BatchType(enum.Enum):
    S1 = "S1"  # one caller, one callee
    S2 = "S2"  # many callers, one callee
    S3 = "S3"  # one caller, many callees
    S4 = "S4"  # many callers, many callees


@dataclass
class CallResult:
    index: int
    caller: Address | None
    callee: Address
    func: bytes
    status: str  # ok | skipped | reverted | access_denied
    output: int | None = None
    gas: int = 0


@dataclass
class DispatchResult:
    results: list[CallResult]
    ops: list[GasOp] = field(default_factory=list)

    @property
    def dispatched(self) -> list[CallResult]:
        return [r for r in self.results if r.status == "ok"]


def classify_batch(calls: Sequence[Call]) -> BatchType:
    if not calls:
        raise ValueError("empty batch")
    callers = {c.caller for c in calls}
    callees = {c.callee for c in calls}
    if len(callers) == 1:
        return BatchType.S1 if len(callees) == 1 else BatchType.S3
    return BatchType.S2 if len(callees) == 1 else BatchType.S4


def select_mode(bt: BatchType, *, inline: bool = False, callers: set[Address] | None = None,
                batch_sender: Address | None = None) -> DispatchMode:
    """Pick the cheapest safe dispatch variant for a batch of type ``bt``."""
    if inline and bt in (BatchType.S1, BatchType.S2):
        return DispatchMode.IBATCH_INLINED
    if bt in (BatchType.S1, BatchType.S3) and callers is not None and callers == {batch_sender}:
        return DispatchMode.TOP1_ELIDED
    return DispatchMode.IBATCH


def request_words(call: Call) -> int:
    return word_len(call.func + b"".join(word_bytes(a) for a in call.args))


# -- B2 framing: entries keep their caller nonces, each signed individually --


def b2_entry_message(call: Call, nonce: int) -> bytes:
    return encode_invocation(call) + nonce.to_bytes(8, "big")


def encode_b2_data(bmsg: BatchMessage, sigs: Sequence[bytes]) -> bytes:
    body = encode_batch_message(bmsg)
    return DISPATCH_B2_FUNC + _U32.pack(len(body)) + body + _U32.pack(len(sigs)) + b"".join(sigs)


def decode_b2_data(data: bytes) -> tuple[BatchMessage, tuple[Signature, ...]]:
    try:
        if data[:4] != DISPATCH_B2_FUNC:
            raise DecodingError("unknown dispatch selector")
        n = _U32.unpack(data[4:8])[0]
        bmsg = decode_batch_message(data[8 : 8 + n])
        rest = data[8 + n :]
        count = _U32.unpack(rest[:4])[0]
        if count != len(bmsg.entries) or len(rest) != 4 + 65 * count:
            raise DecodingError("signature count mismatch")
        sigs = tuple(Signature(rest[4 + 65 * i : 69 + 65 * i]) for i in range(count))
    except (struct.error, ValueError) as exc:
        raise DecodingError(str(exc)) from exc
    return bmsg, sigs


class Dispatcher:
    """Stateless relay (except in B2 mode, which keeps one nonce word per caller)."""

    def __init__(self, mode: DispatchMode = DispatchMode.IBATCH, address: Address = DISPATCHER_ADDRESS):
        self.mode = mode
        self.address = address
        self.storage: dict[tuple, int] = {}

    def _decode(self, tx: Transaction):
        try:
            if self.mode is DispatchMode.BASELINE_B2:
                bmsg, sigs = decode_b2_data(tx.data)
                return [inv.call for inv in bmsg.invocations], [n for _, n in bmsg.entries], sigs, None
            payload, sigs = decode_batch_data(tx.data)
            return list(payload.calls), None, sigs, payload
        except DecodingError as exc:
            raise DispatchError(f"malformed batch data: {exc}") from exc

    def dispatch(self, tx: Transaction, cs: "ChainState") -> DispatchResult:
        """Verify and relay every entry of a batch transaction already in a block.

        Bad signatures skip their entry; malformed framing raises DispatchError
        and the caller reverts the whole transaction.
        """
        mode = self.mode
        if mode is DispatchMode.BASELINE_B0:
            raise ModeViolation("B0 sends calls directly; the Dispatcher takes no batches")
        if tx.data[:4] not in (DISPATCH_FUNC, DISPATCH_B2_FUNC):
            raise DispatchError("unknown dispatch selector")
        calls, nonces, sigs, payload = self._decode(tx)
        if payload is not None and mode is not DispatchMode.IDEAL and payload.batcher_nonce != tx.nonce:
            raise DispatchError(f"signed nonce {payload.batcher_nonce} is not the transaction nonce {tx.nonce}")
        if mode is DispatchMode.TOP1_ELIDED and {c.caller for c in calls} != {tx.sender}:
            raise ModeViolation("verification elision needs every entry to come from the batch sender")
        if mode is DispatchMode.BASELINE_B1:
            for c in calls:
                contract = cs.contracts.get(c.callee)
                if contract is None or not contract.code.has_function("transferFrom") or c.func != selector("transfer"):
                    raise ModeViolation("B1 only batches token transfer calls")

        ops = [GasOp("tx", sum(request_words(c) + 1 for c in calls))]
        signed = encode_sign_payload(payload) if payload is not None else None
        results = []
        for i, (call, sig) in enumerate(zip(calls, sigs)):
            ops.append(GasOp("residual", 1))
            if mode is DispatchMode.TOP1_ELIDED:
                sender = tx.sender
            elif sig == SENTINEL_SIGNATURE:
                results.append(CallResult(i, None, call.callee, call.func, "skipped"))
                continue
            else:
                ops.append(GasOp("sig_verify", 1))
                if mode is DispatchMode.IDEAL:
                    msg = encode_invocation(call)
                elif mode is DispatchMode.BASELINE_B2:
                    msg = b2_entry_message(call, nonces[i])
                else:
                    msg = signed
                sender = try_recover(msg, sig)
                if sender is None or sender != call.caller:
                    results.append(CallResult(i, sender, call.callee, call.func, "skipped"))
                    continue
            if mode is DispatchMode.BASELINE_B2:
                ops += [GasOp("sload", 1), GasOp("reset", 1)]
                key = ("nonce", sender.to_int())
                if nonces[i] < self.storage.get(key, 0):
                    results.append(CallResult(i, sender, call.callee, call.func, "skipped"))
                    continue
                self.storage[key] = nonces[i] + 1
            results.append(self._relay(i, call, sender, cs, ops))
        return DispatchResult(results, ops)

    def _relay(self, i: int, call: Call, sender: Address, cs: "ChainState", ops: list[GasOp]) -> CallResult:
        mode = self.mode
        contract = cs.contracts.get(call.callee)
        if contract is None:
            return CallResult(i, sender, call.callee, call.func, "access_denied")
        name = contract.function_name(call.func)
        words = request_words(call)
        if mode is DispatchMode.BASELINE_B1:
            ops.append(GasOp("call", words))
            fn, args, from_override = "transferFrom", call.args, sender.to_int()
        else:
            if mode is not DispatchMode.IBATCH_INLINED:
                ops.append(GasOp("call", words + 1))
            fn, args, from_override = (twin_name(name) if name else None), call.args, sender.to_int()
        if fn is None or not contract.code.has_function(fn):
            return CallResult(i, sender, call.callee, call.func, "access_denied")
        try:
            tr = execute(
                contract.code, fn, self.address.to_int(), contract.storage, args,
                from_override=from_override, self_addr=contract.address.to_int(),
                now=int(cs.clock), model=cs.model,
            )
        except AccessDenied as exc:
            ops.extend(_charged(exc))
            return CallResult(i, sender, call.callee, call.func, "access_denied", gas=getattr(exc, "gas", 0))
        except Revert as exc:
            ops.extend(_charged(exc))
            return CallResult(i, sender, call.callee, call.func, "reverted", gas=getattr(exc, "gas", 0))
        contract.storage = tr.end_state
        ops.extend(tr.ops)
        return CallResult(i, sender, call.callee, call.func, "ok", tr.output, tr.gas)


def _charged(exc) -> list[GasOp]:
    # a reverted callee still burns what it executed
    return list(getattr(exc, "ops", ()))
