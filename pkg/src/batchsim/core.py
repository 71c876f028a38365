"""Domain values and their byte encodings.

All encodings are a custom big-endian, length-prefixed format. They are
injective and deterministic; nothing here aims for RLP or ABI
compatibility.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from batchsim.errors import DecodingError, EncodingError, ProtocolError
from batchsim.identity import KeyPair, recover, sign
from batchsim.primitives import (
    WORD_BYTES,
    Address,
    Signature,
    digest,
    selector,
    word_bytes,
)

MAX_ARGS = 1000
DISPATCH_FUNC = selector("dispatch")
DISPATCHER_ADDRESS = Address.from_label("batchsim/dispatcher")


def word_len(data: bytes) -> int:
    return -(-len(data) // WORD_BYTES)


@dataclass(frozen=True)
class Call:
    """The signed part of an invocation: who calls what with which arguments."""

    caller: Address
    callee: Address
    func: bytes
    args: tuple[int, ...] = ()


@dataclass(frozen=True)
class Invocation:
    caller: Address
    callee: Address
    func: bytes
    args: tuple[int, ...] = ()
    caller_nonce: int = 0
    gas_price: int = 1
    submit_time: float = 0.0
    origin_block: int | None = None

    def __post_init__(self):
        if len(self.func) != 4:
            raise ValueError("func selector must be 4 bytes")
        if self.gas_price <= 0:
            raise ValueError("gas_price must be positive")
        if not isinstance(self.args, tuple):
            object.__setattr__(self, "args", tuple(self.args))

    @property
    def call(self) -> Call:
        return Call(self.caller, self.callee, self.func, self.args)

    @property
    def request_data(self) -> bytes:
        """Selector followed by argument words, as a direct transaction carries it."""
        return self.func + b"".join(word_bytes(a) for a in self.args)

    @property
    def request_words(self) -> int:
        return word_len(self.request_data)


@dataclass(frozen=True)
class BatchMessage:
    entries: tuple[tuple[Invocation, int], ...]
    batcher_nonce: int

    @property
    def invocations(self) -> tuple[Invocation, ...]:
        return tuple(inv for inv, _ in self.entries)


@dataclass(frozen=True)
class BatchSignPayload:
    calls: tuple[Call, ...]
    batcher_nonce: int


@dataclass(frozen=True)
class Transaction:
    sender: Address
    nonce: int
    to: Address
    value: int
    gas_price: int
    data: bytes
    signature: Signature

    def signing_bytes(self) -> bytes:
        return transaction_signing_bytes(self.nonce, self.to, self.value, self.gas_price, self.data)

    @property
    def id(self) -> bytes:
        return digest(self.signing_bytes() + self.signature)

    def verify(self) -> bool:
        try:
            return recover(self.signing_bytes(), self.signature) == self.sender
        except Exception:
            return False


@dataclass(frozen=True)
class BatchTransaction:
    tx: Transaction
    payload: BatchSignPayload
    caller_sigs: tuple[Signature, ...] = field(default=())

    @property
    def id(self) -> bytes:
        return self.tx.id


# -- low level framing -------------------------------------------------------

_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodingError(f"truncated input at offset {self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u16(self) -> int:
        return _U16.unpack(self.take(2))[0]

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def done(self) -> None:
        if self.pos != len(self.data):
            raise DecodingError(f"{len(self.data) - self.pos} trailing bytes")


# -- calls -------------------------------------------------------------------


def _encode_call(call: Call) -> bytes:
    if len(call.args) >= MAX_ARGS:
        raise EncodingError(f"too many argument words: {len(call.args)}")
    try:
        words = b"".join(word_bytes(a) for a in call.args)
    except ValueError as exc:
        raise EncodingError(str(exc)) from exc
    return bytes(call.caller) + bytes(call.callee) + call.func + _U16.pack(len(call.args)) + words


def encode_invocation(call: Invocation | Call) -> bytes:
    """Encode the caller/callee/selector/args tuple; fee metadata is not part of it."""
    if isinstance(call, Invocation):
        call = call.call
    return _encode_call(call)


def _read_call(r: _Reader) -> Call:
    caller = Address(r.take(20))
    callee = Address(r.take(20))
    func = r.take(4)
    n = r.u16()
    if n >= MAX_ARGS:
        raise DecodingError(f"argument count {n} out of range")
    args = tuple(int.from_bytes(r.take(WORD_BYTES), "big") for _ in range(n))
    return Call(caller, callee, func, args)


def decode_invocation(data: bytes) -> Call:
    r = _Reader(data)
    call = _read_call(r)
    r.done()
    return call


# -- batch message and sign payload ------------------------------------------


def encode_batch_message(bmsg: BatchMessage) -> bytes:
    if not bmsg.entries:
        raise EncodingError("batch message has no entries")
    parts = [_U32.pack(len(bmsg.entries))]
    for inv, nonce in bmsg.entries:
        body = encode_invocation(inv)
        parts += [_U32.pack(len(body)), body, _U64.pack(nonce)]
    parts.append(_U64.pack(bmsg.batcher_nonce))
    return b"".join(parts)


def decode_batch_message(data: bytes) -> BatchMessage:
    """Inverse of :func:`encode_batch_message`; invocations come back without fee metadata."""
    r = _Reader(data)
    entries = []
    for _ in range(r.u32()):
        body = r.take(r.u32())
        call = decode_invocation(body)
        nonce = r.u64()
        inv = Invocation(call.caller, call.callee, call.func, call.args, caller_nonce=nonce)
        entries.append((inv, nonce))
    bmsg = BatchMessage(tuple(entries), r.u64())
    r.done()
    if not bmsg.entries:
        raise DecodingError("batch message has no entries")
    return bmsg


def strip_nonces(bmsg: BatchMessage) -> BatchSignPayload:
    return BatchSignPayload(tuple(inv.call for inv, _ in bmsg.entries), bmsg.batcher_nonce)


def encode_sign_payload(p: BatchSignPayload) -> bytes:
    if not p.calls:
        raise EncodingError("sign payload has no calls")
    parts = [_U32.pack(len(p.calls))]
    for call in p.calls:
        body = _encode_call(call)
        parts += [_U32.pack(len(body)), body]
    parts.append(_U64.pack(p.batcher_nonce))
    return b"".join(parts)


def _read_sign_payload(r: _Reader) -> BatchSignPayload:
    count = r.u32()
    if count == 0:
        raise DecodingError("sign payload has no calls")
    calls = tuple(decode_invocation(r.take(r.u32())) for _ in range(count))
    return BatchSignPayload(calls, r.u64())


def decode_sign_payload(data: bytes) -> BatchSignPayload:
    r = _Reader(data)
    p = _read_sign_payload(r)
    r.done()
    return p


# -- batch transaction data field --------------------------------------------


def encode_batch_data(payload: BatchSignPayload, sigs: Sequence[bytes]) -> bytes:
    body = encode_sign_payload(payload)
    return (
        DISPATCH_FUNC
        + _U32.pack(len(body))
        + body
        + _U32.pack(len(sigs))
        + b"".join(bytes(s) for s in sigs)
    )


def decode_batch_data(data: bytes) -> tuple[BatchSignPayload, tuple[Signature, ...]]:
    r = _Reader(data)
    if r.take(4) != DISPATCH_FUNC:
        raise DecodingError("unknown dispatch selector")
    payload = decode_sign_payload(r.take(r.u32()))
    n = r.u32()
    if n != len(payload.calls):
        raise DecodingError(f"{n} signatures for {len(payload.calls)} calls")
    sigs = tuple(Signature(r.take(Signature.SIZE)) for _ in range(n))
    r.done()
    return payload, sigs


# -- transactions ------------------------------------------------------------


def transaction_signing_bytes(nonce: int, to: Address, value: int, gas_price: int, data: bytes) -> bytes:
    return (
        _U64.pack(nonce)
        + bytes(to)
        + value.to_bytes(32, "big")
        + _U64.pack(gas_price)
        + _U32.pack(len(data))
        + data
    )


def sign_transaction(kp: KeyPair, nonce: int, to: Address, value: int, gas_price: int, data: bytes = b"") -> Transaction:
    sig = sign(kp, transaction_signing_bytes(nonce, to, value, gas_price, data))
    return Transaction(kp.address, nonce, to, value, gas_price, data, sig)


def assemble_batch_tx(
    payload: BatchSignPayload,
    caller_sigs: Iterable[Signature],
    batcher_account: KeyPair,
    gas_price: int,
    value: int = 0,
    *,
    account_nonce: int | None = None,
    dispatcher: Address = DISPATCHER_ADDRESS,
) -> BatchTransaction:
    """Wrap a jointly signed payload into a transaction from the Batcher to the Dispatcher.

    ``account_nonce`` is the Batcher account's current chain nonce; when given it
    must equal the nonce the callers signed.
    """
    sigs = tuple(caller_sigs)
    if len(sigs) != len(payload.calls):
        raise ProtocolError(f"{len(payload.calls)} calls but {len(sigs)} signatures")
    if account_nonce is not None and account_nonce != payload.batcher_nonce:
        raise ProtocolError(
            f"batcher nonce {payload.batcher_nonce} does not match account nonce {account_nonce}"
        )
    data = encode_batch_data(payload, sigs)
    tx = sign_transaction(batcher_account, payload.batcher_nonce, dispatcher, value, gas_price, data)
    return BatchTransaction(tx, payload, sigs)
