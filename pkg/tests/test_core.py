import pytest
from hypothesis import given, settings, strategies as st

from batchsim.core import (
    BatchMessage,
    BatchSignPayload,
    Call,
    Invocation,
    assemble_batch_tx,
    decode_batch_data,
    decode_batch_message,
    decode_invocation,
    decode_sign_payload,
    encode_batch_data,
    encode_batch_message,
    encode_invocation,
    encode_sign_payload,
    sign_transaction,
    strip_nonces,
    word_len,
)
from batchsim.errors import DecodingError, EncodingError, ProtocolError
from batchsim.identity import keygen
from batchsim.primitives import MAX_WORD, Address, selector

A = Address.from_label("a")
B = Address.from_label("b")
words = st.integers(min_value=0, max_value=MAX_WORD)


@settings(max_examples=50, deadline=None)
@given(st.lists(words, max_size=6))
def test_invocation_round_trip(args):
    call = Call(A, B, selector("f"), tuple(args))
    assert decode_invocation(encode_invocation(call)) == call


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.lists(words, max_size=3), st.integers(0, 2**64 - 1)), min_size=1, max_size=5),
       st.integers(0, 2**64 - 1))
def test_batch_message_round_trip(entries, bn):
    bmsg = BatchMessage(
        tuple((Invocation(A, B, selector("f"), tuple(a), n), n) for a, n in entries), bn
    )
    back = decode_batch_message(encode_batch_message(bmsg))
    assert strip_nonces(back) == strip_nonces(bmsg)
    assert [n for _, n in back.entries] == [n for _, n in bmsg.entries]


def test_fee_metadata_is_not_signed():
    a = Invocation(A, B, selector("f"), (1,), 0, gas_price=5, submit_time=1.0)
    b = Invocation(A, B, selector("f"), (1,), 9, gas_price=50, submit_time=7.0)
    assert encode_invocation(a) == encode_invocation(b)


def test_sign_payload_drops_caller_nonces():
    inv = Invocation(A, B, selector("f"), (1,), 3)
    p1 = strip_nonces(BatchMessage(((inv, 3),), 4))
    p2 = strip_nonces(BatchMessage(((inv, 8),), 4))
    assert encode_sign_payload(p1) == encode_sign_payload(p2)
    assert decode_sign_payload(encode_sign_payload(p1)) == p1


def test_empty_batches_rejected():
    with pytest.raises(EncodingError):
        encode_batch_message(BatchMessage((), 0))
    with pytest.raises(EncodingError):
        encode_sign_payload(BatchSignPayload((), 0))


def test_truncated_data_rejected():
    p = BatchSignPayload((Call(A, B, selector("f"), (1, 2)),), 0)
    data = encode_batch_data(p, [bytes(65)])
    for cut in (3, 10, len(data) - 1):
        with pytest.raises(DecodingError):
            decode_batch_data(data[:cut])
    with pytest.raises(DecodingError):
        decode_batch_data(data + b"\x00")


def test_signature_count_must_match():
    p = BatchSignPayload((Call(A, B, selector("f")),), 0)
    with pytest.raises(DecodingError):
        decode_batch_data(encode_batch_data(p, [bytes(65), bytes(65)]))


def test_oversized_args_rejected():
    with pytest.raises(EncodingError):
        encode_invocation(Call(A, B, selector("f"), tuple(range(1000))))


def test_word_len():
    assert word_len(b"") == 0
    assert word_len(bytes(4 + 64)) == 3


def test_invocation_validation():
    with pytest.raises(ValueError):
        Invocation(A, B, b"abc")
    with pytest.raises(ValueError):
        Invocation(A, B, selector("f"), gas_price=0)


def test_transaction_signature_verifies():
    kp = keygen(1)
    tx = sign_transaction(kp, 0, B, 0, 3, b"data")
    assert tx.verify() and tx.sender == kp.address


def test_assemble_checks_nonce_and_sig_count():
    kp = keygen(1)
    p = BatchSignPayload((Call(A, B, selector("f")),), 2)
    with pytest.raises(ProtocolError):
        assemble_batch_tx(p, [], kp, 1)
    with pytest.raises(ProtocolError):
        assemble_batch_tx(p, [bytes(65)], kp, 1, account_nonce=1)
    btx = assemble_batch_tx(p, [bytes(65)], kp, 1, account_nonce=2)
    assert btx.tx.nonce == 2 and decode_batch_data(btx.tx.data)[0] == p
