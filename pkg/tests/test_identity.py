import random

import pytest
from hypothesis import given, settings, strategies as st

from batchsim.errors import InvalidKeyError, SignatureError
from batchsim.identity import keygen, read_keystore, recover, sign, try_recover, write_keystore
from batchsim.primitives import Address, Signature, digest, selector, word_bytes


def test_keygen_is_deterministic():
    assert keygen(7).address == keygen(7).address
    assert keygen(7).address != keygen(8).address


def test_bad_seeds_rejected():
    with pytest.raises(InvalidKeyError):
        keygen(bytes(32))
    with pytest.raises(InvalidKeyError):
        keygen(b"short")


def test_address_is_hash_of_public_key():
    kp = keygen(3)
    assert kp.address == Address(digest(kp.public[1:])[:20])


@settings(max_examples=25, deadline=None)
@given(st.binary(max_size=200))
def test_sign_recover_round_trip(msg):
    kp = keygen(11)
    assert recover(msg, sign(kp, msg)) == kp.address


def test_single_byte_flips_change_signer():
    kp = keygen(5)
    rng = random.Random(0)
    msg = bytes(rng.randrange(256) for _ in range(64))
    sig = sign(kp, msg)
    for _ in range(1000):
        i = rng.randrange(len(msg))
        bad = bytearray(msg)
        bad[i] ^= 1 << rng.randrange(8)
        assert try_recover(bytes(bad), sig) != kp.address


def test_signature_length_is_checked():
    with pytest.raises(SignatureError):
        recover(b"m", bytes(64))
    with pytest.raises(SignatureError):
        Signature(bytes(64))
    assert len(sign(keygen(1), b"x")) == 65


def test_try_recover_swallows_garbage():
    assert try_recover(b"m", bytes(65)) is None


def test_keypair_refuses_pickling():
    import pickle

    with pytest.raises(TypeError):
        pickle.dumps(keygen(1))


def test_keystore_round_trip(tmp_path):
    seeds = {keygen(s).address: s.to_bytes(32, "big") for s in (1, 2, 3)}
    p = tmp_path / "k.keystore"
    write_keystore(p, seeds)
    loaded = read_keystore(p)
    assert set(loaded) == set(seeds)


def test_keystore_mismatch_detected(tmp_path):
    p = tmp_path / "k.keystore"
    p.write_text(f"{keygen(1).address.hex0x()},{(2).to_bytes(32, 'big').hex()}\n")
    with pytest.raises(InvalidKeyError):
        read_keystore(p)


def test_primitives():
    assert len(selector("transfer")) == 4
    assert word_bytes(1)[-1] == 1
    with pytest.raises(ValueError):
        word_bytes(-1)
    a = Address.from_label("x")
    assert Address.from_int(a.to_int()) == a
    assert Address(a.hex0x()) == a
    with pytest.raises(ValueError):
        Address(b"\x00" * 19)
