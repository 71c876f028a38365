"""Keys, signing, and sender recovery (the ``ecrecover`` analogue).

Signatures are secp256k1 recoverable ECDSA produced by libsecp256k1 (via
coincurve). Messages are hashed with :func:`batchsim.primitives.digest`
before signing, the same hash that derives addresses from public keys.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import coincurve

from batchsim.errors import InvalidKeyError, SignatureError
from batchsim.primitives import Address, Signature, digest

_CURVE_ORDER = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141


@dataclass(frozen=True)
class KeyPair:
    secret: bytes = field(repr=False)
    public: bytes
    address: Address

    def __reduce__(self):
        # keep the secret out of pickles produced by default APIs
        raise TypeError("KeyPair is not serializable; persist the seed instead")

    def __copy__(self):
        return self

    def __deepcopy__(self, memo):
        return self


def keygen(seed: bytes | int) -> KeyPair:
    """Derive a key pair deterministically from a 32-byte seed."""
    if isinstance(seed, int):
        seed = seed.to_bytes(32, "big")
    if len(seed) != 32:
        raise InvalidKeyError(f"seed must be 32 bytes, got {len(seed)}")
    if not any(seed):
        raise InvalidKeyError("all-zero seed")
    scalar = int.from_bytes(digest(b"batchsim-key" + seed), "big") % (_CURVE_ORDER - 1) + 1
    secret = scalar.to_bytes(32, "big")
    public = coincurve.PrivateKey(secret).public_key.format(compressed=False)
    return KeyPair(secret=secret, public=public, address=Address.from_public_key(public))


def sign(kp: KeyPair, msg: bytes) -> Signature:
    raw = coincurve.PrivateKey(kp.secret).sign_recoverable(digest(msg), hasher=None)
    return Signature(raw)


def recover(msg: bytes, sig: bytes) -> Address:
    if len(sig) != Signature.SIZE:
        raise SignatureError(f"signature must be 65 bytes, got {len(sig)}")
    try:
        public = coincurve.PublicKey.from_signature_and_message(bytes(sig), digest(msg), hasher=None)
    except Exception as exc:  # libsecp256k1 reports malformed input as a bare Exception
        raise SignatureError(f"cannot recover signer: {exc}") from exc
    return Address.from_public_key(public.format(compressed=False))


def try_recover(msg: bytes, sig: bytes) -> Address | None:
    """Like :func:`recover` but returns None instead of raising, as the Dispatcher does."""
    try:
        return recover(msg, sig)
    except SignatureError:
        return None


# keystore: one ``address,seed-hex`` line per account


def write_keystore(path: str | Path, seeds: dict[Address, bytes]) -> None:
    lines = [f"{addr.hex0x()},{seed.hex()}" for addr, seed in seeds.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_keystore(path: str | Path) -> dict[Address, KeyPair]:
    keys: dict[Address, KeyPair] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        addr_hex, seed_hex = line.split(",")
        kp = keygen(bytes.fromhex(seed_hex))
        if kp.address != Address(addr_hex):
            raise InvalidKeyError(f"keystore line {lineno}: seed does not match {addr_hex}")
        keys[kp.address] = kp
    return keys
