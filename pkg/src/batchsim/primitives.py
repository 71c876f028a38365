"""Fixed-width byte types and the single hash function used everywhere.

The hash is SHA3-256 (FIPS 202), not Keccak-256. It is used both for
deriving addresses from public keys and for hashing messages before
signing, so the two can never drift apart.
"""

from __future__ import annotations

import hashlib

WORD_BYTES = 32
MAX_WORD = (1 << 256) - 1


def digest(data: bytes) -> bytes:
    return hashlib.sha3_256(data).digest()


class Address(bytes):
    """A 20-byte account identifier."""

    SIZE = 20

    def __new__(cls, value: bytes | bytearray | str):
        if isinstance(value, str):
            value = bytes.fromhex(value.removeprefix("0x"))
        if len(value) != cls.SIZE:
            raise ValueError(f"address must be {cls.SIZE} bytes, got {len(value)}")
        return super().__new__(cls, value)

    @classmethod
    def from_public_key(cls, public: bytes) -> Address:
        # first 20 bytes of SHA3-256 over the uncompressed point, minus the 0x04 tag
        body = public[1:] if len(public) == 65 else public
        return cls(digest(body)[: cls.SIZE])

    @classmethod
    def from_label(cls, label: str) -> Address:
        """Deterministic address for contracts and fixtures that have no key."""
        return cls(digest(label.encode())[: cls.SIZE])

    @classmethod
    def from_int(cls, value: int) -> Address:
        return cls(value.to_bytes(cls.SIZE, "big"))

    def to_int(self) -> int:
        return int.from_bytes(self, "big")

    def hex0x(self) -> str:
        return "0x" + self.hex()

    def __repr__(self) -> str:
        return f"Address({self.hex0x()})"

    def __str__(self) -> str:
        return self.hex0x()


ZERO_ADDRESS = Address(bytes(20))


class Signature(bytes):
    """A 65-byte recoverable signature laid out as r || s || v."""

    SIZE = 65

    def __new__(cls, value: bytes | bytearray):
        if len(value) != cls.SIZE:
            # imported lazily: errors does not depend on primitives
            from batchsim.errors import SignatureError

            raise SignatureError(f"signature must be {cls.SIZE} bytes, got {len(value)}")
        return super().__new__(cls, value)

    def __repr__(self) -> str:
        return f"Signature({self.hex()[:16]}...)"


# Placeholder for a caller who never answered within the signing timeout.
# The Dispatcher skips entries carrying it.
SENTINEL_SIGNATURE = Signature(bytes(65))


def word_bytes(value: int) -> bytes:
    if not 0 <= value <= MAX_WORD:
        raise ValueError(f"word out of range: {value}")
    return value.to_bytes(WORD_BYTES, "big")


def selector(name: str) -> bytes:
    """4-byte function selector: the first four bytes of the name's hash."""
    return digest(name.encode())[:4]
