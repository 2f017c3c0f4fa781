"""Ed25519 keys, header signing, and the orderer trust store.

The trust store is a flat orderer-id -> public-key map standing in for a
certificate hierarchy; lookups of unknown ids are hard errors so a missing
entry can never silently verify.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric import ed25519

from ledgerguard.errors import UnknownOrderer

SIGNATURE_SIZE = 64
KEY_SIZE = 32


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes


@lru_cache(maxsize=256)
def _signer(private_key: bytes) -> ed25519.Ed25519PrivateKey:
    return ed25519.Ed25519PrivateKey.from_private_bytes(private_key)


@lru_cache(maxsize=256)
def _verifier(public_key: bytes) -> ed25519.Ed25519PublicKey:
    return ed25519.Ed25519PublicKey.from_public_bytes(public_key)


def generate_keypair(seed: bytes | None = None) -> KeyPair:
    """Create a key pair, deterministically when a 32-byte seed is given."""
    if seed is None:
        priv = ed25519.Ed25519PrivateKey.generate()
    else:
        if len(seed) != KEY_SIZE:
            raise ValueError("seed must be 32 bytes")
        priv = ed25519.Ed25519PrivateKey.from_private_bytes(seed)
    return KeyPair(
        public_key=priv.public_key().public_bytes_raw(),
        private_key=priv.private_bytes_raw(),
    )


def sign(key: KeyPair, message: bytes) -> bytes:
    return _signer(key.private_key).sign(message)


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """True iff ``signature`` is valid; malformed inputs are simply False."""
    try:
        _verifier(public_key).verify(bytes(signature), bytes(message))
    except (InvalidSignature, ValueError):
        return False
    return True


class TrustStore:
    """Immutable map from orderer id to Ed25519 verification key."""

    def __init__(self, entries: dict[bytes, bytes]):
        self._entries = dict(entries)

    def get(self, orderer_id: bytes) -> bytes | None:
        return self._entries.get(orderer_id)

    def lookup(self, orderer_id: bytes) -> bytes:
        key = self._entries.get(orderer_id)
        if key is None:
            raise UnknownOrderer(f"no trust entry for orderer id {orderer_id!r}")
        return key

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, TrustStore) and self._entries == other._entries

    def save(self, path: str | Path) -> None:
        doc = {
            oid.decode("utf-8"): key.hex() for oid, key in sorted(self._entries.items())
        }
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "TrustStore":
        doc = json.loads(Path(path).read_text())
        return cls({oid.encode("utf-8"): bytes.fromhex(key) for oid, key in doc.items()})


def save_keypair(key: KeyPair, directory: str | Path, name: str) -> None:
    """Write ``<name>.key`` (private seed) and ``<name>.pub``, hex-encoded."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"{name}.key").write_text(key.private_key.hex() + "\n")
    (directory / f"{name}.pub").write_text(key.public_key.hex() + "\n")


def load_keypair(directory: str | Path, name: str) -> KeyPair:
    directory = Path(directory)
    private_key = bytes.fromhex((directory / f"{name}.key").read_text().strip())
    public_key = bytes.fromhex((directory / f"{name}.pub").read_text().strip())
    return KeyPair(public_key=public_key, private_key=private_key)
