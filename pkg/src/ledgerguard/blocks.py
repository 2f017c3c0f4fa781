"""Block model and canonical binary encoding.

Layout (all integers little-endian, lengths u32, block number u64):

    block    := header_len:u32 | header | data_len:u32 | data | meta_len:u32 | meta
    header   := number:u64 | previous_hash:32B | data_hash:32B          (72 bytes)
    data     := tx_count:u32 | tx*
    tx       := payload_len:u32 | payload | endo_count:u32 | endo*
    endo     := id_len:u32 | endorser_id | sig_len:u32 | signature
    meta     := oid_len:u32 | orderer_id | sig_len:u32 | signature
                | flags_len:u32 | validity_flags (1 byte per tx)

The structural walk that accepts or rejects an encoding lives in a kernel
module selected at import time: the compiled ``_codec`` extension when it
built, or the pure-Python ``_codec_py`` otherwise (force the latter with
LEDGERGUARD_PURE_PYTHON=1).  ``decode_block`` delegates acceptance to the
kernel so both packages cannot drift apart on what counts as well-formed.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from typing import Iterable, NamedTuple

from ledgerguard.errors import EncodingOverflow, MalformedBlock

if os.environ.get("LEDGERGUARD_PURE_PYTHON"):
    from ledgerguard import _codec_py as _kernel
else:
    try:
        from ledgerguard import _codec as _kernel  # type: ignore[attr-defined]
    except ImportError:
        from ledgerguard import _codec_py as _kernel

KERNEL_BACKEND = _kernel.BACKEND

HASH_SIZE = 32
HEADER_SIZE = 72
ZERO_HASH = b"\x00" * HASH_SIZE

_U32_MAX = 0xFFFFFFFF
_U64_MAX = 0xFFFFFFFFFFFFFFFF

_u32 = struct.Struct("<I")
_u64 = struct.Struct("<Q")


class Endorsement(NamedTuple):
    endorser_id: bytes
    signature: bytes


@dataclass(frozen=True)
class BlockHeader:
    number: int
    previous_hash: bytes
    data_hash: bytes


@dataclass(frozen=True)
class Transaction:
    payload: bytes
    endorsements: tuple[Endorsement, ...] = ()


@dataclass(frozen=True)
class BlockMetadata:
    orderer_id: bytes
    signature: bytes
    validity_flags: bytes


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    data: tuple[Transaction, ...]
    metadata: BlockMetadata


def _check_len(n: int, what: str) -> int:
    if n > _U32_MAX:
        raise EncodingOverflow(f"{what} exceeds u32 capacity")
    return n


def encode_header(h: BlockHeader) -> bytes:
    if not 0 <= h.number <= _U64_MAX:
        raise EncodingOverflow("block number exceeds u64 capacity")
    if len(h.previous_hash) != HASH_SIZE or len(h.data_hash) != HASH_SIZE:
        raise ValueError("header digests must be 32 bytes")
    return _u64.pack(h.number) + h.previous_hash + h.data_hash


def encode_data(data: Iterable[Transaction]) -> bytes:
    txs = tuple(data)
    parts = [_u32.pack(_check_len(len(txs), "transaction count"))]
    for tx in txs:
        if len(tx.payload) < 1:
            raise ValueError("transaction payload must be non-empty")
        parts.append(_u32.pack(_check_len(len(tx.payload), "payload length")))
        parts.append(tx.payload)
        parts.append(_u32.pack(_check_len(len(tx.endorsements), "endorsement count")))
        for endo in tx.endorsements:
            parts.append(_u32.pack(_check_len(len(endo.endorser_id), "endorser id length")))
            parts.append(endo.endorser_id)
            parts.append(_u32.pack(_check_len(len(endo.signature), "endorsement signature length")))
            parts.append(endo.signature)
    return b"".join(parts)


def _encode_metadata(meta: BlockMetadata) -> bytes:
    return b"".join(
        (
            _u32.pack(_check_len(len(meta.orderer_id), "orderer id length")),
            meta.orderer_id,
            _u32.pack(_check_len(len(meta.signature), "signature length")),
            meta.signature,
            _u32.pack(_check_len(len(meta.validity_flags), "flags length")),
            meta.validity_flags,
        )
    )


def encode_block(b: Block) -> bytes:
    if len(b.metadata.validity_flags) != len(b.data):
        raise ValueError("one validity flag byte per transaction required")
    header = encode_header(b.header)
    data = encode_data(b.data)
    meta = _encode_metadata(b.metadata)
    _check_len(len(data), "data section length")
    _check_len(len(meta), "metadata section length")
    return b"".join(
        (
            _u32.pack(len(header)),
            header,
            _u32.pack(len(data)),
            data,
            _u32.pack(len(meta)),
            meta,
        )
    )


def header_hash(h: BlockHeader) -> bytes:
    """SHA-256 over the canonical 72-byte header encoding."""
    return hashlib.sha256(encode_header(h)).digest()


def compute_data_hash(data: Iterable[Transaction]) -> bytes:
    """SHA-256 over the canonical data-section encoding (count prefix included)."""
    return hashlib.sha256(encode_data(data)).digest()


def block_outline(buf) -> tuple:
    """Structural check via the selected kernel; see ``_codec_py.block_outline``."""
    return _kernel.block_outline(buf)


def decode_header(buf) -> BlockHeader:
    """Decode the 72-byte header of an encoded block without a full walk."""
    if len(buf) < 4 + HEADER_SIZE:
        raise MalformedBlock("truncated header")
    (header_len,) = _u32.unpack_from(buf, 0)
    if header_len != HEADER_SIZE:
        raise MalformedBlock("bad header length")
    (number,) = _u64.unpack_from(buf, 4)
    return BlockHeader(
        number=number,
        previous_hash=bytes(buf[12:44]),
        data_hash=bytes(buf[44:76]),
    )


def decode_block(buf) -> Block:
    """Decode a canonical block encoding; the kernel decides acceptance."""
    (number, data_off, data_len, tx_count, oid_off, oid_len, sig_off, sig_len) = (
        _kernel.block_outline(buf)
    )
    header = BlockHeader(
        number=number,
        previous_hash=bytes(buf[12:44]),
        data_hash=bytes(buf[44:76]),
    )
    # structure already validated: the object walk below cannot go out of bounds
    txs = []
    cur = data_off + 4
    for _ in range(tx_count):
        (payload_len,) = _u32.unpack_from(buf, cur)
        cur += 4
        payload = bytes(buf[cur : cur + payload_len])
        cur += payload_len
        (endo_count,) = _u32.unpack_from(buf, cur)
        cur += 4
        endos = []
        for _ in range(endo_count):
            (id_len,) = _u32.unpack_from(buf, cur)
            cur += 4
            endorser_id = bytes(buf[cur : cur + id_len])
            cur += id_len
            (esig_len,) = _u32.unpack_from(buf, cur)
            cur += 4
            endos.append(Endorsement(endorser_id, bytes(buf[cur : cur + esig_len])))
            cur += esig_len
        txs.append(Transaction(payload, tuple(endos)))
    metadata = BlockMetadata(
        orderer_id=bytes(buf[oid_off : oid_off + oid_len]),
        signature=bytes(buf[sig_off : sig_off + sig_len]),
        validity_flags=bytes(tx_count),
    )
    return Block(header=header, data=tuple(txs), metadata=metadata)


def build_block(
    number: int,
    previous_hash: bytes,
    data: Iterable[Transaction],
    orderer_id: bytes,
    sign_header,
) -> Block:
    """Assemble a block whose header commits to ``data`` and sign it.

    ``sign_header`` is called with the canonical 72-byte header encoding and
    must return the orderer signature bytes.
    """
    txs = tuple(data)
    header = BlockHeader(
        number=number,
        previous_hash=previous_hash,
        data_hash=compute_data_hash(txs),
    )
    metadata = BlockMetadata(
        orderer_id=orderer_id,
        signature=sign_header(encode_header(header)),
        validity_flags=bytes(len(txs)),
    )
    return Block(header=header, data=txs, metadata=metadata)
