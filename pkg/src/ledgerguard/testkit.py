"""Synthetic ledger generation and corruption injection.

The generator mirrors a real block pipeline: seeded random transaction
payloads endorsed by peer keys, batched into blocks whose headers are signed
by the orderer key, appended through the normal store path.  Everything is
deterministic for a fixed seed, so two runs produce byte-identical ledger
directories.

The injector mutates ledger files directly (never through the store) and
returns a record that can replay the same corruption on a fresh copy or
revert it byte for byte.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass
from hashlib import sha256
from pathlib import Path

from ledgerguard import blocks
from ledgerguard.blocks import (
    Block,
    Endorsement,
    Transaction,
    ZERO_HASH,
    build_block,
    header_hash,
)
from ledgerguard.errors import NonEmptyOutput, OutOfRange
from ledgerguard.identity import KeyPair, TrustStore, generate_keypair, save_keypair, sign
from ledgerguard.store import DEFAULT_MAX_FILE_SIZE, LedgerStore

ORDERER_ID = b"orderer"
DEFAULT_LEDGER_ID = b"primary"
TRUST_STORE_FILE = "truststore.json"

REGIONS = ("header", "data", "metadata", "length_prefix")
MODES = ("bitflip", "truncate", "grow", "zero")


@dataclass(frozen=True)
class GenParams:
    num_blocks: int
    txs_per_block: int = 10
    tx_size_bytes: int = 3072
    num_endorsers: int = 1
    rng_seed: int = 0
    max_file_size: int = DEFAULT_MAX_FILE_SIZE


def derive_seed(label: str, rng_seed: int) -> bytes:
    return sha256(f"ledgerguard/{label}/{rng_seed}".encode()).digest()


def orderer_keypair(rng_seed: int) -> KeyPair:
    return generate_keypair(derive_seed("orderer", rng_seed))


def peer_keypair(index: int, rng_seed: int) -> KeyPair:
    return generate_keypair(derive_seed(f"peer-{index}", rng_seed))


def generate_ledger(params: GenParams, out_dir: str | Path,
                    keys_dir: str | Path) -> tuple[LedgerStore, TrustStore]:
    """Build a deterministic ledger plus its trust store and key files."""
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        raise NonEmptyOutput(f"{out_dir} is not empty")
    if params.num_blocks < 1:
        raise ValueError("a ledger needs at least the genesis block")

    orderer = orderer_keypair(params.rng_seed)
    endorsers = [
        (f"peer-{i}".encode(), peer_keypair(i, params.rng_seed))
        for i in range(params.num_endorsers)
    ]
    trust = TrustStore({ORDERER_ID: orderer.public_key})

    keys_dir = Path(keys_dir)
    keys_dir.mkdir(parents=True, exist_ok=True)
    save_keypair(orderer, keys_dir, "orderer")
    for i, (_, kp) in enumerate(endorsers):
        save_keypair(kp, keys_dir, f"peer-{i}")
    trust.save(keys_dir / TRUST_STORE_FILE)

    rng = random.Random(params.rng_seed)
    store = LedgerStore.create(out_dir, params.max_file_size)
    previous_hash = ZERO_HASH
    for number in range(params.num_blocks):
        if number == 0:
            config = json.dumps(
                {
                    "ledger_id": DEFAULT_LEDGER_ID.decode(),
                    "seed": params.rng_seed,
                    "bootstrap": derive_seed("genesis-bootstrap",
                                             params.rng_seed).hex() * 4,
                },
                sort_keys=True,
            ).encode()
            txs = (Transaction(config),)
        else:
            txs = tuple(
                _make_tx(rng.randbytes(params.tx_size_bytes), endorsers)
                for _ in range(params.txs_per_block)
            )
        block = build_block(number, previous_hash, txs, ORDERER_ID,
                            lambda h: sign(orderer, h))
        store.append_block(block, trust)
        previous_hash = header_hash(block.header)
    return store, trust


def _make_tx(payload: bytes, endorsers) -> Transaction:
    endos = tuple(
        Endorsement(peer_id, sign(kp, payload)) for peer_id, kp in endorsers
    )
    return Transaction(payload, endos)


def read_chain(store: LedgerStore) -> list[Block]:
    return [blocks.decode_block(store.read_block_bytes(n)) for n in range(store.height)]


def resign_chain(chain: list[Block], start: int, orderer: KeyPair,
                 orderer_id: bytes = ORDERER_ID) -> list[Block]:
    """Recompute hashes and orderer signatures from ``start`` onward.

    Use after editing block data to obtain an alternative but fully valid
    chain suffix.
    """
    out = list(chain)
    for i in range(start, len(out)):
        previous_hash = ZERO_HASH if i == 0 else header_hash(out[i - 1].header)
        out[i] = build_block(i, previous_hash, out[i].data, orderer_id,
                             lambda h: sign(orderer, h))
    return out


# -- corruption injection ---------------------------------------------------


@dataclass
class InjectionRecord:
    block: int
    region: str
    mode: str
    rng_seed: int
    # resolved during injection
    file_id: int | None = None
    offset: int | None = None
    length: int | None = None
    bit: int | None = None
    original_hex: str | None = None
    inserted_hex: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "InjectionRecord":
        return cls(**json.loads(text))


def _region_span(store: LedgerStore, number: int, region: str) -> tuple[int, int, int]:
    """Absolute (file_id, start, end) byte span of ``region`` in the target record."""
    loc = store.location(number)
    if region == "length_prefix":
        return loc.file_id, loc.offset, loc.offset + 4
    raw = store.read_block_bytes(number)
    (_, data_off, data_len, *_rest) = blocks.block_outline(raw)
    block_off = loc.offset + 4
    if region == "header":
        return loc.file_id, block_off, block_off + 4 + blocks.HEADER_SIZE
    if region == "data":
        return loc.file_id, block_off + 76, block_off + data_off + data_len
    if region == "metadata":
        return loc.file_id, block_off + data_off + data_len, block_off + len(raw)
    raise ValueError(f"unknown region {region!r}")


def inject(ledger_dir: str | Path, record: InjectionRecord) -> InjectionRecord:
    """Apply the corruption described by ``record``; returns it resolved.

    The block index file is deliberately left untouched so that index/byte
    inconsistencies are exercised by whoever opens the ledger next.
    """
    if record.region not in REGIONS:
        raise ValueError(f"unknown region {record.region!r}")
    if record.mode not in MODES:
        raise ValueError(f"unknown mode {record.mode!r}")
    store = LedgerStore.open(ledger_dir)
    try:
        if record.block >= store.height:
            raise OutOfRange(f"block {record.block} not in ledger")
        file_id, start, end = _region_span(store, record.block, record.region)
        path = store.file_path(file_id)
    finally:
        store.close()

    rng = random.Random(record.rng_seed)
    record.file_id = file_id

    # bitflip and zero patch in place; truncate and grow shift bytes and
    # rewrite the file
    if record.mode == "bitflip":
        pos = rng.randrange(start, end)
        bit = rng.randrange(8)
        with open(path, "r+b") as fh:
            fh.seek(pos)
            (byte,) = fh.read(1)
            fh.seek(pos)
            fh.write(bytes([byte ^ (1 << bit)]))
        record.offset, record.length, record.bit = pos, 1, bit
    elif record.mode == "zero":
        with open(path, "r+b") as fh:
            fh.seek(start)
            record.original_hex = fh.read(end - start).hex()
            fh.seek(start)
            fh.write(bytes(end - start))
        record.offset, record.length = start, end - start
    elif record.mode == "truncate":
        data = bytearray(path.read_bytes())
        k = rng.randint(1, min(16, end - start))
        record.original_hex = bytes(data[end - k:end]).hex()
        del data[end - k:end]
        record.offset, record.length = end - k, k
        path.write_bytes(bytes(data))
    elif record.mode == "grow":
        data = bytearray(path.read_bytes())
        k = rng.randint(1, 16)
        pos = rng.randrange(start, end)
        inserted = rng.randbytes(k)
        data[pos:pos] = inserted
        record.inserted_hex = inserted.hex()
        record.offset, record.length = pos, k
        path.write_bytes(bytes(data))
    return record


def revert(ledger_dir: str | Path, record: InjectionRecord) -> None:
    """Undo a resolved injection, restoring the exact original file bytes."""
    path = Path(ledger_dir) / f"blockfile_{record.file_id:06d}"
    data = bytearray(path.read_bytes())
    if record.mode == "bitflip":
        data[record.offset] ^= 1 << record.bit
    elif record.mode == "zero":
        data[record.offset:record.offset + record.length] = bytes.fromhex(record.original_hex)
    elif record.mode == "truncate":
        data[record.offset:record.offset] = bytes.fromhex(record.original_hex)
    elif record.mode == "grow":
        del data[record.offset:record.offset + record.length]
    path.write_bytes(bytes(data))
