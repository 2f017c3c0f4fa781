"""Corruption detection: per-block checks, hash-pointer checks, checkpoints.

A scan walks the physical record framing of every ledger file (never the
index, which is only a cache) and validates each block in a fixed order:
structure, then data hash, then orderer lookup, then header signature; the
first failure decides the verdict.  Hash pointers are checked between every
adjacent pair of parseable headers, with the genesis block required to point
at 32 zero bytes.

Checkpoints record (length, whole-file digest) for fully validated files so
a later scan can replace per-block work on an untouched file with a single
digest comparison; linkage across a skipped file is still checked at both
boundaries.
"""

from __future__ import annotations

import hashlib
import json
import time
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from ledgerguard import blocks
from ledgerguard.blocks import BlockHeader, ZERO_HASH, header_hash
from ledgerguard.errors import MalformedBlock, MissingEntry, NumberGap
from ledgerguard.identity import TrustStore, verify
from ledgerguard.store import LedgerStore

CHECKPOINT_FILE = "checkpoints.json"


class BlockVerdict(Enum):
    VALID = "valid"
    MALFORMED = "malformed"
    DATA_HASH_MISMATCH = "data_hash_mismatch"
    BAD_ORDERER_SIGNATURE = "bad_orderer_signature"
    UNKNOWN_ORDERER = "unknown_orderer"


LINK_MISMATCH = "link_mismatch"


@dataclass(frozen=True)
class CorruptionFinding:
    kind: str
    blocks: tuple[int, ...]

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "blocks": list(self.blocks)}


@dataclass
class ScanStats:
    blocks_validated: int = 0
    signature_checks: int = 0
    signature_checks_by_file: dict[int, int] = field(default_factory=dict)
    files_skipped: list[int] = field(default_factory=list)
    files_with_findings: set[int] = field(default_factory=set)
    file_spans: dict[int, tuple[int, int]] = field(default_factory=dict)
    file_digests: dict[int, bytes] = field(default_factory=dict)
    wall_seconds: float = 0.0


@dataclass
class CorruptionReport:
    height: int
    findings: list[CorruptionFinding]
    verdicts: dict[str, int]
    stats: ScanStats

    @property
    def clean(self) -> bool:
        return not self.findings

    def to_json_dict(self) -> dict:
        return {
            "height": self.height,
            "clean": self.clean,
            "findings": [f.to_json_dict() for f in self.findings],
            "verdicts": dict(self.verdicts),
        }


@dataclass(frozen=True)
class CheckpointEntry:
    file_id: int
    length: int
    sha256_hex: str
    last_block: int


@dataclass
class CheckpointSet:
    height: int
    entries: list[CheckpointEntry]

    def entry(self, file_id: int) -> CheckpointEntry | None:
        for e in self.entries:
            if e.file_id == file_id:
                return e
        return None

    def save(self, path: str | Path) -> None:
        doc = {
            "height": self.height,
            "entries": [
                {
                    "file_id": e.file_id,
                    "length": e.length,
                    "sha256_hex": e.sha256_hex,
                    "last_block": e.last_block,
                }
                for e in self.entries
            ],
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CheckpointSet":
        doc = json.loads(Path(path).read_text())
        return cls(
            height=doc["height"],
            entries=[CheckpointEntry(**e) for e in doc["entries"]],
        )


def load_checkpoints(directory: str | Path) -> CheckpointSet | None:
    """Missing or unreadable checkpoint files mean "no checkpoints"."""
    path = Path(directory) / CHECKPOINT_FILE
    try:
        return CheckpointSet.load(path)
    except (OSError, ValueError, KeyError, TypeError):
        return None


def validate_block(data, trust: TrustStore) -> BlockVerdict:
    """Single-block verdict; check order is structure, data hash, orderer, signature."""
    verdict, _ = _validate(data, trust)
    return verdict


def _validate(data, trust: TrustStore) -> tuple[BlockVerdict, BlockHeader | None]:
    try:
        (number, data_off, data_len, _tx_count,
         oid_off, oid_len, sig_off, sig_len) = blocks.block_outline(data)
    except MalformedBlock:
        return BlockVerdict.MALFORMED, None
    view = memoryview(data)
    header = BlockHeader(number, bytes(view[12:44]), bytes(view[44:76]))
    digest = hashlib.sha256(view[data_off:data_off + data_len]).digest()
    if digest != header.data_hash:
        return BlockVerdict.DATA_HASH_MISMATCH, header
    key = trust.get(bytes(view[oid_off:oid_off + oid_len]))
    if key is None:
        return BlockVerdict.UNKNOWN_ORDERER, header
    if not verify(key, bytes(view[4:76]), bytes(view[sig_off:sig_off + sig_len])):
        return BlockVerdict.BAD_ORDERER_SIGNATURE, header
    return BlockVerdict.VALID, header


def check_link(prev_header: BlockHeader, cur_header: BlockHeader) -> bool:
    """True iff ``cur_header`` points at ``prev_header`` by hash."""
    if cur_header.number != prev_header.number + 1:
        raise NumberGap(
            f"headers {prev_header.number} and {cur_header.number} are not adjacent")
    return cur_header.previous_hash == header_hash(prev_header)


def scan(store: LedgerStore, trust: TrustStore,
         checkpoints: CheckpointSet | None = None, *,
         collect_digests: bool = False) -> CorruptionReport:
    """Validate the whole ledger and report every finding.

    Files whose checkpoint entry still matches (length and whole-file digest)
    are skipped: their blocks count as valid without per-block work, and only
    the hash pointers into and out of the file are checked.
    """
    t0 = time.perf_counter()
    stats = ScanStats()
    findings: list[CorruptionFinding] = []
    verdicts: Counter = Counter()
    number = 0
    prev_header: BlockHeader | None = None

    def note(finding: CorruptionFinding, *file_ids: int) -> None:
        findings.append(finding)
        stats.files_with_findings.update(file_ids)

    for file_id in store.file_ids():
        data = store.read_file_bytes(file_id)
        first_number = number
        entry = checkpoints.entry(file_id) if checkpoints else None
        skip = (
            entry is not None
            and entry.length == len(data)
            and hashlib.sha256(data).hexdigest() == entry.sha256_hex
        )
        if collect_digests:
            stats.file_digests[file_id] = hashlib.sha256(data).digest()
        records, region_offset = store.physical_records(file_id, data)
        view = memoryview(data)

        if skip:
            # digest match means the file is bit-identical to a state in
            # which every block and internal link validated clean
            stats.files_skipped.append(file_id)
            verdicts[BlockVerdict.VALID.value] += len(records)
            if records:
                first_off, _ = records[0]
                boundary = blocks.decode_header(view[first_off + 4:first_off + 80])
                _check_boundary(number, prev_header, boundary, note, file_id, store)
                last_off, _ = records[-1]
                prev_header = blocks.decode_header(view[last_off + 4:last_off + 80])
                number += len(records)
            continue

        for offset, length in records:
            block_view = view[offset + 4:offset + 4 + length]
            verdict, header = _validate(block_view, trust)
            stats.blocks_validated += 1
            if verdict in (BlockVerdict.BAD_ORDERER_SIGNATURE, BlockVerdict.VALID):
                stats.signature_checks += 1
                stats.signature_checks_by_file[file_id] = (
                    stats.signature_checks_by_file.get(file_id, 0) + 1)
            verdicts[verdict.value] += 1
            if verdict is not BlockVerdict.VALID:
                note(CorruptionFinding(verdict.value, (number,)), file_id)
            if header is None and verdict is BlockVerdict.MALFORMED:
                # the raw header may still parse; links can then be checked
                try:
                    header = blocks.decode_header(block_view)
                except MalformedBlock:
                    header = None
            if header is not None:
                reported = _check_boundary(number, prev_header, header, note,
                                           file_id, store)
                if header.number != number and not reported:
                    # an authentic block sitting at the wrong sequence
                    # position: the chain is broken even though the hash
                    # comparison had no parseable neighbour to run against
                    blamed = (number - 1, number) if number > 0 else (number,)
                    note(CorruptionFinding(LINK_MISMATCH, blamed), file_id)
                prev_header = header
            else:
                prev_header = None
            number += 1

        if region_offset is not None:
            note(CorruptionFinding(BlockVerdict.MALFORMED.value, (number,)), file_id)
            prev_header = None
        stats.file_spans[file_id] = (first_number, number - first_number)

    stats.wall_seconds = time.perf_counter() - t0
    findings.sort(key=lambda f: min(f.blocks))
    return CorruptionReport(
        height=number,
        findings=findings,
        verdicts=dict(verdicts),
        stats=stats,
    )


def _check_boundary(number, prev_header, header, note, file_id, store) -> bool:
    """Hash-pointer check at ``number``; True when a finding was emitted."""
    if number == 0:
        if header.previous_hash != ZERO_HASH:
            # degenerate link finding: the genesis block has no predecessor
            note(CorruptionFinding(LINK_MISMATCH, (0,)), file_id)
            return True
    elif prev_header is not None:
        if header.previous_hash != header_hash(prev_header):
            prev_file = _file_of(store, number - 1, file_id)
            note(CorruptionFinding(LINK_MISMATCH, (number - 1, number)),
                 prev_file, file_id)
            return True
    return False


def _file_of(store: LedgerStore, number: int, default: int) -> int:
    try:
        return store.location(number).file_id
    except Exception:
        return default


def make_checkpoints(store: LedgerStore, trust: TrustStore) -> CheckpointSet:
    """Full scan, then record whole-file digests for the clean file prefix.

    The last (still growing) file is never checkpointed, and files at or
    after the first finding get no entry.
    """
    report = scan(store, trust, collect_digests=True)
    entries: list[CheckpointEntry] = []
    file_ids = store.file_ids()
    for file_id in file_ids[:-1]:
        if file_id in report.stats.files_with_findings:
            break
        first, count = report.stats.file_spans[file_id]
        if count == 0:
            break
        entries.append(
            CheckpointEntry(
                file_id=file_id,
                length=store.file_size(file_id),
                sha256_hex=report.stats.file_digests[file_id].hex(),
                last_block=first + count - 1,
            )
        )
    return CheckpointSet(height=report.height, entries=entries)


def verify_file_checkpoint(file_id: int, store: LedgerStore,
                           checkpoints: CheckpointSet) -> bool:
    """True iff the file still has the recorded length and digest."""
    entry = checkpoints.entry(file_id)
    if entry is None:
        raise MissingEntry(f"no checkpoint entry for file {file_id}")
    if store.file_size(file_id) != entry.length:
        return False
    digest = hashlib.sha256(store.read_file_bytes(file_id)).hexdigest()
    return digest == entry.sha256_hex
