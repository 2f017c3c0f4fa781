"""Append-only multi-file block storage with a rebuildable index.

On-disk layout inside the ledger directory:

    blockfile_000000, blockfile_000001, ...   length-prefixed block records
    blockindex                                derived cache of block locations

A record is ``length:u32 LE`` followed by the encoded block.  Files are
filled back to back; an append that would push the current file past the
nominal size rolls over to a new file (a block bigger than the nominal size
gets a file to itself).  The index is never a source of truth: any mismatch
with the physical file lengths triggers a rebuild by scanning, and a
structural failure during the scan leaves the remainder of that file
unindexed, which the validator reports as corruption.

Single-writer, multi-reader: reads go through per-file descriptors with
``os.pread`` and are safe alongside each other; mutating operations take the
store's writer lock.
"""

from __future__ import annotations

import logging
import os
import struct
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from ledgerguard import blocks
from ledgerguard.blocks import Block, BlockHeader, ZERO_HASH
from ledgerguard.errors import (
    BadSignature,
    ChainMismatch,
    MalformedBlock,
    NumberMismatch,
    OutOfRange,
    UnreadableTail,
)
from ledgerguard.identity import TrustStore, verify

log = logging.getLogger(__name__)

DEFAULT_MAX_FILE_SIZE = 64 * 1024 * 1024
INDEX_FILE = "blockindex"

_PREFIX = struct.Struct("<I")
_INDEX_RECORD = struct.Struct("<QIQI")  # number, file_id, offset, length


def block_file_name(file_id: int) -> str:
    return f"blockfile_{file_id:06d}"


@dataclass(frozen=True)
class BlockLocation:
    file_id: int
    offset: int  # of the length prefix
    length: int  # encoded block length, prefix excluded


class ReplaceKind(Enum):
    IN_PLACE = "in_place"
    TAIL_REWRITTEN = "tail_rewritten"


@dataclass(frozen=True)
class ReplaceOutcome:
    kind: ReplaceKind
    rewritten_tail_blocks: int = 0


class LedgerStore:
    def __init__(self, directory: str | Path,
                 nominal_max_file_size: int = DEFAULT_MAX_FILE_SIZE):
        self.directory = Path(directory)
        self.nominal_max_file_size = nominal_max_file_size
        self.index: dict[int, BlockLocation] = {}
        self._by_file: dict[int, list[int]] = {}
        self._file_sizes: dict[int, int] = {}
        self._regions: dict[int, int] = {}  # file_id -> offset where indexing stopped
        self._last_header: BlockHeader | None = None
        self._index_stale = True
        self._write_lock = threading.RLock()
        self._read_fds: dict[int, int] = {}
        self._fd_lock = threading.Lock()

    # -- construction ------------------------------------------------------

    @classmethod
    def open(cls, directory: str | Path,
             nominal_max_file_size: int = DEFAULT_MAX_FILE_SIZE) -> "LedgerStore":
        """Open a ledger directory, loading or rebuilding the block index.

        Opening is read-only and never validates signatures; corrupt blocks
        are tolerated at rest and surface later during validation.
        """
        store = cls(directory, nominal_max_file_size)
        if not store.directory.is_dir():
            raise FileNotFoundError(f"ledger directory {directory} does not exist")
        store._refresh_file_sizes()
        if not store._load_index():
            store.rebuild_index()
        store._load_last_header()
        if store._regions:
            log.warning("unreadable bytes in %d file(s): %s",
                        len(store._regions), store._regions)
        return store

    @classmethod
    def create(cls, directory: str | Path,
               nominal_max_file_size: int = DEFAULT_MAX_FILE_SIZE) -> "LedgerStore":
        Path(directory).mkdir(parents=True, exist_ok=True)
        return cls.open(directory, nominal_max_file_size)

    def close(self) -> None:
        with self._fd_lock:
            for fd in self._read_fds.values():
                os.close(fd)
            self._read_fds.clear()

    # -- basic queries -----------------------------------------------------

    @property
    def height(self) -> int:
        return len(self.index)

    def file_ids(self) -> list[int]:
        return sorted(self._file_sizes)

    def file_size(self, file_id: int) -> int:
        return self._file_sizes[file_id]

    def file_path(self, file_id: int) -> Path:
        return self.directory / block_file_name(file_id)

    def numbers_in_file(self, file_id: int) -> list[int]:
        return list(self._by_file.get(file_id, []))

    def unreadable_regions(self) -> dict[int, int]:
        """file_id -> offset of the first byte that could not be indexed."""
        return dict(self._regions)

    def last_header(self) -> BlockHeader | None:
        return self._last_header

    # -- reads -------------------------------------------------------------

    def location(self, number: int) -> BlockLocation:
        try:
            return self.index[number]
        except KeyError:
            raise OutOfRange(f"block {number} not in index (height {self.height})") from None

    def read_block_bytes(self, number: int) -> bytes:
        """The stored encoded-block bytes, verbatim and unvalidated."""
        loc = self.location(number)
        return self._pread(loc.file_id, loc.offset + 4, loc.length)

    def read_header(self, number: int) -> BlockHeader:
        loc = self.location(number)
        raw = self._pread(loc.file_id, loc.offset + 4, min(loc.length, 4 + blocks.HEADER_SIZE))
        return blocks.decode_header(raw)

    def read_file_bytes(self, file_id: int) -> bytes:
        return self.file_path(file_id).read_bytes()

    def physical_records(self, file_id: int, data: bytes | None = None):
        """Walk the file's length-prefixed framing, ignoring the index.

        Returns ``(records, region_offset)`` where records is a list of
        (offset, length) pairs and region_offset is the first unreadable
        byte, or None when the whole file parses.  The index is only a
        cache, so integrity decisions are made against this walk.
        """
        size = self._file_sizes[file_id]
        if data is None:
            data = self.read_file_bytes(file_id)
        records = []
        offset = 0
        while offset < size:
            if offset + 4 > size:
                return records, offset
            (length,) = _PREFIX.unpack_from(data, offset)
            if length == 0 or offset + 4 + length > size:
                return records, offset
            records.append((offset, length))
            offset += 4 + length
        return records, None

    def _pread(self, file_id: int, offset: int, length: int) -> bytes:
        fd = self._read_fd(file_id)
        data = os.pread(fd, length, offset)
        if len(data) != length:
            raise OSError(f"short read in {block_file_name(file_id)} at {offset}")
        return data

    def _read_fd(self, file_id: int) -> int:
        with self._fd_lock:
            fd = self._read_fds.get(file_id)
            if fd is None:
                fd = os.open(self.file_path(file_id), os.O_RDONLY)
                self._read_fds[file_id] = fd
            return fd

    # -- appends -----------------------------------------------------------

    def append_block(self, block: Block, trust: TrustStore | None = None) -> BlockLocation:
        """Append a block extending the chain; durable before return."""
        encoded = blocks.encode_block(block)
        with self._write_lock:
            if block.header.number != self.height:
                raise ChainMismatch(
                    f"expected block {self.height}, got {block.header.number}")
            if self.height == 0:
                if block.header.previous_hash != ZERO_HASH:
                    raise ChainMismatch("genesis previous_hash must be 32 zero bytes")
            else:
                if self._last_header is None:
                    raise ChainMismatch("current tip header is unreadable")
                expected = blocks.header_hash(self._last_header)
                if block.header.previous_hash != expected:
                    raise ChainMismatch(
                        f"block {block.header.number} does not link to current tip")
            if trust is not None:
                key = trust.get(block.metadata.orderer_id)
                if key is None or not verify(
                        key, blocks.encode_header(block.header), block.metadata.signature):
                    raise BadSignature(
                        f"orderer signature rejected for block {block.header.number}")

            file_id = self._append_target_file(len(encoded))
            if file_id in self._regions:
                raise UnreadableTail(
                    f"{block_file_name(file_id)} has unreadable bytes; append refused")
            offset = self._file_sizes.get(file_id, 0)
            path = self.file_path(file_id)
            with open(path, "ab") as fh:
                fh.write(_PREFIX.pack(len(encoded)))
                fh.write(encoded)
                fh.flush()
                os.fsync(fh.fileno())
            loc = BlockLocation(file_id, offset, len(encoded))
            self._file_sizes[file_id] = offset + 4 + len(encoded)
            number = block.header.number
            self.index[number] = loc
            self._by_file.setdefault(file_id, []).append(number)
            self._last_header = block.header
            self._persist_index_append(number, loc)
            return loc

    def _append_target_file(self, encoded_len: int) -> int:
        ids = self.file_ids()
        if not ids:
            return 0
        current = ids[-1]
        size = self._file_sizes[current]
        if size > 0 and size + 4 + encoded_len > self.nominal_max_file_size:
            return current + 1
        return current

    # -- replacement (the Fig.-2 splice) ------------------------------------

    def replace_block(self, number: int, replacement: bytes) -> ReplaceOutcome:
        """Overwrite block ``number`` with ``replacement`` bytes.

        Same-size replacements are written in place and touch nothing else.
        A size-changing replacement truncates the file at the block's offset
        and rewrites every later block of that same file from its in-memory
        copy; other files are never touched.
        """
        with self._write_lock:
            loc = self.location(number)
            rep_header = blocks.decode_header(replacement)
            blocks.block_outline(replacement)  # malformed replacements are refused
            if rep_header.number != number:
                raise NumberMismatch(
                    f"replacement carries number {rep_header.number}, slot is {number}")

            path = self.file_path(loc.file_id)
            if len(replacement) == loc.length:
                # the prefix value is unchanged but is rewritten anyway so a
                # corrupted framing byte is repaired along with the block
                with open(path, "r+b") as fh:
                    fh.seek(loc.offset)
                    fh.write(_PREFIX.pack(len(replacement)))
                    fh.write(replacement)
                    fh.flush()
                    os.fsync(fh.fileno())
                self._refresh_last_header_if(number)
                return ReplaceOutcome(ReplaceKind.IN_PLACE)

            if loc.file_id in self._regions:
                raise UnreadableTail(
                    f"{block_file_name(loc.file_id)} has unreadable bytes past "
                    f"offset {self._regions[loc.file_id]}")
            tail_numbers = [m for m in self._by_file[loc.file_id] if m > number]
            tail = [(m, self.read_block_bytes(m)) for m in tail_numbers]

            with open(path, "r+b") as fh:
                fh.truncate(loc.offset)
                fh.seek(loc.offset)
                fh.write(_PREFIX.pack(len(replacement)))
                fh.write(replacement)
                cursor = loc.offset + 4 + len(replacement)
                self.index[number] = BlockLocation(loc.file_id, loc.offset, len(replacement))
                for m, data in tail:
                    fh.write(_PREFIX.pack(len(data)))
                    fh.write(data)
                    self.index[m] = BlockLocation(loc.file_id, cursor, len(data))
                    cursor += 4 + len(data)
                fh.flush()
                os.fsync(fh.fileno())
            self._file_sizes[loc.file_id] = cursor
            self._persist_index_full()
            self._refresh_last_header_if(number)
            return ReplaceOutcome(ReplaceKind.TAIL_REWRITTEN, len(tail))

    def rewrite_file_tail(self, file_id: int, start_offset: int,
                          records: list[bytes]) -> None:
        """Replace everything from ``start_offset`` in a file with ``records``.

        Used by recovery to repair unreadable regions; the index is rebuilt
        afterwards because sequential numbering may shift across files.
        """
        with self._write_lock:
            path = self.file_path(file_id)
            with open(path, "r+b") as fh:
                fh.truncate(start_offset)
                fh.seek(start_offset)
                for data in records:
                    fh.write(_PREFIX.pack(len(data)))
                    fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            self._refresh_file_sizes()
            self.rebuild_index()
            self._persist_index_full()
            self._load_last_header()

    def _refresh_last_header_if(self, number: int) -> None:
        if number == self.height - 1:
            self._last_header = self.read_header(number)

    # -- index -------------------------------------------------------------

    def rebuild_index(self) -> dict[int, BlockLocation]:
        """Scan every file's length-prefixed records and renumber sequentially.

        A record whose prefix is zero or runs past the end of the file stops
        the scan of that file; the remaining bytes are recorded as an
        unreadable region.
        """
        with self._write_lock:
            self._refresh_file_sizes()
            self.index = {}
            self._by_file = {}
            self._regions = {}
            number = 0
            for file_id in self.file_ids():
                records, region_offset = self.physical_records(file_id)
                if region_offset is not None:
                    self._regions[file_id] = region_offset
                for offset, length in records:
                    self.index[number] = BlockLocation(file_id, offset, length)
                    self._by_file.setdefault(file_id, []).append(number)
                    number += 1
            self._index_stale = True
            return dict(self.index)

    def _load_index(self) -> bool:
        path = self.directory / INDEX_FILE
        if not path.exists():
            return False
        raw = path.read_bytes()
        if len(raw) % _INDEX_RECORD.size != 0:
            return False
        entries: dict[int, BlockLocation] = {}
        by_file: dict[int, list[int]] = {}
        expected = 0
        for (number, file_id, offset, length) in _INDEX_RECORD.iter_unpack(raw):
            if number != expected:
                return False
            entries[number] = BlockLocation(file_id, offset, length)
            by_file.setdefault(file_id, []).append(number)
            expected += 1
        # the index must tile every physical file exactly
        if set(by_file) != set(self._file_sizes) and entries:
            return False
        if not entries and self._file_sizes:
            return False
        for file_id, numbers in by_file.items():
            cursor = 0
            for number in numbers:
                loc = entries[number]
                if loc.offset != cursor:
                    return False
                cursor += 4 + loc.length
            if cursor != self._file_sizes.get(file_id):
                return False
        # the physical prefixes must agree too, otherwise a framing-only
        # corruption (e.g. a zeroed record prefix) would hide behind the cache
        try:
            for file_id, numbers in by_file.items():
                fd = self._read_fd(file_id)
                for number in numbers:
                    loc = entries[number]
                    if os.pread(fd, 4, loc.offset) != _PREFIX.pack(loc.length):
                        return False
        except OSError:
            return False
        self.index = entries
        self._by_file = by_file
        self._regions = {}
        self._index_stale = False
        return True

    def _persist_index_append(self, number: int, loc: BlockLocation) -> None:
        if self._index_stale:
            self._persist_index_full()
            return
        with open(self.directory / INDEX_FILE, "ab") as fh:
            fh.write(_INDEX_RECORD.pack(number, loc.file_id, loc.offset, loc.length))

    def _persist_index_full(self) -> None:
        with open(self.directory / INDEX_FILE, "wb") as fh:
            for number in sorted(self.index):
                loc = self.index[number]
                fh.write(_INDEX_RECORD.pack(number, loc.file_id, loc.offset, loc.length))
        self._index_stale = False

    def _refresh_file_sizes(self) -> None:
        sizes = {}
        for entry in self.directory.iterdir():
            name = entry.name
            if name.startswith("blockfile_") and name[10:].isdigit():
                sizes[int(name[10:])] = entry.stat().st_size
        self._file_sizes = sizes

    def _load_last_header(self) -> None:
        # a corrupt tip is tolerated at rest; appends against it are refused
        self._last_header = None
        if self.index:
            try:
                self._last_header = self.read_header(self.height - 1)
            except MalformedBlock:
                pass
