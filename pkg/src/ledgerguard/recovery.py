"""Fetch authentic blocks from peers and splice them into the store.

Recovery runs in two phases.  Phase 1 repairs structural damage: any file
region whose record framing is unreadable is refetched block by block (the
region's true extent is bounded by the next file's first block, or by the
peers answering NOT_FOUND past the end of the chain) and the file tail is
rewritten.  Phase 2 repairs content: every implicated block that still fails
local validation is fetched, chain-checked against its validated neighbours,
and spliced via replace_block; a link-mismatch pair is disambiguated by
fetching the lower block first and comparing bytes, the byte-identical side
being innocent.

Every candidate must carry a Valid verdict, the requested number, and hash
pointers consistent with the locally validated context, so a peer serving
validly signed but misplaced blocks never gets a candidate committed.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

from ledgerguard import blocks
from ledgerguard.blocks import BlockHeader, ZERO_HASH, header_hash
from ledgerguard.errors import (
    MalformedBlock,
    NoValidSource,
    OutOfRange,
    TransportError,
    UnreadableTail,
)
from ledgerguard.identity import TrustStore
from ledgerguard.peers import PeerEndpoint, TcpPeerClient
from ledgerguard.store import LedgerStore
from ledgerguard.validator import (
    LINK_MISMATCH,
    BlockVerdict,
    CorruptionReport,
    _validate,
    scan,
)

log = logging.getLogger(__name__)


@dataclass
class PeerTally:
    served: int = 0
    invalid: int = 0
    unreachable: int = 0

    def to_json_dict(self) -> dict:
        return {"served": self.served, "invalid": self.invalid,
                "unreachable": self.unreachable}


@dataclass(frozen=True)
class ChainContext:
    number: int
    predecessor: BlockHeader | None = None
    successor: BlockHeader | None = None


@dataclass
class RecoveryOutcome:
    recovered: list[int] = field(default_factory=list)
    failed: list[tuple[int, str]] = field(default_factory=list)
    peer_stats: dict[str, PeerTally] = field(default_factory=dict)
    blocks_per_second: float = 0.0

    def to_json_dict(self) -> dict:
        return {
            "recovered": list(self.recovered),
            "failed": [{"block": n, "reason": r} for n, r in self.failed],
            "peer_stats": {ep: t.to_json_dict() for ep, t in self.peer_stats.items()},
            "blocks_per_second": self.blocks_per_second,
        }


def candidate_ok(data: bytes, number: int, trust: TrustStore,
                 ctx: ChainContext) -> bool:
    """Full acceptance check for a fetched block."""
    verdict, header = _validate(data, trust)
    if verdict is not BlockVerdict.VALID or header.number != number:
        return False
    if number == 0 and header.previous_hash != ZERO_HASH:
        return False
    if ctx.predecessor is not None and \
            header.previous_hash != header_hash(ctx.predecessor):
        return False
    if ctx.successor is not None and \
            ctx.successor.previous_hash != header_hash(header):
        return False
    return True


def fetch_valid_block(number: int, peers: list[PeerEndpoint], trust: TrustStore,
                      ctx: ChainContext, *, client=None,
                      tally: dict[str, PeerTally] | None = None) -> bytes:
    """Ask peers in order until one serves a candidate passing all checks."""
    if not peers:
        raise NoValidSource(number, {})
    client = client or TcpPeerClient()
    tally = tally if tally is not None else {}
    reasons: dict[str, str] = {}
    for endpoint in peers:
        stats = tally.setdefault(endpoint.address, PeerTally())
        try:
            result = client.fetch(endpoint, number)
        except TransportError as exc:
            stats.unreachable += 1
            reasons[endpoint.address] = f"unreachable: {exc.reason}"
            continue
        if result.status == "ok":
            if candidate_ok(result.data, number, trust, ctx):
                stats.served += 1
                return result.data
            stats.invalid += 1
            reasons[endpoint.address] = "invalid candidate"
        else:
            stats.invalid += 1
            reasons[endpoint.address] = result.status
    raise NoValidSource(number, reasons)


class _Recovery:
    def __init__(self, store: LedgerStore, peers: list[PeerEndpoint],
                 trust: TrustStore, client):
        self.store = store
        self.peers = list(peers)
        self.trust = trust
        self.client = client or TcpPeerClient()
        self.tally: dict[str, PeerTally] = {
            ep.address: PeerTally() for ep in self.peers
        }
        self.recovered: list[int] = []
        self.failed: dict[int, str] = {}

    # -- helpers ------------------------------------------------------------

    def _validated_header(self, number: int) -> BlockHeader | None:
        """Header of local block ``number`` iff it validates AND carries
        that number (a shifted authentic block must not anchor anything)."""
        if number < 0:
            return None
        try:
            data = self.store.read_block_bytes(number)
        except OutOfRange:
            return None
        verdict, header = _validate(data, self.trust)
        if verdict is BlockVerdict.VALID and header.number == number:
            return header
        return None

    def _locally_clean(self, number: int) -> bool:
        """Block validates and links to both parseable neighbours."""
        try:
            data = self.store.read_block_bytes(number)
        except OutOfRange:
            return False
        verdict, header = _validate(data, self.trust)
        if verdict is not BlockVerdict.VALID or header.number != number:
            return False
        if number == 0:
            if header.previous_hash != ZERO_HASH:
                return False
        else:
            prev = self._validated_header(number - 1)
            if prev is None or header.previous_hash != header_hash(prev):
                return False
        if number + 1 < self.store.height:
            try:
                nxt = self.store.read_header(number + 1)
            except (MalformedBlock, OutOfRange):
                return False
            if nxt.previous_hash != header_hash(header):
                return False
        return True

    def _fetch(self, number: int, ctx: ChainContext) -> bytes | None:
        try:
            return fetch_valid_block(number, self.peers, self.trust, ctx,
                                     client=self.client, tally=self.tally)
        except NoValidSource as exc:
            self.failed[number] = _summary(exc.reasons)
            return None

    # -- phase 1: structural repair -------------------------------------------

    def repair_structure(self) -> bool:
        """Rewrite file tails whose record framing derailed.

        A derail point is either an unreadable region or the first record
        whose content is authentic (Valid verdict) but whose header number
        disagrees with its sequence position, the footprint left behind when
        garbled framing re-synchronizes on a later block boundary.  Files
        are repaired in ascending order; each repair realigns the sequential
        numbering of everything after it.
        """
        attempted: set[int] = set()
        did_anything = False
        while True:
            damage = self._first_derail(attempted)
            if damage is None:
                return did_anything
            file_id, start_number, start_offset = damage
            attempted.add(file_id)
            if not self._refetch_tail(file_id, start_number, start_offset):
                # peers could not complete this file; later files would be
                # evaluated against shifted numbering, so stop here
                return did_anything
            did_anything = True

    def _first_derail(self, attempted: set[int]):
        regions = self.store.unreadable_regions()
        position = 0
        for file_id in self.store.file_ids():
            records, _ = self.store.physical_records(file_id)
            if file_id in attempted:
                position += len(records)
                continue
            for offset, length in records:
                data = self.store._pread(file_id, offset + 4, length)
                try:
                    number = blocks.decode_header(data).number
                except MalformedBlock:
                    position += 1
                    continue
                if number != position:
                    # full validation only on suspects: a forged header
                    # cannot carry a valid signature, so garbage here is
                    # content damage for phase 2, not a frame shift
                    verdict, _ = _validate(data, self.trust)
                    if verdict is BlockVerdict.VALID:
                        return file_id, position, offset
                position += 1
            if file_id in regions:
                return file_id, position, regions[file_id]
        return None

    def _refetch_tail(self, file_id: int, start: int, region_offset: int) -> bool:
        predecessor = self._validated_header(start - 1) if start > 0 else None
        bound, bound_header = self._next_file_anchor(file_id)
        fetched: list[bytes] = []
        complete = False
        number = start
        while True:
            if bound is not None and number >= bound:
                complete = True
                break
            successor = bound_header if bound is not None and number == bound - 1 else None
            ctx = ChainContext(number, predecessor, successor)
            try:
                data = fetch_valid_block(number, self.peers, self.trust, ctx,
                                         client=self.client, tally=self.tally)
            except NoValidSource as exc:
                # no peer can produce a valid candidate; a NOT_FOUND answer
                # then marks the end of the chain (a forged "next block"
                # cannot pass validation, so lying peers can at worst make
                # the repair stop early, which the post-verify reports)
                at_end = any(r == "not_found" for r in exc.reasons.values())
                if bound is None and at_end:
                    complete = True
                else:
                    self.failed[number] = _summary(exc.reasons)
                break
            fetched.append(data)
            predecessor = blocks.decode_header(data)
            number += 1
        if not complete:
            # leave the damaged bytes alone rather than truncating evidence
            return False
        self.store.rewrite_file_tail(file_id, region_offset, fetched)
        self.recovered.extend(range(start, number))
        return True

    def _next_file_anchor(self, file_id: int):
        """True number of the next file's first block, when it validates."""
        later = [f for f in self.store.file_ids() if f > file_id]
        if not later:
            return None, None
        next_id = later[0]
        records, _ = self.store.physical_records(next_id)
        if not records:
            return None, None
        offset, length = records[0]
        data = self.store._pread(next_id, offset + 4, length)
        verdict, header = _validate(data, self.trust)
        if verdict is BlockVerdict.VALID:
            return header.number, header
        return None, None

    # -- phase 2: per-block content -----------------------------------------

    def repair_block(self, number: int, *, force_context: ChainContext | None = None) -> None:
        if number in self.failed or number in set(self.recovered):
            return
        if self._locally_clean(number):
            return
        if number >= self.store.height:
            self.failed.setdefault(number, "unreadable region")
            return
        ctx = force_context or self._context_for(number)
        data = self._fetch(number, ctx)
        if data is None:
            return
        local = self.store.read_block_bytes(number)
        if local == data:
            return  # innocent: the local copy already matches the network
        self._commit(number, data)

    def _context_for(self, number: int) -> ChainContext:
        return ChainContext(
            number,
            predecessor=self._validated_header(number - 1) if number > 0 else None,
            successor=(self._validated_header(number + 1)
                       if number + 1 < self.store.height else None),
        )

    def disambiguate_pair(self, a: int, b: int) -> None:
        if self._link_ok(a, b):
            return
        # fetch the lower block without a successor constraint: the upper
        # block of the pair is under suspicion and must not veto candidates
        ctx = ChainContext(
            a,
            predecessor=self._validated_header(a - 1) if a > 0 else None,
            successor=None,
        )
        data = self._fetch(a, ctx)
        if data is None:
            return
        try:
            local = self.store.read_block_bytes(a)
        except OutOfRange:
            local = None
        if data != local:
            self._commit(a, data)
            if self._link_ok(a, b):
                return
        # the lower block was innocent (or fixed): the upper one is corrupt
        self.repair_block(b)

    def _commit(self, number: int, data: bytes) -> bool:
        try:
            self.store.replace_block(number, data)
        except UnreadableTail as exc:
            self.failed[number] = str(exc)
            return False
        self.recovered.append(number)
        return True

    def _link_ok(self, a: int, b: int) -> bool:
        ha = self._validated_header(a)
        hb = self._validated_header(b)
        return (ha is not None and hb is not None
                and hb.previous_hash == header_hash(ha))


def recover(store: LedgerStore, report: CorruptionReport,
            peers: list[PeerEndpoint], trust: TrustStore, *,
            client=None) -> RecoveryOutcome:
    """Repair every implicated block; per-block failures land in the outcome."""
    t0 = time.perf_counter()
    job = _Recovery(store, peers, trust, client)

    if not report.clean or store.unreadable_regions():
        if job.repair_structure():
            report = scan(store, trust)

        targets: list[int] = []
        pairs: list[tuple[int, int]] = []
        for finding in report.findings:
            if finding.kind == LINK_MISMATCH and len(finding.blocks) == 2:
                pairs.append((finding.blocks[0], finding.blocks[1]))
            else:
                targets.extend(finding.blocks)
        for number in sorted(set(targets)):
            job.repair_block(number)
        for a, b in pairs:
            job.disambiguate_pair(a, b)

        _post_verify(job, store, trust)

    elapsed = max(time.perf_counter() - t0, 1e-9)
    outcome = RecoveryOutcome(
        recovered=sorted(set(job.recovered)),
        failed=sorted(job.failed.items()),
        peer_stats=job.tally,
        blocks_per_second=len(set(job.recovered)) / elapsed,
    )
    if outcome.failed:
        log.warning("recovery left %d block(s) unrepaired", len(outcome.failed))
    return outcome


def _post_verify(job: _Recovery, store: LedgerStore, trust: TrustStore) -> None:
    """Confirming scan; residual findings demote their blocks to failed."""
    residual = scan(store, trust)
    if residual.clean:
        return
    implicated = {n for f in residual.findings for n in f.blocks}
    still_bad = implicated & set(job.recovered)
    for number in still_bad:
        job.recovered.remove(number)
        job.failed.setdefault(number, "residual finding after splice")
    for number in implicated - still_bad:
        job.failed.setdefault(number, "residual finding after splice")


def _summary(reasons: dict[str, str]) -> str:
    if not reasons:
        return "no peers configured"
    return "; ".join(f"{ep}: {why}" for ep, why in sorted(reasons.items()))
