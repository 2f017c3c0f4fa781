"""Benchmarks: validation wall time, recovery throughput, kernel comparison.

Reported numbers are wall-clock measurements on the local machine; the
recovery report also carries the 8.5 blocks/second reference figure from the
original evaluation hardware for side-by-side comparison.
"""

from __future__ import annotations

import random
import shutil
import time
from pathlib import Path

from ledgerguard import _codec_py, blocks
from ledgerguard.identity import TrustStore
from ledgerguard.peers import PeerEndpoint, TcpPeerClient
from ledgerguard.recovery import recover
from ledgerguard.store import LedgerStore
from ledgerguard.testkit import REGIONS, InjectionRecord, inject
from ledgerguard.validator import scan

try:
    from ledgerguard import _codec
except ImportError:
    _codec = None

REFERENCE_RECOVERY_BLOCKS_PER_SECOND = 8.5  # reported by the original evaluation


def time_validation(store: LedgerStore, trust: TrustStore,
                    checkpoints=None) -> dict:
    t0 = time.perf_counter()
    report = scan(store, trust, checkpoints)
    elapsed = time.perf_counter() - t0
    return {
        "blocks": report.height,
        "clean": report.clean,
        "findings": len(report.findings),
        "wall_seconds": elapsed,
        "blocks_per_second": report.height / elapsed if elapsed > 0 else 0.0,
    }


def bench_recovery(ledger_dir: str | Path, trust: TrustStore,
                   peers: list[PeerEndpoint], *, corrupt_blocks: int = 100,
                   rng_seed: int = 0, client=None, scratch_dir=None) -> dict:
    """Corrupt a scratch copy of the ledger, recover it from peers, time it.

    Corruption uses size-preserving bit flips across all regions so the
    measured figure is fetch+validate+commit throughput, the shape of the
    original experiment.
    """
    ledger_dir = Path(ledger_dir)
    scratch = Path(scratch_dir) if scratch_dir else ledger_dir.parent / (
        ledger_dir.name + ".bench")
    if scratch.exists():
        shutil.rmtree(scratch)
    shutil.copytree(ledger_dir, scratch)

    rng = random.Random(rng_seed)
    store = LedgerStore.open(scratch)
    count = min(corrupt_blocks, store.height)
    victims = rng.sample(range(store.height), count)
    store.close()
    for i, victim in enumerate(victims):
        region = REGIONS[rng.randrange(3)]  # header | data | metadata
        inject(scratch, InjectionRecord(victim, region, "bitflip",
                                        rng_seed=rng_seed * 100003 + i))

    store = LedgerStore.open(scratch)
    report = scan(store, trust)
    t0 = time.perf_counter()
    outcome = recover(store, report, peers, trust, client=client or TcpPeerClient())
    elapsed = time.perf_counter() - t0
    post = scan(store, trust)
    store.close()
    shutil.rmtree(scratch)
    return {
        "corrupted_blocks": count,
        "recovered_blocks": len(outcome.recovered),
        "failed_blocks": len(outcome.failed),
        "wall_seconds": elapsed,
        "blocks_per_second": len(outcome.recovered) / elapsed if elapsed > 0 else 0.0,
        "post_scan_clean": post.clean,
        "reference_blocks_per_second": REFERENCE_RECOVERY_BLOCKS_PER_SECOND,
    }


def bench_kernels(store: LedgerStore, *, max_blocks: int = 2000,
                  repeats: int = 3) -> dict:
    """Structural-parse throughput of the compiled kernel vs pure Python."""
    sample = [store.read_block_bytes(n)
              for n in range(min(store.height, max_blocks))]
    result = {
        "blocks": len(sample),
        "selected_backend": blocks.KERNEL_BACKEND,
        "compiled_available": _codec is not None,
    }

    def throughput(outline) -> float:
        best = 0.0
        for _ in range(repeats):
            t0 = time.perf_counter()
            for raw in sample:
                outline(raw)
            elapsed = time.perf_counter() - t0
            best = max(best, len(sample) / elapsed if elapsed > 0 else 0.0)
        return best

    result["python_blocks_per_second"] = throughput(_codec_py.block_outline)
    if _codec is not None:
        result["compiled_blocks_per_second"] = throughput(_codec.block_outline)
        result["speedup"] = (result["compiled_blocks_per_second"]
                             / result["python_blocks_per_second"])
    return result


def bench_validation(ledger_dir: str | Path, trust: TrustStore) -> dict:
    store = LedgerStore.open(ledger_dir)
    try:
        return time_validation(store, trust)
    finally:
        store.close()
