import shutil
from pathlib import Path

import pytest

from ledgerguard.testkit import GenParams, generate_ledger


@pytest.fixture
def make_ledger(tmp_path):
    """Generate a small ledger under the test's tmp dir.

    Returns (ledger_dir, keys_dir, store, trust); extra generations in one
    test get distinct subdirectories.
    """
    counter = {"n": 0}

    def _make(num_blocks=12, txs_per_block=3, tx_size_bytes=48, num_endorsers=1,
              rng_seed=7, max_file_size=64 * 1024 * 1024):
        counter["n"] += 1
        ledger_dir = tmp_path / f"ledger{counter['n']}"
        keys_dir = tmp_path / f"keys{counter['n']}"
        params = GenParams(
            num_blocks=num_blocks,
            txs_per_block=txs_per_block,
            tx_size_bytes=tx_size_bytes,
            num_endorsers=num_endorsers,
            rng_seed=rng_seed,
            max_file_size=max_file_size,
        )
        store, trust = generate_ledger(params, ledger_dir, keys_dir)
        return ledger_dir, keys_dir, store, trust

    return _make


@pytest.fixture
def snapshot_dir(tmp_path):
    """Copy a directory aside so tests can compare against pristine bytes."""
    counter = {"n": 0}

    def _snap(src: Path) -> Path:
        counter["n"] += 1
        dst = tmp_path / f"snapshot{counter['n']}"
        shutil.copytree(src, dst)
        return dst

    return _snap
