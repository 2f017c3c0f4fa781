"""Recovery tests: per-block splice, region repair, peer disambiguation."""

import shutil

import pytest

from ledgerguard import blocks
from ledgerguard.blocks import Transaction
from ledgerguard.errors import NoValidSource
from ledgerguard.identity import sign
from ledgerguard.peers import InProcessNetwork, PeerEndpoint
from ledgerguard.recovery import ChainContext, fetch_valid_block, recover
from ledgerguard.store import LedgerStore
from ledgerguard.testkit import (
    DEFAULT_LEDGER_ID,
    InjectionRecord,
    inject,
    orderer_keypair,
    read_chain,
    resign_chain,
)
from ledgerguard.validator import scan


def ledger_files(path):
    return {
        p.name: p.read_bytes()
        for p in sorted(path.iterdir())
        if p.name.startswith("blockfile_")
    }


@pytest.fixture
def recovery_world(make_ledger, tmp_path):
    """A pristine ledger, a corruptible copy, and honest in-process peers."""

    def _build(num_blocks=20, honest_peers=3, **gen_kw):
        pristine_dir, keys_dir, pristine_store, trust = make_ledger(
            num_blocks=num_blocks, **gen_kw)
        local_dir = tmp_path / "local"
        shutil.copytree(pristine_dir, local_dir)
        net = InProcessNetwork()
        endpoints = [
            net.serve_store(f"honest{i}", pristine_store, DEFAULT_LEDGER_ID)
            for i in range(honest_peers)
        ]
        return {
            "pristine_dir": pristine_dir,
            "pristine_store": pristine_store,
            "local_dir": local_dir,
            "trust": trust,
            "net": net,
            "endpoints": endpoints,
        }

    return _build


def run_recovery(world, extra_peers=None, peers=None):
    store = LedgerStore.open(world["local_dir"])
    report = scan(store, world["trust"])
    endpoints = peers if peers is not None else (
        (extra_peers or []) + world["endpoints"])
    outcome = recover(store, report, endpoints, world["trust"],
                      client=world["net"].client())
    return store, report, outcome


class TestFetchValidBlock:
    def test_first_honest_peer_answers_once(self, recovery_world):
        world = recovery_world()
        tally = {}
        data = fetch_valid_block(
            3, world["endpoints"], world["trust"], ChainContext(3),
            client=world["net"].client(), tally=tally)
        assert data == world["pristine_store"].read_block_bytes(3)
        assert tally["honest0"].served == 1
        assert "honest1" not in tally or tally["honest1"].served == 0

    def test_wrong_number_candidate_rejected(self, recovery_world):
        world = recovery_world()
        pristine = world["pristine_store"]

        def wrong_number_handler(msg):
            from ledgerguard import wire
            _, number = wire.decode_block_request(msg.payload)
            served = pristine.read_block_bytes(min(number + 1, pristine.height - 1))
            return wire.encode_frame(wire.encode_block_response(wire.STATUS_OK, served))

        world["net"].register("evil", wrong_number_handler)
        evil = PeerEndpoint("evil", DEFAULT_LEDGER_ID)
        tally = {}
        data = fetch_valid_block(
            3, [evil] + world["endpoints"], world["trust"], ChainContext(3),
            client=world["net"].client(), tally=tally)
        assert data == pristine.read_block_bytes(3)
        assert tally["evil"].invalid == 1
        assert tally["honest0"].served == 1

    def test_all_unreachable_reports_reasons(self, recovery_world):
        world = recovery_world()
        ghosts = [PeerEndpoint(f"ghost{i}", DEFAULT_LEDGER_ID) for i in range(2)]
        with pytest.raises(NoValidSource) as err:
            fetch_valid_block(1, ghosts, world["trust"], ChainContext(1),
                              client=world["net"].client())
        assert set(err.value.reasons) == {"ghost0", "ghost1"}
        assert all("unreachable" in r for r in err.value.reasons.values())


class TestRecoverSingleFault:
    def test_bitflip_recovered_byte_identical(self, recovery_world):
        world = recovery_world()
        inject(world["local_dir"], InjectionRecord(7, "data", "bitflip", rng_seed=11))
        store, report, outcome = run_recovery(world)
        assert not report.clean
        assert outcome.recovered == [7]
        assert outcome.failed == []
        assert scan(store, world["trust"]).clean
        assert ledger_files(world["local_dir"]) == ledger_files(world["pristine_dir"])

    def test_signature_corruption_recovered(self, recovery_world):
        world = recovery_world()
        inject(world["local_dir"], InjectionRecord(4, "metadata", "bitflip", rng_seed=3))
        store, _, outcome = run_recovery(world)
        assert 4 in outcome.recovered
        assert scan(store, world["trust"]).clean
        assert ledger_files(world["local_dir"]) == ledger_files(world["pristine_dir"])

    def test_truncate_changes_size_and_recovers(self, recovery_world):
        # size-changing damage: framing breaks, region repair refetches the tail
        world = recovery_world()
        inject(world["local_dir"], InjectionRecord(9, "data", "truncate", rng_seed=5))
        store, _, outcome = run_recovery(world)
        assert 9 in outcome.recovered
        assert outcome.failed == []
        assert scan(store, world["trust"]).clean
        assert ledger_files(world["local_dir"]) == ledger_files(world["pristine_dir"])

    def test_grow_at_last_block(self, recovery_world):
        world = recovery_world(num_blocks=12)
        inject(world["local_dir"], InjectionRecord(11, "data", "grow", rng_seed=6))
        store, _, outcome = run_recovery(world)
        assert 11 in outcome.recovered
        assert scan(store, world["trust"]).clean
        assert ledger_files(world["local_dir"]) == ledger_files(world["pristine_dir"])

    def test_zeroed_prefix_region_repair(self, recovery_world):
        world = recovery_world(num_blocks=15)
        inject(world["local_dir"], InjectionRecord(8, "length_prefix", "zero", rng_seed=2))
        store, report, outcome = run_recovery(world)
        # blocks 8.. were unreachable behind the broken frame and are refetched
        assert set(outcome.recovered) == set(range(8, 15))
        assert outcome.failed == []
        assert scan(store, world["trust"]).clean
        assert ledger_files(world["local_dir"]) == ledger_files(world["pristine_dir"])

    def test_region_repair_bounded_by_next_file(self, recovery_world):
        world = recovery_world(num_blocks=24, max_file_size=2000)
        local = LedgerStore.open(world["local_dir"])
        assert len(local.file_ids()) >= 3
        target_file = local.file_ids()[0]
        victim = local.numbers_in_file(target_file)[1]
        file_count = len(local.numbers_in_file(target_file))
        local.close()
        inject(world["local_dir"],
               InjectionRecord(victim, "length_prefix", "zero", rng_seed=4))
        store, _, outcome = run_recovery(world)
        # only the blocks behind the broken frame within that file are refetched
        assert set(outcome.recovered) == set(range(victim, file_count))
        assert scan(store, world["trust"]).clean
        assert ledger_files(world["local_dir"]) == ledger_files(world["pristine_dir"])

    def test_index_file_restored_too(self, recovery_world):
        world = recovery_world()
        inject(world["local_dir"], InjectionRecord(3, "data", "truncate", rng_seed=9))
        run_recovery(world)
        assert (world["local_dir"] / "blockindex").read_bytes() == \
            (world["pristine_dir"] / "blockindex").read_bytes()


class TestRecoverEdgeCases:
    def test_empty_report_is_noop(self, recovery_world):
        world = recovery_world()
        before = ledger_files(world["local_dir"])
        store, report, outcome = run_recovery(world)
        assert report.clean
        assert outcome.recovered == [] and outcome.failed == []
        assert ledger_files(world["local_dir"]) == before

    def test_idempotent(self, recovery_world):
        world = recovery_world()
        inject(world["local_dir"], InjectionRecord(5, "data", "bitflip", rng_seed=8))
        run_recovery(world)
        before = ledger_files(world["local_dir"])
        _, report2, outcome2 = run_recovery(world)
        assert report2.clean
        assert outcome2.recovered == [] and outcome2.failed == []
        assert ledger_files(world["local_dir"]) == before

    def test_all_peers_unreachable_fails_gracefully(self, recovery_world):
        world = recovery_world()
        inject(world["local_dir"], InjectionRecord(5, "data", "bitflip", rng_seed=8))
        before = ledger_files(world["local_dir"])
        ghosts = [PeerEndpoint("ghost", DEFAULT_LEDGER_ID)]
        store, _, outcome = run_recovery(world, peers=ghosts)
        assert outcome.recovered == []
        assert [n for n, _ in outcome.failed] == [5]
        assert ledger_files(world["local_dir"]) == before

    def test_every_peer_copy_corrupt_leaves_local_untouched(self, recovery_world, tmp_path):
        world = recovery_world(honest_peers=0)
        # both peers serve copies corrupted at the same block
        for i in range(2):
            peer_dir = tmp_path / f"badpeer{i}"
            shutil.copytree(world["pristine_dir"], peer_dir)
            inject(peer_dir, InjectionRecord(6, "data", "bitflip", rng_seed=20 + i))
            world["net"].serve_store(f"bad{i}", LedgerStore.open(peer_dir),
                                     DEFAULT_LEDGER_ID)
        inject(world["local_dir"], InjectionRecord(6, "data", "bitflip", rng_seed=30))
        before = ledger_files(world["local_dir"])
        peers = [PeerEndpoint(f"bad{i}", DEFAULT_LEDGER_ID) for i in range(2)]
        store, _, outcome = run_recovery(world, peers=peers)
        assert outcome.recovered == []
        assert [n for n, _ in outcome.failed] == [6]
        assert ledger_files(world["local_dir"]) == before

    def test_throughput_reported(self, recovery_world):
        world = recovery_world()
        inject(world["local_dir"], InjectionRecord(2, "data", "bitflip", rng_seed=1))
        _, _, outcome = run_recovery(world)
        assert outcome.blocks_per_second > 0

    def test_outcome_json_shape(self, recovery_world):
        world = recovery_world()
        inject(world["local_dir"], InjectionRecord(2, "data", "bitflip", rng_seed=1))
        _, _, outcome = run_recovery(world)
        doc = outcome.to_json_dict()
        assert set(doc) == {"recovered", "failed", "peer_stats", "blocks_per_second"}
        assert doc["recovered"] == [2]
        assert set(doc["peer_stats"]["honest0"]) == {"served", "invalid", "unreachable"}


class TestLinkDisambiguation:
    def _write_variant(self, world, number, mutate):
        """Replace block ``number`` in the local copy with a signed variant."""
        local = LedgerStore.open(world["local_dir"])
        chain = read_chain(local)
        orderer = orderer_keypair(7)  # matches make_ledger's default seed
        variant = mutate(chain, orderer)
        raw = blocks.encode_block(variant)
        loc = local.location(number)
        assert len(raw) == loc.length, "variant must keep the record size"
        path = local.file_path(loc.file_id)
        data = bytearray(path.read_bytes())
        data[loc.offset + 4:loc.offset + 4 + loc.length] = raw
        path.write_bytes(bytes(data))
        local.close()

    def test_corrupt_lower_block_replaced(self, recovery_world):
        # a validly signed variant of block 6: the only symptom is the broken
        # pointer from block 7
        world = recovery_world()

        def mutate(chain, orderer):
            tx = chain[6].data[0]
            new_payload = bytes(len(tx.payload))
            chain[6] = blocks.Block(
                chain[6].header,
                (Transaction(new_payload, tx.endorsements),) + chain[6].data[1:],
                chain[6].metadata,
            )
            return resign_chain(chain, 6, orderer)[6]

        self._write_variant(world, 6, mutate)
        store, report, outcome = run_recovery(world)
        assert [f.to_json_dict() for f in report.findings] == [
            {"kind": "link_mismatch", "blocks": [6, 7]}
        ]
        assert outcome.recovered == [6]
        assert scan(store, world["trust"]).clean
        assert ledger_files(world["local_dir"]) == ledger_files(world["pristine_dir"])

    def test_innocent_lower_block_not_refetched_upper_fixed(self, recovery_world):
        # block 7 is rebuilt with a wrong previous_hash and re-signed: links
        # (6,7) and (7,8) both break, block 6 is innocent
        world = recovery_world()

        def mutate(chain, orderer):
            return blocks.build_block(
                7, b"\x42" * 32, chain[7].data, b"orderer",
                lambda h: sign(orderer, h))

        self._write_variant(world, 7, mutate)
        store, report, outcome = run_recovery(world)
        kinds = [f.to_json_dict() for f in report.findings]
        assert {"kind": "link_mismatch", "blocks": [6, 7]} in kinds
        assert {"kind": "link_mismatch", "blocks": [7, 8]} in kinds
        assert outcome.recovered == [7]
        assert scan(store, world["trust"]).clean
        assert ledger_files(world["local_dir"]) == ledger_files(world["pristine_dir"])


class TestAdversarialPeers:
    def make_adversaries(self, world):
        from ledgerguard import wire
        pristine = world["pristine_store"]

        def wrong_number(msg):
            _, number = wire.decode_block_request(msg.payload)
            served = pristine.read_block_bytes((number + 1) % pristine.height)
            return wire.encode_frame(wire.encode_block_response(wire.STATUS_OK, served))

        def bit_flipper(msg):
            _, number = wire.decode_block_request(msg.payload)
            data = bytearray(pristine.read_block_bytes(number))
            data[len(data) // 2] ^= 0x40
            return wire.encode_frame(
                wire.encode_block_response(wire.STATUS_OK, bytes(data)))

        def frame_truncator(msg):
            _, number = wire.decode_block_request(msg.payload)
            data = pristine.read_block_bytes(number)
            return wire.encode_frame(wire.encode_block_response(wire.STATUS_OK, data))[:9]

        world["net"].register("wrongnum", wrong_number)
        world["net"].register("flipper", bit_flipper)
        world["net"].register("truncator", frame_truncator)
        return [PeerEndpoint(name, DEFAULT_LEDGER_ID)
                for name in ("wrongnum", "flipper", "truncator")]

    def test_adversaries_never_commit_honest_peer_wins(self, recovery_world):
        world = recovery_world(num_blocks=16, honest_peers=1)
        adversaries = self.make_adversaries(world)
        for number, seed in ((3, 1), (9, 2), (13, 3)):
            inject(world["local_dir"], InjectionRecord(number, "data", "bitflip",
                                                       rng_seed=seed))
        store, _, outcome = run_recovery(world, extra_peers=adversaries)
        assert set(outcome.recovered) == {3, 9, 13}
        assert outcome.failed == []
        assert scan(store, world["trust"]).clean
        assert ledger_files(world["local_dir"]) == ledger_files(world["pristine_dir"])
        assert outcome.peer_stats["wrongnum"].invalid >= 3
        assert outcome.peer_stats["flipper"].invalid >= 3
        assert outcome.peer_stats["truncator"].unreachable >= 3
        assert outcome.peer_stats["honest0"].served >= 3
