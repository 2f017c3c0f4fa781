"""Guard service tests: scheduling rules, mutual exclusion, cycle behaviour."""

import json
import shutil
import threading

import pytest

from ledgerguard.errors import CycleInProgress
from ledgerguard.guard import (
    GuardConfig,
    GuardService,
    ScriptedClock,
    ScriptedProbe,
)
from ledgerguard.peers import InProcessNetwork
from ledgerguard.store import LedgerStore
from ledgerguard.testkit import DEFAULT_LEDGER_ID, InjectionRecord, inject
from ledgerguard.validator import CHECKPOINT_FILE, load_checkpoints
from ledgerguard.validator import scan as validator_scan


class TestGuardConfig:
    def test_cpu_fields_required_iff_cpu_triggered(self):
        with pytest.raises(ValueError):
            GuardConfig(mode="cpu_triggered", interval_seconds=5)
        GuardConfig(mode="cpu_triggered", interval_seconds=5,
                    cpu_threshold_percent=30, consecutive_idle_samples=3)
        GuardConfig(mode="periodic", interval_seconds=5)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            GuardConfig(mode="sometimes")

    def test_load_with_overrides(self, tmp_path):
        path = tmp_path / "guard.json"
        path.write_text(json.dumps({
            "mode": "periodic",
            "interval_seconds": 30,
            "peers": ["a:1", "b:2"],
            "auto_recover": True,
        }))
        cfg = GuardConfig.load(path, interval_seconds=10)
        assert cfg.interval_seconds == 10
        assert cfg.mode == "periodic"
        assert [e.address for e in cfg.peer_endpoints()] == ["a:1", "b:2"]
        assert cfg.peer_endpoints()[0].ledger_id == b"primary"


def make_service(make_ledger, config, **kw):
    _, _, store, trust = make_ledger(num_blocks=6)
    return GuardService(store, trust, config, **kw)


class TestPeriodicSchedule:
    def test_overrunning_cycle_skips_ticks(self, make_ledger):
        # interval 10, each cycle takes 25: starts at t=0 and t=30
        clock = ScriptedClock()
        service = make_service(
            make_ledger,
            GuardConfig(mode="periodic", interval_seconds=10),
            clock=clock,
            cycle_fn=lambda: clock.advance(25),
        )
        service.run_periodic(max_cycles=2)
        assert service.cycle_start_times == [0, 30]

    def test_fast_cycles_hit_every_tick(self, make_ledger):
        # liveness: over T = 3 intervals a fast cycle runs floor(T/i)+1 times
        clock = ScriptedClock()
        service = make_service(
            make_ledger,
            GuardConfig(mode="periodic", interval_seconds=10),
            clock=clock,
            cycle_fn=lambda: None,
        )
        service.run_periodic(max_cycles=4)
        assert service.cycle_start_times == [0, 10, 20, 30]

    def test_cycle_ending_on_tick_boundary(self, make_ledger):
        # a cycle ending exactly on a tick leaves that tick skipped
        clock = ScriptedClock()
        service = make_service(
            make_ledger,
            GuardConfig(mode="periodic", interval_seconds=10),
            clock=clock,
            cycle_fn=lambda: clock.advance(10),
        )
        service.run_periodic(max_cycles=3)
        assert service.cycle_start_times == [0, 20, 40]

    def test_corruption_between_cycles_detected_next_cycle(self, make_ledger, tmp_path):
        ledger_dir, _, store, trust = make_ledger(num_blocks=8)
        clock = ScriptedClock()
        reports = []
        config = GuardConfig(mode="periodic", interval_seconds=10)
        service = GuardService(store, trust, config, clock=clock)
        real_cycle = service._real_cycle

        def cycle():
            reports.append(real_cycle()[0])
            if len(reports) == 1:
                inject(ledger_dir, InjectionRecord(3, "data", "bitflip", rng_seed=5))
                service.store = LedgerStore.open(ledger_dir)

        service._cycle_fn = cycle
        service.run_periodic(max_cycles=2)
        assert reports[0].clean
        assert not reports[1].clean
        assert {n for f in reports[1].findings for n in f.blocks} == {3}


class TestCpuTriggered:
    def cpu_config(self, window=3):
        return GuardConfig(mode="cpu_triggered", interval_seconds=10,
                           cpu_threshold_percent=30,
                           consecutive_idle_samples=window)

    def test_fires_after_idle_streak(self, make_ledger):
        clock = ScriptedClock()
        probe = ScriptedProbe([80, 25, 20, 10])
        service = make_service(make_ledger, self.cpu_config(), clock=clock,
                               probe=probe, cycle_fn=lambda: None)
        service.run_cpu_triggered(max_cycles=1)
        assert probe.samples_taken == 4
        assert service.cycle_start_times == [30]

    def test_streak_resets_on_busy_sample(self, make_ledger):
        clock = ScriptedClock()
        probe = ScriptedProbe([25, 20, 80, 25, 20, 10])
        service = make_service(make_ledger, self.cpu_config(), clock=clock,
                               probe=probe, cycle_fn=lambda: None)
        service.run_cpu_triggered(max_cycles=1)
        assert probe.samples_taken == 6
        assert service.cycle_start_times == [50]

    def test_never_fires_when_busy(self, make_ledger):
        clock = ScriptedClock()
        service_box = {}

        class StoppingProbe(ScriptedProbe):
            def __call__(self):
                if self.samples_taken >= 8:
                    service_box["svc"].stop()
                return super().__call__()

        probe = StoppingProbe([90] * 12)
        service = make_service(make_ledger, self.cpu_config(), clock=clock,
                               probe=probe, cycle_fn=lambda: None)
        service_box["svc"] = service
        service.run_cpu_triggered()
        assert service.cycles_completed == 0

    def test_threshold_is_strict(self, make_ledger):
        # readings equal to the threshold do not count as idle
        clock = ScriptedClock()
        probe = ScriptedProbe([30, 30, 30, 29, 29, 29])
        service = make_service(make_ledger, self.cpu_config(), clock=clock,
                               probe=probe, cycle_fn=lambda: None)
        service.run_cpu_triggered(max_cycles=1)
        assert probe.samples_taken == 6

    def test_spike_mid_cycle_does_not_abort(self, make_ledger):
        clock = ScriptedClock()
        finished = []

        def slow_cycle():
            clock.advance(100)  # plenty of probe intervals pass while running
            finished.append(clock.now())

        probe = ScriptedProbe([10, 95, 95, 95])
        service = make_service(make_ledger, self.cpu_config(window=1),
                               clock=clock, probe=probe, cycle_fn=slow_cycle)
        service.run_cpu_triggered(max_cycles=1)
        assert finished == [100]  # started at t=0, ran all the way through


class TestMutualExclusion:
    def test_concurrent_triggers_never_overlap(self, make_ledger):
        service = make_service(make_ledger, GuardConfig(mode="manual"))
        results = {"ok": 0, "busy": 0}
        lock = threading.Lock()

        def trigger():
            try:
                service.run_cycle()
            except CycleInProgress:
                with lock:
                    results["busy"] += 1
            else:
                with lock:
                    results["ok"] += 1

        threads = [threading.Thread(target=trigger) for _ in range(100)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert results["ok"] + results["busy"] == 100
        assert results["ok"] >= 1
        assert service.max_in_flight == 1

    def test_cycle_in_progress_raised_while_blocked(self, make_ledger):
        release = threading.Event()
        started = threading.Event()

        def blocking_cycle():
            started.set()
            release.wait(timeout=10)

        service = make_service(make_ledger, GuardConfig(mode="manual"),
                               cycle_fn=blocking_cycle)
        worker = threading.Thread(target=service.run_cycle)
        worker.start()
        started.wait(timeout=10)
        with pytest.raises(CycleInProgress):
            service.run_cycle()
        release.set()
        worker.join()


class TestRunCycle:
    def test_clean_ledger_no_recovery(self, make_ledger):
        _, _, store, trust = make_ledger(num_blocks=6)
        service = GuardService(store, trust, GuardConfig(mode="manual"))
        report, outcome = service.run_cycle()
        assert report.clean
        assert outcome is None

    def test_findings_without_auto_recover_touch_nothing(self, make_ledger):
        ledger_dir, _, store, trust = make_ledger(num_blocks=8)
        inject(ledger_dir, InjectionRecord(4, "data", "bitflip", rng_seed=2))
        store = LedgerStore.open(ledger_dir)
        before = {p.name: p.read_bytes() for p in ledger_dir.iterdir()}
        service = GuardService(store, trust, GuardConfig(mode="manual"))
        report, outcome = service.run_cycle()
        assert not report.clean
        assert outcome is None
        assert {p.name: p.read_bytes() for p in ledger_dir.iterdir()} == before

    def test_auto_recover_end_to_end(self, make_ledger, tmp_path):
        ledger_dir, _, pristine_store, trust = make_ledger(num_blocks=10)
        local_dir = tmp_path / "local"
        shutil.copytree(ledger_dir, local_dir)
        inject(local_dir, InjectionRecord(6, "data", "bitflip", rng_seed=3))

        net = InProcessNetwork()
        net.serve_store("honest", pristine_store, DEFAULT_LEDGER_ID)
        store = LedgerStore.open(local_dir)
        config = GuardConfig(mode="manual", peers=("honest",), auto_recover=True)
        service = GuardService(store, trust, config, client=net.client())
        report, outcome = service.run_cycle()
        assert [n for f in report.findings for n in f.blocks] == [6]
        assert outcome.recovered == [6]
        assert validator_scan(store, trust).clean

    def test_checkpoints_written_and_used(self, make_ledger, tmp_path):
        _, _, store, trust = make_ledger(num_blocks=20, max_file_size=2000)
        cp_dir = tmp_path / "cps"
        config = GuardConfig(mode="manual", use_checkpoints=True,
                             checkpoint_dir=str(cp_dir))
        service = GuardService(store, trust, config)
        service.run_cycle()
        cps = load_checkpoints(cp_dir)
        assert cps is not None
        assert len(cps.entries) == len(store.file_ids()) - 1
        # the second cycle skips every checkpointed file
        report, _ = service.run_cycle()
        assert report.clean
        assert sorted(report.stats.files_skipped) == [e.file_id for e in cps.entries]
        assert (cp_dir / CHECKPOINT_FILE).exists()
