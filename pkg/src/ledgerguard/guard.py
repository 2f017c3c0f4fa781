"""Guard service: scan-and-recover cycles with three activation modes.

A cycle is one detection scan (checkpointed when configured), optional
recovery with a confirming re-scan, and a checkpoint refresh after a clean
result.  Cycles are mutually exclusive; a trigger that arrives while one is
in flight fails with CycleInProgress rather than queueing.

Periodic mode ticks on a fixed grid anchored at start time: if a cycle
overruns its interval, the ticks that passed during the run are skipped,
never queued.  CPU-triggered mode samples a utilization probe every interval
and starts a cycle after the configured number of consecutive sub-threshold
samples; once started, a cycle always runs to completion.  Both loops take a
clock object so tests can drive them deterministically.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from ledgerguard.errors import CycleInProgress
from ledgerguard.identity import TrustStore
from ledgerguard.peers import PeerEndpoint
from ledgerguard.recovery import RecoveryOutcome, recover
from ledgerguard.store import LedgerStore
from ledgerguard.validator import (
    CHECKPOINT_FILE,
    CorruptionReport,
    load_checkpoints,
    make_checkpoints,
    scan,
)

log = logging.getLogger(__name__)

MODES = ("periodic", "cpu_triggered", "manual")


@dataclass(frozen=True)
class GuardConfig:
    mode: str = "manual"
    interval_seconds: float = 60.0
    cpu_threshold_percent: float | None = None
    consecutive_idle_samples: int | None = None
    use_checkpoints: bool = False
    checkpoint_dir: str | None = None
    peers: tuple[str, ...] = ()
    ledger_id: str = "primary"
    auto_recover: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.interval_seconds <= 0:
            raise ValueError("interval_seconds must be positive")
        if self.mode == "cpu_triggered":
            if self.cpu_threshold_percent is None or self.consecutive_idle_samples is None:
                raise ValueError(
                    "cpu_triggered mode requires cpu_threshold_percent "
                    "and consecutive_idle_samples")
            if not 0 <= self.cpu_threshold_percent <= 100:
                raise ValueError("cpu_threshold_percent must be within [0, 100]")
            if self.consecutive_idle_samples < 1:
                raise ValueError("consecutive_idle_samples must be positive")
        if self.use_checkpoints and not self.checkpoint_dir:
            raise ValueError("use_checkpoints requires checkpoint_dir")

    @classmethod
    def load(cls, path: str | Path, **overrides) -> "GuardConfig":
        doc = json.loads(Path(path).read_text())
        doc.update({k: v for k, v in overrides.items() if v is not None})
        if "peers" in doc and doc["peers"] is not None:
            doc["peers"] = tuple(doc["peers"])
        return cls(**doc)

    def peer_endpoints(self) -> list[PeerEndpoint]:
        lid = self.ledger_id.encode("utf-8")
        return [PeerEndpoint(address, lid) for address in self.peers]


class MonotonicClock:
    def now(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)


class ScriptedClock:
    """Virtual clock for deterministic scheduler tests; sleep advances time."""

    def __init__(self, start: float = 0.0):
        self._t = start

    def now(self) -> float:
        return self._t

    def sleep(self, seconds: float) -> None:
        self._t += max(seconds, 0.0)

    def advance(self, seconds: float) -> None:
        self._t += seconds


class ScriptedProbe:
    """Deterministic CPU probe replaying a fixed sequence of readings."""

    def __init__(self, values, exhausted: float = 100.0):
        self._values = list(values)
        self._exhausted = exhausted
        self.samples_taken = 0

    def __call__(self) -> float:
        value = (self._values[self.samples_taken]
                 if self.samples_taken < len(self._values) else self._exhausted)
        self.samples_taken += 1
        return value


def system_cpu_probe(sample_seconds: float = 1.0) -> float:
    """Total CPU utilization percent sampled over a short window."""
    import psutil

    return min(max(psutil.cpu_percent(interval=sample_seconds), 0.0), 100.0)


class GuardService:
    def __init__(self, store: LedgerStore, trust: TrustStore, config: GuardConfig,
                 *, client=None, clock=None, probe=None, cycle_fn=None):
        self.store = store
        self.trust = trust
        self.config = config
        self.client = client
        self.clock = clock or MonotonicClock()
        self.probe = probe or system_cpu_probe
        self._cycle_fn = cycle_fn  # test seam: replaces the real cycle body
        self._cycle_lock = threading.Lock()
        self._stop = threading.Event()
        self._gauge_lock = threading.Lock()
        self.in_flight = 0
        self.max_in_flight = 0
        self.cycles_completed = 0
        self.cycle_start_times: list[float] = []

    # -- one cycle -----------------------------------------------------------

    def run_cycle(self) -> tuple[CorruptionReport | None, RecoveryOutcome | None]:
        """Scan, optionally recover, refresh checkpoints; never overlaps."""
        if not self._cycle_lock.acquire(blocking=False):
            raise CycleInProgress("another guard cycle is running")
        try:
            with self._gauge_lock:
                self.in_flight += 1
                self.max_in_flight = max(self.max_in_flight, self.in_flight)
            self.cycle_start_times.append(self.clock.now())
            if self._cycle_fn is not None:
                self._cycle_fn()
                return None, None
            return self._real_cycle()
        finally:
            with self._gauge_lock:
                self.in_flight -= 1
            self.cycles_completed += 1
            self._cycle_lock.release()

    def _real_cycle(self):
        checkpoints = None
        if self.config.use_checkpoints:
            checkpoints = load_checkpoints(self.config.checkpoint_dir)
        report = scan(self.store, self.trust, checkpoints)
        outcome = None
        clean = report.clean
        if not report.clean and self.config.auto_recover and self.config.peers:
            outcome = recover(self.store, report, self.config.peer_endpoints(),
                              self.trust, client=self.client)
            clean = scan(self.store, self.trust).clean
        if clean and self.config.use_checkpoints:
            cps = make_checkpoints(self.store, self.trust)
            directory = Path(self.config.checkpoint_dir)
            directory.mkdir(parents=True, exist_ok=True)
            cps.save(directory / CHECKPOINT_FILE)
        if not report.clean:
            log.info("cycle found %d finding(s)%s", len(report.findings),
                     "" if outcome is None else
                     f", recovered {len(outcome.recovered)}")
        return report, outcome

    def _guarded_cycle(self) -> None:
        try:
            self.run_cycle()
        except CycleInProgress:
            raise
        except Exception:
            log.exception("guard cycle failed; service continues")

    # -- long-running modes ---------------------------------------------------

    def stop(self) -> None:
        self._stop.set()

    def run_periodic(self, max_cycles: int | None = None) -> None:
        """Cycle immediately, then on the interval grid, skipping missed ticks."""
        if self.config.mode != "periodic":
            raise ValueError("run_periodic requires mode=periodic")
        start = self.clock.now()
        tick = 0
        cycles = 0
        while not self._stop.is_set():
            self._guarded_cycle()
            cycles += 1
            if max_cycles is not None and cycles >= max_cycles:
                return
            # next tick strictly after the end of the cycle just run
            while start + tick * self.config.interval_seconds <= self.clock.now():
                tick += 1
            self._sleep_until(start + tick * self.config.interval_seconds)

    def run_cpu_triggered(self, max_cycles: int | None = None) -> None:
        """Sample the probe on the interval; fire after the idle streak."""
        if self.config.mode != "cpu_triggered":
            raise ValueError("run_cpu_triggered requires mode=cpu_triggered")
        streak = 0
        cycles = 0
        while not self._stop.is_set():
            value = self.probe()
            streak = streak + 1 if value < self.config.cpu_threshold_percent else 0
            if streak >= self.config.consecutive_idle_samples:
                self._guarded_cycle()
                cycles += 1
                streak = 0
                if max_cycles is not None and cycles >= max_cycles:
                    return
            self._sleep_for(self.config.interval_seconds)

    def _sleep_until(self, deadline: float) -> None:
        while not self._stop.is_set():
            remaining = deadline - self.clock.now()
            if remaining <= 0:
                return
            self.clock.sleep(min(remaining, 0.25))

    def _sleep_for(self, seconds: float) -> None:
        self._sleep_until(self.clock.now() + seconds)
