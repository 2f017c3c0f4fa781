"""Operator command line: JSON results on stdout, progress on stderr.

Exit status: 0 clean/success, 1 corruption found or partial recovery,
2 usage or operational errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from ledgerguard import bench as bench_mod
from ledgerguard.errors import LedgerGuardError
from ledgerguard.guard import GuardConfig, GuardService
from ledgerguard.identity import TrustStore
from ledgerguard.peers import PeerEndpoint, TcpPeerClient, serve
from ledgerguard.recovery import recover
from ledgerguard.store import DEFAULT_MAX_FILE_SIZE, LedgerStore
from ledgerguard.testkit import (
    MODES,
    REGIONS,
    GenParams,
    InjectionRecord,
    generate_ledger,
    inject,
)
from ledgerguard.validator import (
    CHECKPOINT_FILE,
    load_checkpoints,
    make_checkpoints,
    scan,
)

log = logging.getLogger("ledgerguard")

EXIT_CLEAN = 0
EXIT_CORRUPTION = 1
EXIT_ERROR = 2

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}


def _configure_logging() -> None:
    level = _LOG_LEVELS.get(os.environ.get("LEDGERGUARD_LOG", "warn"), logging.WARNING)
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def _parse_peers(spec: str, ledger_id: str) -> list[PeerEndpoint]:
    lid = ledger_id.encode("utf-8")
    return [PeerEndpoint(addr.strip(), lid)
            for addr in spec.split(",") if addr.strip()]


def _emit(doc: dict, report_path: str | None) -> None:
    text = json.dumps(doc, indent=2)
    print(text)
    if report_path:
        Path(report_path).write_text(text + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ledgerguard",
        description="Blockchain ledger integrity guard: detect, recover, benchmark.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="create a synthetic ledger")
    p.add_argument("--blocks", type=int, required=True)
    p.add_argument("--txs-per-block", type=int, default=10)
    p.add_argument("--tx-size", type=int, default=3072)
    p.add_argument("--endorsers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-file-size", type=int, default=DEFAULT_MAX_FILE_SIZE)
    p.add_argument("--out", required=True)
    p.add_argument("--keys", required=True)

    p = sub.add_parser("validate", help="scan a ledger and report findings")
    p.add_argument("--ledger", required=True)
    p.add_argument("--trust", required=True)
    p.add_argument("--use-checkpoints", metavar="DIR")
    p.add_argument("--report", metavar="PATH")

    p = sub.add_parser("checkpoint", help="write whole-file digests for clean files")
    p.add_argument("--ledger", required=True)
    p.add_argument("--trust", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("recover", help="scan, then repair from peers")
    p.add_argument("--ledger", required=True)
    p.add_argument("--trust", required=True)
    p.add_argument("--peers", required=True, help="comma separated host:port list")
    p.add_argument("--ledger-id", default="primary")
    p.add_argument("--timeout", type=float, default=5.0)
    p.add_argument("--report", metavar="PATH")

    p = sub.add_parser("serve", help="serve blocks to other peers")
    p.add_argument("--ledger", required=True)
    p.add_argument("--listen", required=True, help="host:port")
    p.add_argument("--ledger-id", default="primary")

    p = sub.add_parser("corrupt", help="inject a reproducible fault")
    p.add_argument("--ledger", required=True)
    p.add_argument("--block", type=int, required=True)
    p.add_argument("--region", choices=REGIONS, required=True)
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("guard", help="run the guard service")
    p.add_argument("--config", required=True)
    p.add_argument("--ledger", required=True)
    p.add_argument("--trust", required=True)
    p.add_argument("--mode", choices=("periodic", "cpu_triggered", "manual"))
    p.add_argument("--interval", type=float, dest="interval_seconds")
    p.add_argument("--cpu-threshold", type=float, dest="cpu_threshold_percent")
    p.add_argument("--idle-samples", type=int, dest="consecutive_idle_samples")
    p.add_argument("--peers")
    p.add_argument("--ledger-id", dest="ledger_id")
    p.add_argument("--auto-recover", action="store_true", default=None)
    p.add_argument("--checkpoint-dir", dest="checkpoint_dir")
    p.add_argument("--max-cycles", type=int, help="stop after N cycles (testing)")

    p = sub.add_parser("bench", help="measure validation and recovery speed")
    p.add_argument("--ledger", required=True)
    p.add_argument("--trust", required=True)
    p.add_argument("--peers", help="comma separated host:port list")
    p.add_argument("--ledger-id", default="primary")
    p.add_argument("--corrupt", type=int, default=100,
                   help="blocks to corrupt for the recovery benchmark")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--compare-kernels", action="store_true")
    p.add_argument("--report", metavar="PATH")

    return parser


def dispatch(argv: list[str]) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_CLEAN
    handler = {
        "generate": _cmd_generate,
        "validate": _cmd_validate,
        "checkpoint": _cmd_checkpoint,
        "recover": _cmd_recover,
        "serve": _cmd_serve,
        "corrupt": _cmd_corrupt,
        "guard": _cmd_guard,
        "bench": _cmd_bench,
    }[args.command]
    try:
        return handler(args)
    except (LedgerGuardError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def _cmd_generate(args) -> int:
    params = GenParams(
        num_blocks=args.blocks,
        txs_per_block=args.txs_per_block,
        tx_size_bytes=args.tx_size,
        num_endorsers=args.endorsers,
        rng_seed=args.seed,
        max_file_size=args.max_file_size,
    )
    store, _ = generate_ledger(params, args.out, args.keys)
    _emit({
        "blocks": store.height,
        "files": len(store.file_ids()),
        "ledger": str(args.out),
        "keys": str(args.keys),
    }, None)
    store.close()
    return EXIT_CLEAN


def _cmd_validate(args) -> int:
    store = LedgerStore.open(args.ledger)
    trust = TrustStore.load(args.trust)
    checkpoints = load_checkpoints(args.use_checkpoints) if args.use_checkpoints else None
    report = scan(store, trust, checkpoints)
    _emit(report.to_json_dict(), args.report)
    store.close()
    return EXIT_CLEAN if report.clean else EXIT_CORRUPTION


def _cmd_checkpoint(args) -> int:
    store = LedgerStore.open(args.ledger)
    trust = TrustStore.load(args.trust)
    cps = make_checkpoints(store, trust)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cps.save(out / CHECKPOINT_FILE)
    clean = len(cps.entries) == max(len(store.file_ids()) - 1, 0)
    _emit({
        "height": cps.height,
        "entries": len(cps.entries),
        "path": str(out / CHECKPOINT_FILE),
    }, None)
    store.close()
    return EXIT_CLEAN if clean else EXIT_CORRUPTION


def _cmd_recover(args) -> int:
    store = LedgerStore.open(args.ledger)
    trust = TrustStore.load(args.trust)
    peers = _parse_peers(args.peers, args.ledger_id)
    report = scan(store, trust)
    outcome = recover(store, report, peers, trust,
                      client=TcpPeerClient(timeout=args.timeout))
    post_clean = scan(store, trust).clean
    _emit({
        "scan": report.to_json_dict(),
        "recovery": outcome.to_json_dict(),
        "post_scan_clean": post_clean,
    }, args.report)
    store.close()
    return EXIT_CLEAN if post_clean and not outcome.failed else EXIT_CORRUPTION


def _cmd_serve(args) -> int:
    store = LedgerStore.open(args.ledger)
    server = serve(store, args.listen, args.ledger_id.encode("utf-8"))
    log.info("serving %s on %s", args.ledger, server.address)
    print(json.dumps({"listening": server.address}), flush=True)
    try:
        server._thread.join()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
        store.close()
    return EXIT_CLEAN


def _cmd_corrupt(args) -> int:
    record = inject(args.ledger, InjectionRecord(
        block=args.block, region=args.region, mode=args.mode, rng_seed=args.seed))
    print(record.to_json())
    return EXIT_CLEAN


def _cmd_guard(args) -> int:
    config = GuardConfig.load(
        args.config,
        mode=args.mode,
        interval_seconds=args.interval_seconds,
        cpu_threshold_percent=args.cpu_threshold_percent,
        consecutive_idle_samples=args.consecutive_idle_samples,
        peers=tuple(args.peers.split(",")) if args.peers else None,
        ledger_id=args.ledger_id,
        auto_recover=args.auto_recover,
        checkpoint_dir=args.checkpoint_dir,
    )
    store = LedgerStore.open(args.ledger)
    trust = TrustStore.load(args.trust)
    service = GuardService(store, trust, config)
    try:
        if config.mode == "manual":
            report, outcome = service.run_cycle()
            doc = {"scan": report.to_json_dict()}
            if outcome is not None:
                doc["recovery"] = outcome.to_json_dict()
                doc["post_scan_clean"] = scan(store, trust).clean
            _emit(doc, None)
            if report.clean or (outcome is not None and doc.get("post_scan_clean")
                                and not outcome.failed):
                return EXIT_CLEAN
            return EXIT_CORRUPTION
        if config.mode == "periodic":
            service.run_periodic(max_cycles=args.max_cycles)
        else:
            service.run_cpu_triggered(max_cycles=args.max_cycles)
    except KeyboardInterrupt:
        service.stop()
    finally:
        store.close()
    return EXIT_CLEAN


def _cmd_bench(args) -> int:
    trust = TrustStore.load(args.trust)
    doc: dict = {"validation": bench_mod.bench_validation(args.ledger, trust)}
    if args.compare_kernels:
        store = LedgerStore.open(args.ledger)
        doc["kernels"] = bench_mod.bench_kernels(store)
        store.close()
    if args.peers:
        peers = _parse_peers(args.peers, args.ledger_id)
        doc["recovery"] = bench_mod.bench_recovery(
            args.ledger, trust, peers,
            corrupt_blocks=args.corrupt, rng_seed=args.seed,
            client=TcpPeerClient())
    _emit(doc, args.report)
    ok = doc["validation"]["clean"] and doc.get("recovery", {}).get(
        "post_scan_clean", True)
    return EXIT_CLEAN if ok else EXIT_CORRUPTION


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
