"""Command-line interface.

Exit codes: 0 success, 1 usage or I/O error, 2 VerifyFailed, 3 RootNotFound,
4 MalformedProof, 5 ConfigInvalid, 6 transaction reverted.
Commands that fail print a one-line JSON object ``{"status": ..., "reason": ...}``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from biot import contract as C
from biot.anchoring import InclusionProof, OffchainStore, anchored_root, build_tree, leaf_hash, prove_inclusion, verify_inclusion
from biot.contract import DeviceId
from biot.errors import BIoTError, ConfigInvalid, LedgerCorrupt, MalformedProof
from biot.harness.report import FORMATS, emit_report
from biot.harness.scenario import RunResult, ScenarioConfig, run_scenario
from biot.ledger import Address, LatencyModel, Ledger, read_blocks, replay, TxStatus

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VERIFY_FAILED = 2
EXIT_ROOT_NOT_FOUND = 3
EXIT_MALFORMED_PROOF = 4
EXIT_CONFIG_INVALID = 5
EXIT_REVERTED = 6


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


def _fail(status: str, reason: str, code: int) -> int:
    _emit({"status": status, "reason": reason})
    return code


def _device(text: str) -> DeviceId:
    try:
        return DeviceId.from_hex(text)
    except ValueError:
        return DeviceId.from_label(text)


def _settle_and_save(ledger: Ledger, path: Path, receipts) -> int:
    ledger.run_until_settled()
    ledger.save(path)
    out = [{"function": r.tx.function, "status": r.status.value, "gas_used": r.gas_used,
            "block": r.block_index, "error": r.tx.error} for r in receipts]
    _emit({"status": "ok", "ledger": str(path), "head": ledger.head.digest.hex(), "transactions": out})
    return EXIT_REVERTED if any(r.status is TxStatus.REVERTED for r in receipts) else EXIT_OK


def cmd_deploy(args) -> int:
    path = Path(args.ledger)
    if path.exists() and not args.force:
        return _fail("error", f"{path} exists (use --force to overwrite)", EXIT_ERROR)
    ledger = Ledger(latency=LatencyModel(args.block_interval))
    admin = ledger.create_account(args.admin)
    receipt = ledger.submit_call(admin, C.call_deploy(), ledger.head.timestamp)
    return _settle_and_save(ledger, path, [receipt])


def cmd_register(args) -> int:
    path = Path(args.ledger)
    ledger = replay(read_blocks(path), latency=LatencyModel(args.block_interval))
    sender = ledger.create_account(args.sender)
    now = ledger.head.timestamp
    receipts = []
    gateway = Address.from_label(args.gateway)
    if not args.device_only:
        receipts.append(ledger.submit_call(sender, C.call_register_gateway(gateway), now))
    for dev in args.device or []:
        receipts.append(ledger.submit_call(sender, C.call_register_device(_device(dev), gateway), now))
    if not receipts:
        return _fail("error", "nothing to register", EXIT_ERROR)
    return _settle_and_save(ledger, path, receipts)


def cmd_run_scenario(args) -> int:
    config = ScenarioConfig.load(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    store = out / "offchain.tsv"
    if store.exists():
        store.unlink()
    result = run_scenario(config, store_path=store)
    result.save(out)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    for fmt, name in (("table", "report.txt"), ("json", "report.json"), ("csv", "latencies.csv")):
        (out / name).write_text(emit_report(result, fmt))
    _emit({"status": "ok", "run_dir": str(out), "head": result.blocks[-1].digest.hex(),
           "complete": result.complete})
    return EXIT_OK


def cmd_report(args) -> int:
    result = RunResult.load(args.run)
    sys.stdout.write(emit_report(result, args.format))
    return EXIT_OK


def cmd_export_proof(args) -> int:
    run = Path(args.run)
    store = OffchainStore(run / "offchain.tsv")
    device = _device(args.device)
    rec = store.get(device, args.sequence)
    if rec is None or rec.window_id is None:
        return _fail("error", "record not found or not in a closed window", EXIT_ERROR)
    members = sorted((r for r in store.records(device) if r.window_id == rec.window_id),
                     key=lambda r: r.leaf_index)
    tree = build_tree(leaf_hash(r.payload) for r in members)
    proof = prove_inclusion(tree, rec.leaf_index, rec.window_id, device)
    Path(args.proof).write_text(proof.to_json())
    Path(args.payload).write_bytes(rec.payload)
    _emit({"status": "ok", "window_id": rec.window_id, "leaf_index": rec.leaf_index,
           "root": tree.root.hex()})
    return EXIT_OK


def cmd_verify_proof(args) -> int:
    try:
        proof = InclusionProof.from_json(Path(args.proof).read_text())
    except MalformedProof as exc:
        return _fail("MalformedProof", str(exc), EXIT_MALFORMED_PROOF)
    if proof.device_id is None:
        return _fail("MalformedProof", "proof has no device_id", EXIT_MALFORMED_PROOF)
    payload = Path(args.payload).read_bytes()
    root = anchored_root(read_blocks(args.ledger), proof.device_id, proof.window_id)
    if root is None:
        return _fail("RootNotFound", f"window {proof.window_id} of device {proof.device_id.hex()} "
                                     "is not anchored", EXIT_ROOT_NOT_FOUND)
    if not verify_inclusion(root, payload, proof):
        return _fail("VerifyFailed", "payload and proof do not reproduce the anchored root",
                     EXIT_VERIFY_FAILED)
    _emit({"status": "ok", "root": root.hex(), "window_id": proof.window_id})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="biot", description="Blockchain-IoT gateway simulator")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("deploy", help="create a ledger file and deploy the contract")
    d.add_argument("--ledger", required=True)
    d.add_argument("--admin", default="admin", help="account label of the deployer")
    d.add_argument("--block-interval", type=float, default=15)
    d.add_argument("--force", action="store_true")
    d.set_defaults(func=cmd_deploy)

    r = sub.add_parser("register", help="register a gateway and/or devices")
    r.add_argument("--ledger", required=True)
    r.add_argument("--gateway", required=True, help="gateway account label")
    r.add_argument("--device", action="append", help="device label or 32-hex-digit id (repeatable)")
    r.add_argument("--device-only", action="store_true", help="skip registerGateway")
    r.add_argument("--as", dest="sender", default="admin", help="sender account label")
    r.add_argument("--block-interval", type=float, default=15)
    r.set_defaults(func=cmd_register)

    s = sub.add_parser("run-scenario", help="run a scenario and write a run directory")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_run_scenario)

    rp = sub.add_parser("report", help="render the report of a run directory")
    rp.add_argument("--run", required=True)
    rp.add_argument("--format", choices=FORMATS, default="table")
    rp.set_defaults(func=cmd_report)

    e = sub.add_parser("export-proof", help="export an inclusion proof for an off-chain record")
    e.add_argument("--run", required=True)
    e.add_argument("--device", required=True)
    e.add_argument("--sequence", type=int, required=True)
    e.add_argument("--proof", required=True)
    e.add_argument("--payload", required=True)
    e.set_defaults(func=cmd_export_proof)

    v = sub.add_parser("verify-proof", help="check a payload against an anchored window root")
    v.add_argument("--ledger", required=True)
    v.add_argument("--payload", required=True)
    v.add_argument("--proof", required=True)
    v.set_defaults(func=cmd_verify_proof)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        return _fail("ConfigInvalid", str(exc), EXIT_CONFIG_INVALID)
    except LedgerCorrupt as exc:
        return _fail("LedgerCorrupt", str(exc), EXIT_ERROR)
    except (BIoTError, OSError) as exc:
        return _fail(getattr(exc, "code", type(exc).__name__), str(exc), EXIT_ERROR)


if __name__ == "__main__":
    sys.exit(main())
