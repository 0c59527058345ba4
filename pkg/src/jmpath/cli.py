"""Operator entry points: keygen, send, recv, simulate, analyze.

Exit codes: 0 success, 2 authentication failure, 3 incomplete transfer
or timeout, 64 configuration errors, 1 anything else.
"""

from __future__ import annotations

import argparse
import os
import queue
import secrets
import struct
import sys
import time
from collections import Counter
from typing import List, Optional, Tuple

from . import analysis, simulate
from .core import Packet
from .errors import (
    Incomplete,
    InvalidParams,
    MacMismatch,
    MalformedFrame,
    ProtocolError,
    ReceiveTimeout,
)
from .manifest import ChannelClosed, sync_recv
from .pipeline import Keys, RecvSession, SendSession
from .transport import (
    AdversaryConfig,
    CAPTURED,
    MultipathListener,
    RouteAdversary,
    connect_sync_channel,
    open_routes_socket,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MAC_MISMATCH = 2
EXIT_INCOMPLETE = 3
EXIT_CONFIG = 64

DEFAULT_PACKET_SIZE = 1 << 20

TRANSFER_HEADER = struct.Struct(">IBIQ")
TRANSFER_MAGIC = 0x4A4D5458  # "JMTX"
TRANSFER_VERSION = 0x01


class ConfigError(Exception):
    pass


def parse_endpoint(text: str) -> Tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ConfigError(f"endpoint {text!r} is not host:port")
    try:
        return host, int(port)
    except ValueError:
        raise ConfigError(f"endpoint {text!r} has a non-numeric port") from None


def parse_route_list(text: str) -> List[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok != ""]
    except ValueError:
        raise ConfigError(f"route list {text!r} must be comma-separated integers") from None


def load_keys(path: Optional[str], required: bool = True) -> Optional[Keys]:
    path = path or os.environ.get("JMP_KEY_FILE")
    if path is None:
        if required:
            raise ConfigError("no key file: pass --key-file or set JMP_KEY_FILE")
        return None
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read key file {path}: {exc}") from exc
    if len(blob) != 96:
        raise ConfigError(f"key file {path} must be exactly 96 bytes, got {len(blob)}")
    return Keys.from_bytes(blob)


def chunk_payload(data: bytes, size: int) -> List[bytes]:
    if not data:
        return [b""]
    return [data[i:i + size] for i in range(0, len(data), size)]


def read_input(path: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read input {path}: {exc}") from exc


def adversary_from_args(args, m: int) -> AdversaryConfig:
    captured = set(parse_route_list(args.capture)) if args.capture else set()
    for r in captured:
        if not 0 <= r < m:
            raise ConfigError(f"--capture route {r} outside [0, {m})")
    base = dict(drop_prob=args.drop_prob, corrupt_prob=args.corrupt_prob,
                reorder_window=args.reorder_window)
    per_route = {r: RouteAdversary(captured=True, **base) for r in captured}
    return AdversaryConfig(default=RouteAdversary(**base), per_route=per_route)


# --- subcommands ----------------------------------------------------------

def cmd_keygen(args) -> int:
    with open(args.out, "wb") as fh:
        fh.write(secrets.token_bytes(96))
    try:
        os.chmod(args.out, 0o600)
    except OSError:
        pass
    print(f"wrote 96-byte key file to {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if not 1 <= args.n <= 65535 or not 1 <= args.m <= 255:
        raise ConfigError(f"n must be in [1, 65535] and m in [1, 255]")
    keys = load_keys(args.key_file, required=False)
    keys_derived = keys is None
    if keys is None:
        keys = simulate.derive_sim_keys(args.seed)
    payloads = chunk_payload(read_input(args.infile), args.packet_size)
    adversary = adversary_from_args(args, args.m)

    run = simulate.run_simulated_transfer(payloads, keys, args.n, args.m,
                                          adversary, seed=args.seed)
    print(f"simulate seed={args.seed} n={args.n} m={args.m} "
          f"v={run.outcomes[0].report.v} packets={len(payloads)}")
    for outcome in run.outcomes:
        counts = outcome.event_counts or {}
        print(f"packet {outcome.packet_id}: bytes={len(payloads[outcome.packet_id])} "
              f"frames={outcome.report.total_frames} "
              f"sent={counts.get('sent', 0)} delivered={counts.get('delivered', 0)} "
              f"dropped={counts.get('dropped', 0)} corrupted={counts.get('corrupted', 0)} "
              f"captured={counts.get('captured', 0)}")
        if outcome.failure is None:
            print(f"packet {outcome.packet_id}: payload verified")
        else:
            print(f"packet {outcome.packet_id}: FAILED "
                  f"{type(outcome.failure).__name__}: {outcome.failure}")
    if args.log:
        simulate.save_log(run, args.log, keys_derived=keys_derived)
        print(f"event log written to {args.log}")

    failure = run.failure
    if failure is None:
        payload = run.payload()
        if args.out:
            with open(args.out, "wb") as fh:
                fh.write(payload)
        print(f"transfer: payload verified ({len(payload)} bytes)")
        return EXIT_OK
    if isinstance(failure, MacMismatch):
        print("transfer: FAILED (authentication)")
        return EXIT_MAC_MISMATCH
    print("transfer: FAILED (incomplete)")
    return EXIT_INCOMPLETE


def cmd_analyze(args) -> int:
    rec = simulate.load_log(args.log)
    keys = load_keys(args.key_file, required=False)
    if keys is None and rec.keys_derived_from_seed:
        keys = simulate.derive_sim_keys(rec.seed)
    plaintext_chunks: List[Optional[bytes]] = [None] * len(rec.manifests)
    if args.infile:
        data = read_input(args.infile)
        offset = 0
        for i, mf in enumerate(rec.manifests):
            plaintext_chunks[i] = data[offset:offset + mf.true_len]
            offset += mf.true_len
    if args.capture:
        routes = parse_route_list(args.capture)
    else:
        routes = sorted({ev.route for ev in rec.events if ev.kind == CAPTURED})
    if args.knowledge == "all":
        tiers = list(analysis.Knowledge)
    else:
        tiers = [analysis.Knowledge(args.knowledge)]

    print(analysis.ReconstructionReport.CSV_HEADER)
    for i, mf in enumerate(rec.manifests):
        events = [ev for ev in rec.events
                  if ev.kind == CAPTURED and _frame_packet_id(ev.frame) == mf.packet_id]
        for tier in tiers:
            if tier is analysis.Knowledge.MANIFEST_AND_KEYS and keys is None:
                continue
            cap = analysis.capture(events, routes, tier)
            report = analysis.attempt_reconstruction(
                cap, m=rec.m, manifest=mf, keys=keys,
                plaintext=plaintext_chunks[i])
            print(report.csv_row())
    return EXIT_OK


def _frame_packet_id(frame: bytes) -> Optional[int]:
    if len(frame) < 12:
        return None
    return struct.unpack_from(">Q", frame, 4)[0]


def cmd_send(args) -> int:
    keys = load_keys(args.key_file)
    if not 1 <= args.n <= 65535 or not 1 <= args.m <= 255:
        raise ConfigError("n must be in [1, 65535] and m in [1, 255]")
    if len(args.route) != args.m:
        raise ConfigError(f"need exactly {args.m} --route endpoints, got {len(args.route)}")
    if not args.sync:
        raise ConfigError("--sync host:port is required")
    endpoints = [parse_endpoint(r) for r in args.route]
    sync_host, sync_port = parse_endpoint(args.sync)
    payloads = chunk_payload(read_input(args.infile), args.packet_size)

    sync = connect_sync_channel(sync_host, sync_port, timeout=args.timeout)
    routes = open_routes_socket(args.m, endpoints, timeout=args.timeout)
    try:
        total_len = sum(len(p) for p in payloads)
        sync.send(TRANSFER_HEADER.pack(TRANSFER_MAGIC, TRANSFER_VERSION,
                                       len(payloads), total_len))
        session_id = secrets.token_bytes(16)
        for packet_id, payload in enumerate(payloads):
            sender = SendSession(keys, args.n, args.m, session_id=session_id)
            report = sender.send_packet(
                Packet(packet_id=packet_id, payload=payload), routes, sync)
            print(f"packet {packet_id}: {len(payload)} bytes, "
                  f"{report.total_frames} frames over {args.m} routes")
        routes.close()
        try:
            status = sync.recv(timeout=args.timeout)
        except ChannelClosed:
            print("no completion status from receiver")
            return EXIT_ERROR
        code = status[0] if status else EXIT_ERROR
        print("receiver verified payload" if code == EXIT_OK
              else f"receiver reported failure (code {code})")
        return code
    finally:
        sync.close()
        routes.close()


def cmd_recv(args) -> int:
    keys = load_keys(args.key_file)
    if not args.route:
        raise ConfigError("at least one --route bind endpoint is required")
    if not args.sync:
        raise ConfigError("--sync host:port is required")
    if not args.out:
        raise ConfigError("--out path is required")
    endpoints = [parse_endpoint(r) for r in args.route]
    sync_endpoint = parse_endpoint(args.sync)
    m = len(endpoints)

    listener = MultipathListener(endpoints, sync_endpoint, timeout=args.timeout)
    status = EXIT_OK
    chunks: List[bytes] = []
    try:
        listener.accept_all()
        header = listener.sync.recv(timeout=args.timeout)
        magic, version, packet_count, total_len = TRANSFER_HEADER.unpack(header)
        if magic != TRANSFER_MAGIC or version != TRANSFER_VERSION:
            raise MalformedFrame("bad transfer header")
        print(f"receiving {packet_count} packets, {total_len} bytes total")

        pending = {}
        eof_routes = set()
        for _ in range(packet_count):
            manifest = sync_recv(listener.sync, timeout=args.timeout)
            session = RecvSession(keys)
            session.set_manifest(manifest)
            for frame in pending.pop(manifest.packet_id, []):
                try:
                    session.on_bundle(frame)
                except MalformedFrame:
                    pass
            deadline = time.monotonic() + args.timeout
            while not session.progress().complete:
                if len(eof_routes) == m:
                    break
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                try:
                    route, frame = listener.next_frame(timeout=remaining)
                except queue.Empty:
                    break
                if frame is None:
                    eof_routes.add(route)
                    continue
                if _frame_packet_id(frame) == manifest.packet_id:
                    try:
                        session.on_bundle(frame)
                    except MalformedFrame:
                        pass
                else:
                    pending.setdefault(_frame_packet_id(frame), []).append(frame)
            try:
                packet = session.finalize()
            except MacMismatch:
                print(f"packet {manifest.packet_id}: MAC mismatch, payload withheld")
                status = EXIT_MAC_MISMATCH
                break
            except Incomplete as exc:
                print(f"packet {manifest.packet_id}: incomplete ({exc.missing_count} slices missing)")
                status = EXIT_INCOMPLETE
                break
            chunks.append(packet.payload)
            print(f"packet {manifest.packet_id}: verified ({len(packet.payload)} bytes)")

        if status == EXIT_OK:
            with open(args.out, "wb") as fh:
                fh.write(b"".join(chunks))
            print(f"payload verified, wrote {sum(map(len, chunks))} bytes to {args.out}")
        try:
            listener.sync.send(bytes([status]))
        except ChannelClosed:
            pass
        return status
    except (ChannelClosed, queue.Empty, ReceiveTimeout):
        print("timed out waiting for sender")
        return EXIT_INCOMPLETE
    finally:
        listener.close()


# --- argument wiring ------------------------------------------------------

def _add_common_params(parser, *, needs_nm: bool):
    if needs_nm:
        parser.add_argument("--n", type=int, required=True,
                            help="number of parts per packet")
        parser.add_argument("--m", type=int, required=True,
                            help="number of slices/routes")
    parser.add_argument("--key-file", default=None,
                        help="96-byte key file (fallback: $JMP_KEY_FILE)")
    parser.add_argument("--timeout", type=float, default=30.0,
                        help="receive/connect timeout in seconds")
    parser.add_argument("--packet-size", type=int, default=DEFAULT_PACKET_SIZE,
                        help="bytes per packet when chunking files")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jmpath",
        description="Multipath sliced data transfer: send, receive, "
                    "simulate, and analyze.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="write a fresh 96-byte key file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("send", help="send a file over socket routes")
    _add_common_params(p, needs_nm=True)
    p.add_argument("--route", action="append", default=[],
                   help="route endpoint host:port (repeat m times)")
    p.add_argument("--sync", default=None, help="sync channel host:port")
    p.add_argument("--in", dest="infile", required=True)
    p.set_defaults(func=cmd_send)

    p = sub.add_parser("recv", help="receive a file over socket routes")
    _add_common_params(p, needs_nm=False)
    p.add_argument("--route", action="append", default=[],
                   help="route bind endpoint host:port (repeat per route)")
    p.add_argument("--sync", default=None, help="sync bind endpoint host:port")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_recv)

    p = sub.add_parser("simulate", help="in-process transfer through the simulator")
    _add_common_params(p, needs_nm=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--drop-prob", type=float, default=0.0)
    p.add_argument("--corrupt-prob", type=float, default=0.0)
    p.add_argument("--reorder-window", type=int, default=0)
    p.add_argument("--capture", default=None,
                   help="comma-separated routes to eavesdrop")
    p.add_argument("--log", default=None, help="write a JSON event log")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="reconstruction analysis of a recorded log")
    _add_common_params(p, needs_nm=False)
    p.add_argument("--log", required=True)
    p.add_argument("--in", dest="infile", default=None,
                   help="original plaintext, for scoring")
    p.add_argument("--capture", default=None,
                   help="route subset to analyze (default: all captured)")
    p.add_argument("--knowledge", default="all",
                   choices=["no_keys", "manifest_only", "manifest_and_keys", "all"])
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidParams as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MacMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MAC_MISMATCH
    except (Incomplete, ReceiveTimeout) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMPLETE
    except ProtocolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
