"""One-process A -> B transfers through the deterministic simulator,
plus the recorded-log file format the analyze command replays.

Everything here is derived from (payload, keys, params, seed) alone, so a
fixed seed reproduces the identical event log and report on any machine.
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import List, Optional

from .core import Packet
from .errors import MalformedFrame, ProtocolError
from .manifest import (
    InMemorySyncChannel,
    SessionManifest,
    decode_manifest,
    encode_manifest,
    sync_recv,
)
from .pipeline import DispatchReport, Keys, RecvSession, SendSession
from .transport import (
    AdversaryConfig,
    CORRUPTED,
    DELIVERED,
    RouteEvent,
    open_routes_sim,
)

LOG_VERSION = 1


def derive_sim_keys(seed: int) -> Keys:
    """Deterministic throwaway keys for keyless simulator runs."""
    blob = b"".join(
        hashlib.sha256(b"jmpath.sim.keys" + struct.pack(">QI", seed & (2**64 - 1), i)).digest()
        for i in range(3)
    )
    return Keys.from_bytes(blob)


def derive_sim_nonce(seed: int, packet_id: int) -> bytes:
    return hashlib.sha256(
        b"jmpath.sim.nonce" + struct.pack(">QQ", seed & (2**64 - 1), packet_id)
    ).digest()[:16]


def derive_sim_session_id(seed: int) -> bytes:
    return hashlib.sha256(
        b"jmpath.sim.session" + struct.pack(">Q", seed & (2**64 - 1))
    ).digest()[:16]


@dataclass
class PacketOutcome:
    packet_id: int
    report: DispatchReport
    manifest: SessionManifest
    payload: Optional[bytes] = None
    failure: Optional[ProtocolError] = None
    event_counts: Optional[dict] = None


@dataclass
class SimulationRun:
    m: int
    seed: int
    outcomes: List[PacketOutcome] = field(default_factory=list)
    events: List[RouteEvent] = field(default_factory=list)

    @property
    def failure(self) -> Optional[ProtocolError]:
        for outcome in self.outcomes:
            if outcome.failure is not None:
                return outcome.failure
        return None

    def payload(self) -> bytes:
        return b"".join(o.payload or b"" for o in self.outcomes)

    def log_bytes(self) -> bytes:
        return b"\n".join(ev.encode() for ev in self.events)


def run_simulated_transfer(payloads: List[bytes], keys: Keys, n: int, m: int,
                           adversary: Optional[AdversaryConfig] = None,
                           seed: int = 0) -> SimulationRun:
    """Send each payload as one packet through the simulator and run the
    receiver over the drained events.  Per-packet failures are recorded,
    not raised, so a tampered run still yields its full event log."""
    run = SimulationRun(m=m, seed=seed)
    session_id = derive_sim_session_id(seed)
    for packet_id, payload in enumerate(payloads):
        routes = open_routes_sim(m, adversary, seed + packet_id)
        sender_sync, receiver_sync = InMemorySyncChannel.pair()
        sender = SendSession(keys, n, m, session_id=session_id)
        report = sender.send_packet(
            Packet(packet_id=packet_id, payload=payload), routes,
            sender_sync, nonce=derive_sim_nonce(seed, packet_id))

        receiver = RecvSession(keys)
        outcome = PacketOutcome(packet_id=packet_id, report=report,
                                manifest=report.manifest)
        delivered = routes.drain_events()
        try:
            # feed data first: exercises the manifest/frame race every run
            for ev in delivered:
                if ev.kind in (DELIVERED, CORRUPTED):
                    try:
                        receiver.on_bundle(ev.frame)
                    except MalformedFrame:
                        pass
            receiver.set_manifest(sync_recv(receiver_sync))
            packet = receiver.finalize()
            outcome.payload = packet.payload
        except ProtocolError as exc:
            outcome.failure = exc
        outcome.event_counts = dict(Counter(ev.kind for ev in routes.events))
        run.outcomes.append(outcome)
        run.events.extend(routes.events)
    return run


def save_log(run: SimulationRun, path, *, keys_derived: bool) -> None:
    """Record a run as JSON for later adversary analysis."""
    doc = {
        "version": LOG_VERSION,
        "m": run.m,
        "seed": run.seed,
        "keys_derived_from_seed": keys_derived,
        "packets": [
            {
                "packet_id": o.packet_id,
                "manifest": encode_manifest(o.manifest).hex(),
                "true_len": o.manifest.true_len,
            }
            for o in run.outcomes
        ],
        "events": [
            [ev.kind, ev.route, ev.virtual_time, ev.frame.hex()]
            for ev in run.events
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


@dataclass
class RecordedRun:
    m: int
    seed: int
    keys_derived_from_seed: bool
    manifests: List[SessionManifest]
    events: List[RouteEvent]


def load_log(path) -> RecordedRun:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != LOG_VERSION:
        raise ProtocolError(f"unsupported log version {doc.get('version')!r}")
    return RecordedRun(
        m=doc["m"],
        seed=doc["seed"],
        keys_derived_from_seed=doc["keys_derived_from_seed"],
        manifests=[decode_manifest(bytes.fromhex(p["manifest"]))
                   for p in doc["packets"]],
        events=[RouteEvent(kind, route, vtime, bytes.fromhex(frame))
                for kind, route, vtime, frame in doc["events"]],
    )
