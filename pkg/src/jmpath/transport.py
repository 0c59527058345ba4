"""M logical routes over two backends: a deterministic simulator with
adversary controls, and real TCP connections.

A route is an abstract ordered lossy channel.  The simulator is fully
deterministic: same seed, config, and send trace produce a byte-identical
event log.  Each route draws from its own RNG so adversary settings on
one route can never perturb another (failure isolation).
"""

from __future__ import annotations

import hashlib
import random
import socket
import struct
import threading
import queue
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import (
    ConnectFailed,
    HandshakeMismatch,
    InvalidConfig,
    RouteClosed,
)
from .manifest import SyncChannel, ChannelClosed

HANDSHAKE = struct.Struct(">HBB")
HANDSHAKE_MAGIC = 0x4A4D
HANDSHAKE_VERSION = 0x01
SYNC_ROUTE_ID = 0xFF

SENT = "sent"
DELIVERED = "delivered"
DROPPED = "dropped"
CORRUPTED = "corrupted"
CAPTURED = "captured"


@dataclass(frozen=True)
class RouteAdversary:
    """Adversary knobs for a single route."""

    drop_prob: float = 0.0
    reorder_window: int = 0
    corrupt_prob: float = 0.0
    captured: bool = False

    def validate(self):
        if not 0.0 <= self.drop_prob <= 1.0:
            raise InvalidConfig(f"drop_prob {self.drop_prob} outside [0, 1]")
        if not 0.0 <= self.corrupt_prob <= 1.0:
            raise InvalidConfig(f"corrupt_prob {self.corrupt_prob} outside [0, 1]")
        if self.reorder_window < 0:
            raise InvalidConfig("reorder_window must be >= 0")


@dataclass(frozen=True)
class AdversaryConfig:
    """Per-route adversary settings with a shared default."""

    default: RouteAdversary = field(default_factory=RouteAdversary)
    per_route: Dict[int, RouteAdversary] = field(default_factory=dict)

    def for_route(self, route: int) -> RouteAdversary:
        return self.per_route.get(route, self.default)

    def validate(self, m: int):
        self.default.validate()
        for route, adv in self.per_route.items():
            if not 0 <= route < m:
                raise InvalidConfig(f"per_route entry {route} outside [0, {m})")
            adv.validate()


@dataclass(frozen=True)
class RouteEvent:
    kind: str
    route: int
    virtual_time: int
    frame: bytes

    def encode(self) -> bytes:
        """Stable byte form, used for log-equality checks."""
        head = f"{self.kind}:{self.route}:{self.virtual_time}:".encode()
        return head + self.frame.hex().encode()


def _route_rng(seed: int, route: int) -> random.Random:
    digest = hashlib.sha256(struct.pack(">QH", seed & (2**64 - 1), route)).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


class SimulatedRouteSet:
    """Deterministic in-process multipath channel A -> B.

    Virtual time is an integer tick, one per send.  Delivery order is
    send order perturbed by at most reorder_window positions per route.
    Single-threaded by contract.
    """

    def __init__(self, m: int, adversary: Optional[AdversaryConfig] = None,
                 seed: int = 0):
        if m < 1:
            raise InvalidConfig("m must be at least 1")
        adversary = adversary or AdversaryConfig()
        adversary.validate(m)
        self.m = m
        self.adversary = adversary
        self.seed = seed
        self._rngs = [_route_rng(seed, r) for r in range(m)]
        self._tick = 0
        self._closed = [False] * m
        # (delivery_key, tick, kind, route, frame) for in-flight frames
        self._in_flight: List[Tuple[int, int, str, int, bytes]] = []
        self.events: List[RouteEvent] = []

    def send_frame(self, route: int, frame: bytes) -> None:
        if not 0 <= route < self.m:
            raise InvalidConfig(f"route {route} outside [0, {self.m})")
        if self._closed[route]:
            raise RouteClosed(route)
        adv = self.adversary.for_route(route)
        rng = self._rngs[route]
        tick = self._tick
        self._tick += 1
        self.events.append(RouteEvent(SENT, route, tick, frame))
        if adv.captured:
            self.events.append(RouteEvent(CAPTURED, route, tick, frame))
        if rng.random() < adv.drop_prob:
            self.events.append(RouteEvent(DROPPED, route, tick, frame))
            return
        kind = DELIVERED
        if rng.random() < adv.corrupt_prob:
            flipped = self._flip_bits(frame, rng)
            if flipped != frame:
                frame = flipped
                kind = CORRUPTED
        displacement = rng.randint(0, adv.reorder_window) if adv.reorder_window else 0
        self._in_flight.append((tick + displacement, tick, kind, route, frame))

    @staticmethod
    def _slice_data_ranges(frame: bytes) -> List[Tuple[int, int]]:
        """Byte ranges of the slice payloads inside a bundle frame.
        Corruption targets data only, so framing and tags survive."""
        ranges = []
        try:
            (count,) = struct.unpack_from(">B", frame, 12)
            offset = 13
            for _ in range(count):
                (dlen,) = struct.unpack_from(">I", frame, offset + 8)
                offset += 12
                if offset + dlen > len(frame):
                    return []
                if dlen:
                    ranges.append((offset, offset + dlen))
                offset += dlen
        except struct.error:
            return []
        return ranges

    @classmethod
    def _flip_bits(cls, frame: bytes, rng: random.Random) -> bytes:
        ranges = cls._slice_data_ranges(frame)
        total_bits = sum(8 * (hi - lo) for lo, hi in ranges)
        if not total_bits:
            return frame
        buf = bytearray(frame)
        for _ in range(1 + rng.randrange(8)):
            bit = rng.randrange(total_bits)
            for lo, hi in ranges:
                span = 8 * (hi - lo)
                if bit < span:
                    buf[lo + bit // 8] ^= 1 << (bit % 8)
                    break
                bit -= span
        return bytes(buf)

    def close(self, route: Optional[int] = None) -> None:
        if route is None:
            self._closed = [True] * self.m
        else:
            self._closed[route] = True

    def drain_events(self) -> List[RouteEvent]:
        """Flush in-flight frames; returns receiver-side events in
        virtual-time order and appends them to the full log."""
        self._in_flight.sort(key=lambda item: (item[0], item[1]))
        drained = [RouteEvent(kind, route, key, frame)
                   for key, _tick, kind, route, frame in self._in_flight]
        self._in_flight = []
        self.events.extend(drained)
        return drained

    def log_bytes(self) -> bytes:
        """Canonical encoding of the full event log (determinism checks)."""
        return b"\n".join(ev.encode() for ev in self.events)


def open_routes_sim(m: int, adversary: Optional[AdversaryConfig] = None,
                    seed: int = 0) -> SimulatedRouteSet:
    return SimulatedRouteSet(m, adversary, seed)


# --- socket backend -------------------------------------------------------

def _send_handshake(sock: socket.socket, route: int) -> None:
    sock.sendall(HANDSHAKE.pack(HANDSHAKE_MAGIC, HANDSHAKE_VERSION, route))


def _recv_exact(sock: socket.socket, size: int) -> bytes:
    chunks = []
    remaining = size
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise ConnectionError("peer closed the connection")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def _expect_handshake(sock: socket.socket) -> int:
    magic, version, route = HANDSHAKE.unpack(_recv_exact(sock, HANDSHAKE.size))
    if magic != HANDSHAKE_MAGIC or version != HANDSHAKE_VERSION:
        raise HandshakeMismatch(
            f"got magic 0x{magic:04x} version 0x{version:02x}"
        )
    return route


def write_frame(sock: socket.socket, frame: bytes) -> None:
    sock.sendall(struct.pack(">I", len(frame)) + frame)


def read_frame(sock: socket.socket) -> bytes:
    (length,) = struct.unpack(">I", _recv_exact(sock, 4))
    return _recv_exact(sock, length)


class SocketRouteSet:
    """Sender side of M independent TCP routes."""

    def __init__(self, sockets: Sequence[socket.socket]):
        self._sockets = list(sockets)
        self.m = len(sockets)
        self._open = [True] * self.m

    def send_frame(self, route: int, frame: bytes) -> None:
        if not 0 <= route < self.m or not self._open[route]:
            raise RouteClosed(route)
        write_frame(self._sockets[route], frame)

    def close(self, route: Optional[int] = None) -> None:
        targets = range(self.m) if route is None else [route]
        for r in targets:
            if self._open[r]:
                self._open[r] = False
                try:
                    self._sockets[r].shutdown(socket.SHUT_WR)
                except OSError:
                    pass
                self._sockets[r].close()


def open_routes_socket(m: int, endpoints: Sequence[Tuple[str, int]],
                       timeout: float = 10.0) -> SocketRouteSet:
    """Connect M route sockets; connection r is route r for its lifetime."""
    if len(endpoints) != m:
        raise InvalidConfig(f"need {m} endpoints, got {len(endpoints)}")
    sockets = []
    try:
        for route, (host, port) in enumerate(endpoints):
            try:
                sock = socket.create_connection((host, port), timeout=timeout)
            except OSError as exc:
                raise ConnectFailed(route, str(exc)) from exc
            sock.settimeout(timeout)
            _send_handshake(sock, route)
            sockets.append(sock)
    except Exception:
        for sock in sockets:
            sock.close()
        raise
    return SocketRouteSet(sockets)


class SocketSyncChannel(SyncChannel):
    """Length-prefixed duplex messages over one TCP connection."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._closed = False

    def send(self, message: bytes) -> None:
        if self._closed:
            raise ChannelClosed("sync channel closed")
        write_frame(self._sock, message)

    def recv(self, timeout: Optional[float] = None) -> bytes:
        if self._closed:
            raise ChannelClosed("sync channel closed")
        self._sock.settimeout(timeout)
        try:
            return read_frame(self._sock)
        except (ConnectionError, socket.timeout, OSError) as exc:
            raise ChannelClosed(str(exc)) from exc

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._sock.close()


def connect_sync_channel(host: str, port: int,
                         timeout: float = 10.0) -> SocketSyncChannel:
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise ConnectFailed(SYNC_ROUTE_ID, str(exc)) from exc
    sock.settimeout(timeout)
    _send_handshake(sock, SYNC_ROUTE_ID)
    return SocketSyncChannel(sock)


class MultipathListener:
    """Receiver side: accepts M route connections plus the sync channel
    and funnels incoming frames into one consumer queue."""

    def __init__(self, route_endpoints: Sequence[Tuple[str, int]],
                 sync_endpoint: Tuple[str, int], timeout: float = 30.0):
        self.m = len(route_endpoints)
        self.timeout = timeout
        self._route_listeners = [self._listen(ep) for ep in route_endpoints]
        self._sync_listener = self._listen(sync_endpoint)
        self._frames: "queue.Queue" = queue.Queue()
        self._threads: List[threading.Thread] = []
        self._route_socks: List[socket.socket] = []
        self.sync: Optional[SocketSyncChannel] = None

    @staticmethod
    def _listen(endpoint: Tuple[str, int]) -> socket.socket:
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind(endpoint)
        sock.listen(1)
        return sock

    def bound_ports(self) -> List[int]:
        return [sock.getsockname()[1] for sock in self._route_listeners]

    def sync_port(self) -> int:
        return self._sync_listener.getsockname()[1]

    def accept_all(self) -> None:
        """Accept the sync connection and all route connections, then
        start one reader thread per route."""
        self._sync_listener.settimeout(self.timeout)
        conn, _ = self._sync_listener.accept()
        conn.settimeout(self.timeout)
        if _expect_handshake(conn) != SYNC_ROUTE_ID:
            raise HandshakeMismatch("expected the sync connection first")
        self.sync = SocketSyncChannel(conn)

        pending = {}
        for listener in self._route_listeners:
            listener.settimeout(self.timeout)
            conn, _ = listener.accept()
            conn.settimeout(self.timeout)
            route = _expect_handshake(conn)
            if not 0 <= route < self.m or route in pending:
                raise HandshakeMismatch(f"unexpected route id {route}")
            pending[route] = conn
        self._route_socks = [pending[r] for r in range(self.m)]
        for route, conn in enumerate(self._route_socks):
            t = threading.Thread(target=self._reader, args=(route, conn),
                                 daemon=True)
            t.start()
            self._threads.append(t)

    def _reader(self, route: int, conn: socket.socket) -> None:
        try:
            while True:
                self._frames.put((route, read_frame(conn)))
        except (ConnectionError, socket.timeout, OSError):
            pass
        finally:
            self._frames.put((route, None))  # route EOF marker

    def next_frame(self, timeout: Optional[float] = None):
        """Blocking read of (route, frame); frame None marks route EOF.
        Raises queue.Empty on timeout."""
        return self._frames.get(timeout=timeout)

    def close(self) -> None:
        for sock in self._route_listeners + [self._sync_listener]:
            sock.close()
        for sock in self._route_socks:
            sock.close()
        if self.sync is not None:
            self.sync.close()
