"""Session manifests and the out-of-band sync channel.

The manifest is the single coalesced sync message per packet: it carries
the inverse shuffle (w2), the tag-to-position map (w3), slice/bundle
parameters, true length, chain nonce, and the MAC.  The channel that
carries it is assumed reliable, ordered, and authentic; realizations are
pluggable (in-memory queue pair, file, or length-prefixed stream).
"""

from __future__ import annotations

import queue
import struct
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

from .errors import (
    ChannelClosed,
    InconsistentInputs,
    MalformedManifest,
    UnsupportedVersion,
)
from .slicing import TAG_LEN, smallest_factor

MANIFEST_MAGIC = 0x4A4D4D46  # "JMMF"
MANIFEST_VERSION = 0x01
MANIFEST_FILE_EXT = ".jmm"

PART_HASH_LEN = 8
MAC_LEN = 32


@dataclass(frozen=True)
class SessionManifest:
    session_id: bytes
    packet_id: int
    n: int
    m: int
    v: int
    true_len: int
    nonce: bytes
    w2_inverse: Tuple[int, ...]
    part_hash_list: Tuple[bytes, ...]
    tag_map: Dict[bytes, Tuple[int, int]] = field(compare=True)
    mac: bytes = b""

    def expected_tags(self) -> int:
        return len(self.tag_map)


def build_manifest(*, session_id: bytes, packet_id: int, n: int, m: int,
                   true_len: int, nonce: bytes,
                   w2_inverse: Sequence[int],
                   part_hash_list: Sequence[bytes],
                   tag_map: Dict[bytes, Tuple[int, int]],
                   mac: bytes) -> SessionManifest:
    """Validate mutually dependent fields and assemble a manifest."""
    if len(session_id) != 16:
        raise InconsistentInputs("session_id", "must be 16 bytes")
    if not 1 <= n <= 65535:
        raise InconsistentInputs("n", f"out of range: {n}")
    if not 1 <= m <= 255:
        raise InconsistentInputs("m", f"out of range: {m}")
    if not 0 <= true_len < 2**32:
        raise InconsistentInputs("true_len", f"out of range: {true_len}")
    if len(nonce) != 16:
        raise InconsistentInputs("nonce", "must be 16 bytes")
    if len(w2_inverse) != n or sorted(w2_inverse) != list(range(n)):
        raise InconsistentInputs("w2_inverse", f"not a permutation of [0, {n})")
    if len(part_hash_list) != n or any(len(h) != PART_HASH_LEN for h in part_hash_list):
        raise InconsistentInputs("part_hash_list", f"need {n} hashes of {PART_HASH_LEN} bytes")
    if len(tag_map) != n * m:
        raise InconsistentInputs("tag_map", f"need {n * m} entries, got {len(tag_map)}")
    positions = set(tag_map.values())
    if positions != {(p, s) for p in range(n) for s in range(m)}:
        raise InconsistentInputs("tag_map", "entries are not bijective onto [0,n) x [0,m)")
    if any(len(t) != TAG_LEN for t in tag_map):
        raise InconsistentInputs("tag_map", f"tags must be {TAG_LEN} bytes")
    if len(mac) != MAC_LEN:
        raise InconsistentInputs("mac", f"must be {MAC_LEN} bytes")
    return SessionManifest(
        session_id=session_id, packet_id=packet_id, n=n, m=m,
        v=smallest_factor(m), true_len=true_len, nonce=nonce,
        w2_inverse=tuple(w2_inverse),
        part_hash_list=tuple(part_hash_list),
        tag_map=dict(tag_map), mac=mac,
    )


def encode_manifest(manifest: SessionManifest) -> bytes:
    """Canonical big-endian encoding; tag_map entries sorted by tag."""
    out = [struct.pack(">IB", MANIFEST_MAGIC, MANIFEST_VERSION)]
    out.append(manifest.session_id)
    out.append(struct.pack(">QHBBI", manifest.packet_id, manifest.n,
                           manifest.m, manifest.v, manifest.true_len))
    out.append(manifest.nonce)
    out.append(struct.pack(f">{manifest.n}H", *manifest.w2_inverse))
    out.extend(manifest.part_hash_list)
    out.append(struct.pack(">I", len(manifest.tag_map)))
    for tag in sorted(manifest.tag_map):
        part_index, slice_index = manifest.tag_map[tag]
        out.append(tag)
        out.append(struct.pack(">HB", part_index, slice_index))
    out.append(manifest.mac)
    return b"".join(out)


def decode_manifest(buf: bytes) -> SessionManifest:
    """Parse and validate an encoded manifest; rejects, never repairs."""
    offset = 0

    def take(size: int, what: str) -> bytes:
        nonlocal offset
        if offset + size > len(buf):
            raise MalformedManifest(offset, f"truncated {what}")
        chunk = buf[offset:offset + size]
        offset += size
        return chunk

    magic, version = struct.unpack(">IB", take(5, "header"))
    if magic != MANIFEST_MAGIC:
        raise MalformedManifest(0, f"bad magic 0x{magic:08x}")
    if version != MANIFEST_VERSION:
        raise UnsupportedVersion(version)
    session_id = take(16, "session_id")
    packet_id, n, m, v, true_len = struct.unpack(">QHBBI", take(16, "params"))
    nonce = take(16, "nonce")
    if n < 1:
        raise MalformedManifest(offset, "n must be at least 1")
    w2_inverse = struct.unpack(f">{n}H", take(2 * n, "w2_inverse"))
    part_hash_list = tuple(take(PART_HASH_LEN, "part hash") for _ in range(n))
    (count,) = struct.unpack(">I", take(4, "tag_map count"))
    tag_map = {}
    for _ in range(count):
        tag = take(TAG_LEN, "tag")
        part_index, slice_index = struct.unpack(">HB", take(3, "tag position"))
        if tag in tag_map:
            raise MalformedManifest(offset, f"duplicate tag {tag.hex()}")
        tag_map[tag] = (part_index, slice_index)
    mac = take(MAC_LEN, "mac")
    if offset != len(buf):
        raise MalformedManifest(offset, f"{len(buf) - offset} trailing bytes")
    try:
        manifest = build_manifest(
            session_id=session_id, packet_id=packet_id, n=n, m=m,
            true_len=true_len, nonce=nonce, w2_inverse=w2_inverse,
            part_hash_list=part_hash_list, tag_map=tag_map, mac=mac,
        )
    except InconsistentInputs as exc:
        raise MalformedManifest(offset, str(exc)) from exc
    if manifest.v != v:
        raise MalformedManifest(offset, f"v field {v} contradicts m {m}")
    return manifest


class SyncChannel:
    """Ordered, reliable, authenticated duplex message conduit."""

    def send(self, message: bytes) -> None:
        raise NotImplementedError

    def recv(self, timeout: Optional[float] = None) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


class InMemorySyncChannel(SyncChannel):
    """Queue-backed channel endpoint; create both ends with pair()."""

    _CLOSE = object()

    def __init__(self, inbox: "queue.Queue", outbox: "queue.Queue"):
        self._inbox = inbox
        self._outbox = outbox
        self._closed = False

    @classmethod
    def pair(cls) -> Tuple["InMemorySyncChannel", "InMemorySyncChannel"]:
        a_to_b: "queue.Queue" = queue.Queue()
        b_to_a: "queue.Queue" = queue.Queue()
        return cls(b_to_a, a_to_b), cls(a_to_b, b_to_a)

    def send(self, message: bytes) -> None:
        if self._closed:
            raise ChannelClosed("channel is closed")
        self._outbox.put(message)

    def recv(self, timeout: Optional[float] = None) -> bytes:
        if self._closed:
            raise ChannelClosed("channel is closed")
        try:
            message = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise ChannelClosed("recv timed out") from None
        if message is self._CLOSE:
            self._closed = True
            raise ChannelClosed("peer closed the channel")
        return message

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._outbox.put(self._CLOSE)


def sync_send(channel: SyncChannel, manifest: SessionManifest) -> None:
    channel.send(encode_manifest(manifest))


def sync_recv(channel: SyncChannel, timeout: Optional[float] = None) -> SessionManifest:
    return decode_manifest(channel.recv(timeout=timeout))


def save_manifest(manifest: SessionManifest, path) -> None:
    """Write one manifest per file (.jmm)."""
    with open(path, "wb") as fh:
        fh.write(encode_manifest(manifest))


def load_manifest(path) -> SessionManifest:
    with open(path, "rb") as fh:
        return decode_manifest(fh.read())
