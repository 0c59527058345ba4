"""Sender and receiver state machines tying the layers together.

Sender: fragment -> chain transform -> keyed shuffle -> MAC -> slice ->
tag -> bundle -> dispatch, with the manifest pushed over the sync channel.
Receiver: unbundle -> store by tag -> assemble -> unshuffle -> verify MAC
-> inverse transform -> defragment.  The MAC is checked after the
unshuffle and before the keystream inversion; no plaintext is ever
produced on a failed check.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import secrets
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from . import core
from .core import (
    ChainState,
    Packet,
    TransformedPart,
    apply_permutation,
    derive_chain,
    fragment,
    defragment,
    make_shuffle,
    part_length,
    prf,
    transform_parts,
)
from .errors import Incomplete, InvalidParams, MacMismatch, MalformedFrame
from .manifest import (
    PART_HASH_LEN,
    SessionManifest,
    SyncChannel,
    build_manifest,
    sync_send,
)
from .slicing import (
    Slice,
    TagAssigner,
    bundle_route,
    decode_frame,
    encode_frame,
    slice_part,
    smallest_factor,
    unbundle,
)


@dataclass(frozen=True)
class Keys:
    """The three session secrets, provisioned out of band."""

    master_key: bytes
    shuffle_key: bytes
    mac_key: bytes

    def __post_init__(self):
        for name in ("master_key", "shuffle_key", "mac_key"):
            if len(getattr(self, name)) != core.KEY_LEN:
                raise InvalidParams(f"{name} must be {core.KEY_LEN} bytes")

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Keys":
        if len(blob) != 3 * core.KEY_LEN:
            raise InvalidParams(f"key material must be {3 * core.KEY_LEN} bytes, got {len(blob)}")
        return cls(blob[0:32], blob[32:64], blob[64:96])

    def to_bytes(self) -> bytes:
        return self.master_key + self.shuffle_key + self.mac_key

    @classmethod
    def generate(cls) -> "Keys":
        return cls.from_bytes(secrets.token_bytes(3 * core.KEY_LEN))


class SendState(enum.Enum):
    FRESH = "fresh"
    FRAGMENTED = "fragmented"
    TRANSFORMED = "transformed"
    SHUFFLED = "shuffled"
    SLICED = "sliced"
    DISPATCHED = "dispatched"


class RecvState(enum.Enum):
    AWAITING_DATA = "awaiting_data"
    ASSEMBLING = "assembling"
    VERIFIED = "verified"
    COMPLETE = "complete"
    FAILED = "failed"


@dataclass
class DispatchReport:
    packet_id: int
    n: int
    m: int
    v: int
    part_len: int
    frames_per_route: List[int]
    manifest: SessionManifest

    @property
    def total_frames(self) -> int:
        return sum(self.frames_per_route)


def compute_mac(mac_key: bytes, session_id: bytes, packet_id: int, n: int,
                m: int, true_len: int, nonce: bytes,
                tparts: Sequence[TransformedPart]) -> bytes:
    """HMAC-SHA256 over the header fields and the transformed parts in
    original seq order; binds n, m, and true_len against manifest tampering."""
    mac = hmac.new(mac_key, digestmod=hashlib.sha256)
    mac.update(session_id)
    mac.update(struct.pack(">QHBI", packet_id, n, m, true_len))
    mac.update(nonce)
    for tp in tparts:
        mac.update(tp.data)
    return mac.digest()


def part_hashes(parts: Sequence[core.Part]) -> List[bytes]:
    """Truncated content hashes of the original parts (diagnostics only)."""
    return [hashlib.sha256(p.data).digest()[:PART_HASH_LEN] for p in parts]


class SendSession:
    """One packet's sender-side walk through the protocol stages."""

    def __init__(self, keys: Keys, n: int, m: int,
                 session_id: Optional[bytes] = None):
        if not 1 <= n <= core.MAX_PARTS:
            raise InvalidParams(f"n out of range: {n}")
        if not 1 <= m <= core.MAX_SLICES:
            raise InvalidParams(f"m out of range: {m}")
        self.keys = keys
        self.n = n
        self.m = m
        self.session_id = session_id if session_id is not None else secrets.token_bytes(16)
        self.state = SendState.FRESH

    def send_packet(self, packet: Packet, routes, sync: SyncChannel,
                    nonce: Optional[bytes] = None) -> DispatchReport:
        if self.state is not SendState.FRESH:
            raise InvalidParams("session already used; sessions are one-shot")
        n, m = self.n, self.m
        keys = self.keys
        nonce = nonce if nonce is not None else secrets.token_bytes(16)
        true_len = len(packet.payload)

        parts = fragment(packet, n, m)
        self.state = SendState.FRAGMENTED

        chain = derive_chain(keys.master_key, nonce, n)
        tparts = transform_parts(parts, chain)
        self.state = SendState.TRANSFORMED

        perm = make_shuffle(keys.shuffle_key, nonce, n)
        mac = compute_mac(keys.mac_key, self.session_id, packet.packet_id,
                          n, m, true_len, nonce, tparts)
        shuffled = apply_permutation(tparts, perm.forward)
        self.state = SendState.SHUFFLED

        tags = TagAssigner(keys.shuffle_key, nonce)
        slices: List[Slice] = []
        for position, tp in enumerate(shuffled):
            slices.extend(slice_part(tp, position, m, tags))
        self.state = SendState.SLICED

        manifest = build_manifest(
            session_id=self.session_id, packet_id=packet.packet_id,
            n=n, m=m, true_len=true_len, nonce=nonce,
            w2_inverse=perm.inverse,
            part_hash_list=part_hashes(parts),
            tag_map={s.tag: (s.part_index, s.slice_index) for s in slices},
            mac=mac,
        )
        sync_send(sync, manifest)

        v = manifest.v
        part_len = part_length(true_len, n, m)
        frames_per_route = [0] * m
        if part_len > 0:
            for route in range(m):
                route_slices = [s for s in slices if s.slice_index == route]
                seed = prf(keys.shuffle_key, nonce + b"\x03" + bytes([route]))
                for bundle in bundle_route(route_slices, v, seed,
                                           packet_id=packet.packet_id):
                    routes.send_frame(route, encode_frame(bundle))
                    frames_per_route[route] += 1
        self.state = SendState.DISPATCHED
        return DispatchReport(packet_id=packet.packet_id, n=n, m=m, v=v,
                              part_len=part_len,
                              frames_per_route=frames_per_route,
                              manifest=manifest)


@dataclass
class Progress:
    received: int
    expected: int
    corrupt_frames: int

    @property
    def complete(self) -> bool:
        return self.received >= self.expected


class RecvSession:
    """Receiver-side reassembly for one packet.

    Frames may arrive before the manifest; unknown tags sit in quarantine
    until the manifest resolves or condemns them.  finalize releases the
    payload only after every expected tag is present and the MAC checks.
    """

    def __init__(self, keys: Keys):
        self.keys = keys
        self.manifest: Optional[SessionManifest] = None
        self.state = RecvState.AWAITING_DATA
        self.corrupt_frames = 0
        self._store: Dict[bytes, bytes] = {}
        self._quarantine: Dict[bytes, bytes] = {}

    def set_manifest(self, manifest: SessionManifest) -> None:
        self.manifest = manifest
        if self.state is RecvState.AWAITING_DATA:
            self.state = RecvState.ASSEMBLING
        for tag, data in self._quarantine.items():
            self._admit(tag, data)
        self._quarantine.clear()

    def _expected(self) -> int:
        if self.manifest is None:
            return -1
        mf = self.manifest
        if part_length(mf.true_len, mf.n, mf.m) == 0:
            return 0
        return mf.n * mf.m

    def _admit(self, tag: bytes, data: bytes) -> None:
        if self.manifest is not None and tag not in self.manifest.tag_map:
            self.corrupt_frames += 1
            return
        known = self._store.get(tag)
        if known is not None:
            if known != data:
                self.corrupt_frames += 1
            return
        self._store[tag] = data

    def on_bundle(self, frame: bytes) -> Progress:
        if self.state in (RecvState.COMPLETE, RecvState.FAILED):
            raise InvalidParams(f"session already {self.state.value}")
        bundle = decode_frame(frame)
        if (self.manifest is not None
                and bundle.packet_id != self.manifest.packet_id):
            self.corrupt_frames += 1
            return self.progress()
        for s in unbundle(bundle):
            if self.manifest is None:
                if s.tag in self._quarantine and self._quarantine[s.tag] != s.data:
                    self.corrupt_frames += 1
                else:
                    self._quarantine[s.tag] = s.data
            else:
                self._admit(s.tag, s.data)
        return self.progress()

    def progress(self) -> Progress:
        return Progress(received=len(self._store), expected=self._expected(),
                        corrupt_frames=self.corrupt_frames)

    def finalize(self) -> Packet:
        if self.manifest is None:
            raise Incomplete(-1)
        mf = self.manifest
        expected = self._expected()
        if len(self._store) < expected:
            raise Incomplete(expected - len(self._store))

        # step viii: gather each shuffled position's slices via the tag map
        from .slicing import assemble_part  # local to avoid cycle at import
        by_position: Dict[int, List[Slice]] = {p: [] for p in range(mf.n)}
        if expected > 0:
            for tag, (position, slice_index) in mf.tag_map.items():
                by_position[position].append(
                    Slice(tag=tag, part_index=position,
                          slice_index=slice_index, data=self._store[tag]))
            shuffled = [assemble_part(by_position[p], mf.m, seq=p)
                        for p in range(mf.n)]
        else:
            shuffled = [TransformedPart(seq=p, data=b"") for p in range(mf.n)]

        # step ix: undo the shuffle with the synced inverse (w2)
        ordered = apply_permutation(shuffled, mf.w2_inverse)
        tparts = [TransformedPart(seq=i, data=tp.data)
                  for i, tp in enumerate(ordered)]

        # step x: authenticate before any keystream inversion
        mac = compute_mac(self.keys.mac_key, mf.session_id, mf.packet_id,
                          mf.n, mf.m, mf.true_len, mf.nonce, tparts)
        if not hmac.compare_digest(mac, mf.mac):
            self.state = RecvState.FAILED
            raise MacMismatch("authentication failed; payload withheld")
        self.state = RecvState.VERIFIED

        # steps xi-xii: invert the keystream and strip padding by seq
        chain = derive_chain(self.keys.master_key, mf.nonce, mf.n)
        parts = core.untransform_parts(tparts, chain)
        payload = defragment(parts, mf.true_len)
        self.state = RecvState.COMPLETE
        return Packet(packet_id=mf.packet_id, payload=payload)
