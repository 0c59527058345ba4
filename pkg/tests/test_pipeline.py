import hashlib
import hmac
import os
import random
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jmpath.core import Packet, derive_chain, fragment, transform_parts
from jmpath.errors import Incomplete, InvalidParams, MacMismatch
from jmpath.manifest import InMemorySyncChannel, sync_recv
from jmpath.pipeline import (
    Keys,
    RecvSession,
    RecvState,
    SendSession,
    SendState,
    compute_mac,
)
from jmpath.transport import DELIVERED, open_routes_sim

NONCE = b"\x33" * 16
SESSION_ID = b"\x44" * 16


def run_send(keys, payload, n, m, seed=0, packet_id=0):
    routes = open_routes_sim(m, seed=seed)
    sender_sync, receiver_sync = InMemorySyncChannel.pair()
    sender = SendSession(keys, n, m, session_id=SESSION_ID)
    report = sender.send_packet(Packet(packet_id=packet_id, payload=payload),
                                routes, sender_sync, nonce=NONCE)
    manifest = sync_recv(receiver_sync, timeout=1)
    frames = [ev.frame for ev in routes.drain_events() if ev.kind == DELIVERED]
    return report, manifest, frames


def run_recv(keys, manifest, frames, order=None):
    session = RecvSession(keys)
    session.set_manifest(manifest)
    if order is not None:
        frames = [frames[i] for i in order]
    for frame in frames:
        session.on_bundle(frame)
    return session.finalize()


class TestSendPacket:
    def test_frame_counts_n4_m2(self, keys):
        # n=4, m=2 -> v=2, ceil(4/2)=2 bundles per route
        report, manifest, frames = run_send(keys, bytes(range(8)), 4, 2)
        assert report.v == 2
        assert report.frames_per_route == [2, 2]
        assert len(frames) == 4
        assert manifest.true_len == 8

    def test_empty_payload_manifest_only(self, keys):
        report, manifest, frames = run_send(keys, b"", 3, 2)
        assert frames == []
        assert report.frames_per_route == [0, 0]
        assert len(manifest.tag_map) == 6
        packet = run_recv(keys, manifest, [])
        assert packet.payload == b""

    def test_degenerate_single_route_single_part(self, keys):
        payload = b"degenerate"
        _, manifest, frames = run_send(keys, payload, 1, 1)
        assert run_recv(keys, manifest, frames).payload == payload

    def test_state_progression_and_one_shot(self, keys):
        routes = open_routes_sim(2, seed=0)
        sync, _ = InMemorySyncChannel.pair()
        sender = SendSession(keys, 2, 2)
        assert sender.state is SendState.FRESH
        sender.send_packet(Packet(packet_id=0, payload=b"x"), routes, sync)
        assert sender.state is SendState.DISPATCHED
        with pytest.raises(InvalidParams):
            sender.send_packet(Packet(packet_id=1, payload=b"y"), routes, sync)

    def test_slices_stay_on_their_route(self, keys):
        from jmpath.slicing import decode_frame
        _, manifest, frames = run_send(keys, os.urandom(300), 5, 3)
        for frame in frames:
            bundle = decode_frame(frame)
            for s in bundle.slices:
                assert manifest.tag_map[s.tag][1] == bundle.route


class TestComputeMac:
    def _tparts(self, keys, payload, n=2, m=2):
        parts = fragment(Packet(packet_id=0, payload=payload), n, m)
        return transform_parts(parts, derive_chain(keys.master_key, NONCE, n))

    def test_deterministic(self, keys):
        tp = self._tparts(keys, b"hello")
        a = compute_mac(keys.mac_key, SESSION_ID, 0, 2, 2, 5, NONCE, tp)
        b = compute_mac(keys.mac_key, SESSION_ID, 0, 2, 2, 5, NONCE, tp)
        assert a == b
        assert len(a) == 32

    def test_independent_hmac_oracle(self, keys):
        tp = self._tparts(keys, b"oracle-check")
        got = compute_mac(keys.mac_key, SESSION_ID, 9, 2, 2, 12, NONCE, tp)
        msg = (SESSION_ID + struct.pack(">QHBI", 9, 2, 2, 12) + NONCE
               + b"".join(t.data for t in tp))
        assert got == hmac.new(keys.mac_key, msg, hashlib.sha256).digest()

    def test_avalanche_over_random_flips(self, keys):
        payload = os.urandom(256)
        base_tp = self._tparts(keys, payload)
        base = compute_mac(keys.mac_key, SESSION_ID, 0, 2, 2, 256, NONCE, base_tp)
        rng = random.Random(1)
        for _ in range(1000):
            flipped = bytearray(payload)
            bit = rng.randrange(len(payload) * 8)
            flipped[bit // 8] ^= 1 << (bit % 8)
            tp = self._tparts(keys, bytes(flipped))
            assert compute_mac(keys.mac_key, SESSION_ID, 0, 2, 2, 256,
                               NONCE, tp) != base


class TestOnBundle:
    def test_progress_over_random_interleavings(self, keys):
        _, manifest, frames = run_send(keys, os.urandom(1000), 6, 3)
        rng = random.Random(5)
        for _ in range(10):
            order = list(range(len(frames)))
            rng.shuffle(order)
            session = RecvSession(keys)
            session.set_manifest(manifest)
            for i in order:
                progress = session.on_bundle(frames[i])
            assert progress.received == progress.expected == 18

    def test_duplicate_frame_idempotent(self, keys):
        _, manifest, frames = run_send(keys, b"idempotent", 2, 2)
        session = RecvSession(keys)
        session.set_manifest(manifest)
        first = session.on_bundle(frames[0])
        again = session.on_bundle(frames[0])
        assert again.received == first.received
        assert again.corrupt_frames == 0

    def test_unknown_tag_flags_corrupt_after_sync(self, keys):
        from jmpath.slicing import Bundle, Slice, encode_frame
        _, manifest, frames = run_send(keys, b"stray tags", 2, 2)
        session = RecvSession(keys)
        session.set_manifest(manifest)
        stray = encode_frame(Bundle(route=0, packet_id=0, slices=(
            Slice(tag=b"\xee" * 8, part_index=0, slice_index=0, data=b"zz"),)))
        progress = session.on_bundle(stray)
        assert progress.corrupt_frames == 1
        # session still completes
        for frame in frames:
            session.on_bundle(frame)
        assert session.progress().complete

    def test_frames_before_manifest_quarantined(self, keys):
        _, manifest, frames = run_send(keys, os.urandom(100), 3, 2)
        session = RecvSession(keys)
        for frame in frames:
            session.on_bundle(frame)
        assert session.progress().expected == -1
        session.set_manifest(manifest)
        assert session.progress().complete
        assert session.finalize().payload is not None


class TestFinalize:
    @given(seed=st.integers(0, 10**6))
    @settings(max_examples=25, deadline=None)
    def test_roundtrip_random_order(self, seed):
        keys = Keys(master_key=b"\xa1" * 32, shuffle_key=b"\xb2" * 32,
                    mac_key=b"\xc3" * 32)
        rng = random.Random(seed)
        payload = os.urandom(rng.randint(0, 4096))
        n, m = rng.randint(1, 16), rng.randint(1, 8)
        _, manifest, frames = run_send(keys, payload, n, m, seed=seed)
        order = list(range(len(frames)))
        rng.shuffle(order)
        assert run_recv(keys, manifest, frames, order).payload == payload

    def test_large_payload_roundtrip(self, keys):
        payload = os.urandom(1 << 20)
        _, manifest, frames = run_send(keys, payload, 8, 4)
        assert run_recv(keys, manifest, frames).payload == payload

    def test_missing_route_incomplete(self, keys):
        from jmpath.slicing import decode_frame
        _, manifest, frames = run_send(keys, os.urandom(500), 5, 3)
        kept = [f for f in frames if decode_frame(f).route != 1]
        session = RecvSession(keys)
        session.set_manifest(manifest)
        for frame in kept:
            session.on_bundle(frame)
        with pytest.raises(Incomplete) as exc:
            session.finalize()
        assert exc.value.missing_count == 5  # one slice per part

    def test_single_bit_flip_always_caught(self, keys):
        payload = os.urandom(64)
        _, manifest, frames = run_send(keys, payload, 2, 2)
        for fi, frame in enumerate(frames):
            for offset in _slice_data_offsets(frame):
                for bit in range(8):
                    tampered = bytearray(frame)
                    tampered[offset] ^= 1 << bit
                    mutated = list(frames)
                    mutated[fi] = bytes(tampered)
                    with pytest.raises(MacMismatch):
                        run_recv(keys, manifest, mutated)

    def test_no_payload_on_mac_failure(self, keys):
        _, manifest, frames = run_send(keys, b"secret secret", 2, 2)
        tampered = bytearray(frames[0])
        tampered[-1] ^= 0x01
        session = RecvSession(keys)
        session.set_manifest(manifest)
        session.on_bundle(bytes(tampered))
        for frame in frames[1:]:
            session.on_bundle(frame)
        with pytest.raises(MacMismatch):
            session.finalize()
        assert session.state is RecvState.FAILED
        with pytest.raises(InvalidParams):
            session.on_bundle(frames[0])

    def test_wrong_keys_mac_mismatch(self, keys):
        _, manifest, frames = run_send(keys, b"some payload", 2, 2)
        other = Keys.from_bytes(bytes(96))
        with pytest.raises(MacMismatch):
            run_recv(other, manifest, frames)


def _slice_data_offsets(frame):
    """Offsets of slice payload bytes within a bundle frame."""
    offsets = []
    (count,) = struct.unpack_from(">B", frame, 12)
    offset = 13
    for _ in range(count):
        (dlen,) = struct.unpack_from(">I", frame, offset + 8)
        offset += 12
        offsets.extend(range(offset, offset + dlen))
        offset += dlen
    return offsets


class TestKeys:
    def test_from_bytes_round_trip(self):
        blob = os.urandom(96)
        assert Keys.from_bytes(blob).to_bytes() == blob

    def test_wrong_length_rejected(self):
        with pytest.raises(InvalidParams):
            Keys.from_bytes(os.urandom(95))

    def test_generate_distinct(self):
        assert Keys.generate().to_bytes() != Keys.generate().to_bytes()
