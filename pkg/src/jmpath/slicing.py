"""Slicing transformed parts, opaque wire tags, and per-route bundling.

A transformed part at shuffled position p is cut into M contiguous
slices; slice j travels only on route j.  On the wire a slice is just
(tag, bytes) -- the (part, slice) coordinates live in the manifest.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

from .core import TransformedPart, keystream_blocks, prf, seeded_shuffle
from .errors import (
    DuplicateSlice,
    InvalidParams,
    LengthMismatch,
    MalformedFrame,
    MissingSlice,
    NotDivisible,
)

TAG_LEN = 8

FRAME_MAGIC = 0x4A4D  # "JM"
FRAME_VERSION = 0x01


@dataclass(frozen=True)
class Slice:
    """One of M pieces of a transformed part.

    part_index is the shuffled position, known only to the endpoints;
    it is never serialized next to the data.
    """

    tag: bytes
    part_index: int
    slice_index: int
    data: bytes


@dataclass(frozen=True)
class Bundle:
    """A group of up to v same-route slices dispatched as one frame."""

    route: int
    packet_id: int
    slices: Tuple[Slice, ...]


def smallest_factor(m: int) -> int:
    """Smallest divisor of m greater than 1; degenerate m=1 gives 1."""
    if m < 1:
        raise InvalidParams("m must be at least 1")
    if m == 1:
        return 1
    d = 2
    while d * d <= m:
        if m % d == 0:
            return d
        d += 1
    return m


class TagAssigner:
    """Issues unique 8-byte wire tags from a keyed keystream.

    Tags carry no positional structure; duplicates within a session are
    skipped and the next keystream chunk drawn instead.  Not thread-safe;
    serialize per session.
    """

    def __init__(self, shuffle_key: bytes, nonce: bytes):
        self._blocks = keystream_blocks(prf(shuffle_key, nonce + b"\x02"))
        self._buf = b""
        self._issued = set()

    def next_tag(self) -> bytes:
        while True:
            if len(self._buf) < TAG_LEN:
                self._buf += next(self._blocks)
            tag, self._buf = self._buf[:TAG_LEN], self._buf[TAG_LEN:]
            if tag not in self._issued:
                self._issued.add(tag)
                return tag


def slice_part(tpart: TransformedPart, position: int, m: int,
               tags: TagAssigner) -> List[Slice]:
    """Cut a transformed part at shuffled position into m tagged slices."""
    if m < 1:
        raise InvalidParams("m must be at least 1")
    if len(tpart.data) % m != 0:
        raise NotDivisible(
            f"part length {len(tpart.data)} not divisible by {m}"
        )
    step = len(tpart.data) // m
    return [
        Slice(
            tag=tags.next_tag(),
            part_index=position,
            slice_index=j,
            data=tpart.data[j * step:(j + 1) * step],
        )
        for j in range(m)
    ]


def assemble_part(slices: Iterable[Slice], m: int, seq: int = 0) -> TransformedPart:
    """Rebuild a transformed part from its m slices, any arrival order."""
    by_index: Dict[int, Slice] = {}
    for s in slices:
        if s.slice_index in by_index:
            raise DuplicateSlice(s.slice_index)
        by_index[s.slice_index] = s
    missing = set(range(m)) - set(by_index)
    if missing:
        raise MissingSlice(missing)
    lengths = {len(s.data) for s in by_index.values()}
    if len(lengths) > 1:
        raise LengthMismatch(f"unequal slice lengths: {sorted(lengths)}")
    return TransformedPart(seq=seq, data=b"".join(by_index[j].data for j in range(m)))


def bundle_route(route_slices: Sequence[Slice], v: int, bundle_seed: bytes,
                 packet_id: int = 0) -> List[Bundle]:
    """Shuffle one route's slices by seed, then chunk into bundles of <= v."""
    if v < 1:
        raise InvalidParams("v must be at least 1")
    routes = {s.slice_index for s in route_slices}
    if len(routes) > 1:
        raise InvalidParams(f"slices span routes {sorted(routes)}")
    route = routes.pop() if routes else 0
    shuffled = seeded_shuffle(route_slices, bundle_seed)
    return [
        Bundle(route=route, packet_id=packet_id,
               slices=tuple(shuffled[i:i + v]))
        for i in range(0, len(shuffled), v)
    ]


def unbundle(bundle: Bundle) -> List[Slice]:
    """Extract a bundle's slices; identity rides on the tags alone."""
    if not bundle.slices:
        raise MalformedFrame("bundle carries no slices")
    return list(bundle.slices)


def encode_frame(bundle: Bundle) -> bytes:
    """Serialize a bundle to the big-endian wire frame."""
    if not bundle.slices:
        raise MalformedFrame("refusing to encode an empty bundle")
    if len(bundle.slices) > 255:
        raise MalformedFrame("bundle exceeds 255 slices")
    out = [struct.pack(">HBBQB", FRAME_MAGIC, FRAME_VERSION,
                       bundle.route, bundle.packet_id, len(bundle.slices))]
    for s in bundle.slices:
        if len(s.tag) != TAG_LEN:
            raise MalformedFrame(f"tag must be {TAG_LEN} bytes")
        out.append(s.tag)
        out.append(struct.pack(">I", len(s.data)))
        out.append(s.data)
    return b"".join(out)


def decode_frame(frame: bytes) -> Bundle:
    """Parse a wire frame back into a Bundle.

    Positional indices are unknowable from the wire, so decoded slices
    carry part_index = -1 and slice_index = route.
    """
    header = struct.Struct(">HBBQB")
    if len(frame) < header.size:
        raise MalformedFrame("frame shorter than header")
    magic, version, route, packet_id, count = header.unpack_from(frame, 0)
    if magic != FRAME_MAGIC:
        raise MalformedFrame(f"bad magic 0x{magic:04x}")
    if version != FRAME_VERSION:
        raise MalformedFrame(f"unsupported frame version 0x{version:02x}")
    if count == 0:
        raise MalformedFrame("bundle carries no slices")
    offset = header.size
    slices = []
    for _ in range(count):
        if offset + TAG_LEN + 4 > len(frame):
            raise MalformedFrame("truncated slice header")
        tag = frame[offset:offset + TAG_LEN]
        offset += TAG_LEN
        (dlen,) = struct.unpack_from(">I", frame, offset)
        offset += 4
        if offset + dlen > len(frame):
            raise MalformedFrame("truncated slice data")
        data = frame[offset:offset + dlen]
        offset += dlen
        slices.append(Slice(tag=tag, part_index=-1, slice_index=route, data=data))
    if offset != len(frame):
        raise MalformedFrame(f"{len(frame) - offset} trailing bytes")
    return Bundle(route=route, packet_id=packet_id, slices=tuple(slices))
