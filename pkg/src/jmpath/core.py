"""Fragmentation, keystream transform chain, and keyed shuffling.

All functions here are pure: outputs depend only on arguments, values are
immutable after construction, and nothing touches I/O.  Crypto primitives
are fixed by the wire contract: PRF = HMAC-SHA256, H = SHA-256, keystream
blocks = SHA-256(seed || counter32_be).
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass
from typing import Iterator, List, Sequence, TypeVar

from .errors import (
    ChainLengthMismatch,
    DuplicatePart,
    InvalidParams,
    LengthMismatch,
    MissingPart,
)

MAX_PAYLOAD_LEN = 2**32 - 1
MAX_PARTS = 65535
MAX_SLICES = 255

KEY_LEN = 32
NONCE_LEN = 16

T = TypeVar("T")


def prf(key: bytes, message: bytes) -> bytes:
    """HMAC-SHA256, the protocol's single pseudo-random function."""
    return hmac.new(key, message, hashlib.sha256).digest()


def keystream(seed: bytes, length: int) -> bytes:
    """First `length` bytes of SHA-256(seed || ctr) for ctr = 0, 1, 2, ...

    The counter is a 4-byte big-endian integer, so the stream is
    bit-exact regardless of platform or language.
    """
    if length < 0:
        raise InvalidParams("keystream length must be non-negative")
    blocks = []
    produced = 0
    ctr = 0
    while produced < length:
        blocks.append(hashlib.sha256(seed + struct.pack(">I", ctr)).digest())
        produced += 32
        ctr += 1
    return b"".join(blocks)[:length]


def keystream_blocks(seed: bytes) -> Iterator[bytes]:
    """Unbounded generator of 32-byte keystream blocks for `seed`."""
    ctr = 0
    while True:
        yield hashlib.sha256(seed + struct.pack(">I", ctr)).digest()
        ctr += 1


@dataclass(frozen=True)
class Packet:
    """The plaintext unit to transfer."""

    packet_id: int
    payload: bytes

    def __post_init__(self):
        if not 0 <= self.packet_id < 2**64:
            raise InvalidParams("packet_id must fit in 64 bits")
        if len(self.payload) > MAX_PAYLOAD_LEN:
            raise InvalidParams("payload exceeds the 32-bit length cap")


@dataclass(frozen=True)
class Part:
    """One of N equal-length fragments; seq is its original position."""

    seq: int
    data: bytes


@dataclass(frozen=True)
class TransformedPart:
    """A fragment XORed with its chain keystream; seq is preserved."""

    seq: int
    data: bytes


@dataclass(frozen=True)
class ChainState:
    """The evolving per-part seed chain R_1..R_N under a master key."""

    master_key: bytes
    nonce: bytes
    r_values: tuple

    def __len__(self):
        return len(self.r_values)


@dataclass(frozen=True)
class Permutation:
    """A bijection on [0, n) with its precomputed functional inverse."""

    forward: tuple
    inverse: tuple

    def __post_init__(self):
        n = len(self.forward)
        if len(self.inverse) != n:
            raise LengthMismatch("forward/inverse length mismatch")
        if sorted(self.forward) != list(range(n)) or sorted(self.inverse) != list(range(n)):
            raise InvalidParams("permutation arrays must be bijections on [0, n)")
        for i, f in enumerate(self.forward):
            if self.inverse[f] != i:
                raise InvalidParams("inverse is not the functional inverse of forward")

    def __len__(self):
        return len(self.forward)


def part_length(payload_len: int, n: int, m: int) -> int:
    """Padded per-part length: m * ceil(ceil(L/n) / m) bytes."""
    per_part = -(-payload_len // n)
    return m * -(-per_part // m)


def fragment(packet: Packet, n: int, m: int) -> List[Part]:
    """Split a packet into n zero-padded parts of identical length.

    Every part length is a multiple of m so downstream slicing divides
    evenly; padding vanishes under the keystream XOR before it ever
    reaches a wire.
    """
    if not 1 <= n <= MAX_PARTS:
        raise InvalidParams(f"n must be in [1, {MAX_PARTS}], got {n}")
    if not 1 <= m <= MAX_SLICES:
        raise InvalidParams(f"m must be in [1, {MAX_SLICES}], got {m}")
    if len(packet.payload) > MAX_PAYLOAD_LEN:
        raise InvalidParams("payload exceeds the 32-bit length cap")
    plen = part_length(len(packet.payload), n, m)
    padded = packet.payload.ljust(n * plen, b"\x00")
    return [Part(seq=i, data=padded[i * plen:(i + 1) * plen]) for i in range(n)]


def defragment(parts: Sequence[Part], true_len: int) -> bytes:
    """Reassemble parts by seq and strip padding down to true_len."""
    n = len(parts)
    by_seq = {}
    for p in parts:
        if p.seq in by_seq:
            raise DuplicatePart(p.seq)
        by_seq[p.seq] = p.data
    missing = set(range(n)) - set(by_seq)
    if missing:
        raise MissingPart(missing)
    total = sum(len(d) for d in by_seq.values())
    if true_len > total:
        raise LengthMismatch(f"true_len {true_len} exceeds assembled {total} bytes")
    return b"".join(by_seq[i] for i in range(n))[:true_len]


def derive_chain(master_key: bytes, nonce: bytes, n: int) -> ChainState:
    """Derive the chain R_1 = PRF(key, nonce || 0x00), R_{i+1} = PRF(key, R_i)."""
    if len(master_key) != KEY_LEN:
        raise InvalidParams("master_key must be 32 bytes")
    if len(nonce) != NONCE_LEN:
        raise InvalidParams("nonce must be 16 bytes")
    if n < 1:
        raise InvalidParams("n must be at least 1")
    r_values = [prf(master_key, nonce + b"\x00")]
    for _ in range(n - 1):
        r_values.append(prf(master_key, r_values[-1]))
    return ChainState(master_key=master_key, nonce=nonce, r_values=tuple(r_values))


def transform_parts(parts: Sequence[Part], chain: ChainState) -> List[TransformedPart]:
    """XOR part i with keystream(R_{i+1}); an involution under one chain.

    Accepts TransformedPart inputs too, which is how the receiver runs
    the inverse direction.
    """
    if len(parts) != len(chain):
        raise ChainLengthMismatch(
            f"{len(parts)} parts vs chain of {len(chain)}"
        )
    out = []
    for part, seed in zip(parts, chain.r_values):
        ks = keystream(seed, len(part.data))
        out.append(TransformedPart(
            seq=part.seq,
            data=bytes(a ^ b for a, b in zip(part.data, ks)),
        ))
    return out


def untransform_parts(tparts: Sequence[TransformedPart], chain: ChainState) -> List[Part]:
    """Inverse of transform_parts (the same XOR, retyped as plain parts)."""
    return [Part(seq=t.seq, data=t.data) for t in transform_parts(tparts, chain)]


class _KeystreamWords:
    """Draws 4-byte big-endian words from an unbounded keystream."""

    def __init__(self, seed: bytes):
        self._blocks = keystream_blocks(seed)
        self._buf = b""
        self._pos = 0

    def next_word(self) -> int:
        if self._pos + 4 > len(self._buf):
            self._buf = self._buf[self._pos:] + next(self._blocks)
            self._pos = 0
        word = struct.unpack_from(">I", self._buf, self._pos)[0]
        self._pos += 4
        return word

    def uniform(self, bound: int) -> int:
        """Unbiased draw from [0, bound) by rejection sampling."""
        limit = (2**32 // bound) * bound
        while True:
            w = self.next_word()
            if w < limit:
                return w % bound


def seeded_shuffle(items: Sequence[T], seed: bytes) -> List[T]:
    """Fisher-Yates shuffle driven by the keystream of `seed`.

    Swaps run from the last index down; each draw is rejection-sampled
    so the permutation is unbiased and identical across platforms.
    """
    out = list(items)
    words = _KeystreamWords(seed)
    for i in range(len(out) - 1, 0, -1):
        j = words.uniform(i + 1)
        out[i], out[j] = out[j], out[i]
    return out


def make_shuffle(shuffle_key: bytes, nonce: bytes, n: int) -> Permutation:
    """Keyed permutation of [0, n); inverse is the synced decryption key."""
    if len(shuffle_key) != KEY_LEN:
        raise InvalidParams("shuffle_key must be 32 bytes")
    if len(nonce) != NONCE_LEN:
        raise InvalidParams("nonce must be 16 bytes")
    if n < 1:
        raise InvalidParams("n must be at least 1")
    seed = prf(shuffle_key, nonce + b"\x01")
    inverse = seeded_shuffle(range(n), seed)
    forward = [0] * n
    for pos, original in enumerate(inverse):
        forward[original] = pos
    return Permutation(forward=tuple(forward), inverse=tuple(inverse))


def apply_permutation(items: Sequence[T], perm: Sequence[int]) -> List[T]:
    """Place items[i] at output position perm[i]."""
    if len(items) != len(perm):
        raise LengthMismatch(f"{len(items)} items vs permutation of {len(perm)}")
    out: List[T] = [None] * len(items)  # type: ignore[list-item]
    for item, pos in zip(items, perm):
        out[pos] = item
    return out
