"""Reconstruction experiments against captured route subsets.

Turns the protocol's qualitative "an eavesdropper learns nothing usable"
claim into numbers: how many transformed parts a given attacker tier can
assemble, how many plaintext bytes it provably recovers, and how long a
byte run of the plaintext appears verbatim in its capture.

Ground truth (plaintext, keys) is used strictly for scoring; the attacker
procedures only see what their tier grants.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .core import apply_permutation, derive_chain, keystream, part_length
from .errors import MalformedFrame
from .manifest import SessionManifest
from .pipeline import Keys
from .slicing import assemble_part, decode_frame, Slice
from .transport import CAPTURED, RouteEvent


class Knowledge(enum.Enum):
    NO_KEYS = "no_keys"
    MANIFEST_ONLY = "manifest_only"
    MANIFEST_AND_KEYS = "manifest_and_keys"


_TIER_ORDER = [Knowledge.NO_KEYS, Knowledge.MANIFEST_ONLY,
               Knowledge.MANIFEST_AND_KEYS]


@dataclass(frozen=True)
class CaptureSet:
    routes_captured: frozenset
    frames: Tuple[bytes, ...]
    knowledge: Knowledge


@dataclass(frozen=True)
class ReconstructionReport:
    routes_captured: Tuple[int, ...]
    knowledge: Knowledge
    parts_complete: int
    bytes_captured: int
    plaintext_bytes_recovered: int
    ngram_leakage: int

    CSV_HEADER = ("routes_captured,knowledge,parts_complete,bytes_captured,"
                  "plaintext_bytes_recovered,ngram_leakage")

    def csv_row(self) -> str:
        routes = "+".join(str(r) for r in self.routes_captured) or "-"
        return (f"{routes},{self.knowledge.value},{self.parts_complete},"
                f"{self.bytes_captured},{self.plaintext_bytes_recovered},"
                f"{self.ngram_leakage}")


def capture(events: Iterable[RouteEvent], routes: Iterable[int],
            knowledge: Knowledge = Knowledge.NO_KEYS) -> CaptureSet:
    """Pull the eavesdropped frames for a route subset out of an event log."""
    routes = frozenset(routes)
    frames = tuple(ev.frame for ev in events
                   if ev.kind == CAPTURED and ev.route in routes)
    return CaptureSet(routes_captured=routes, frames=frames,
                      knowledge=knowledge)


def _captured_slices(cap: CaptureSet) -> List[Slice]:
    slices: List[Slice] = []
    for frame in cap.frames:
        try:
            bundle = decode_frame(frame)
        except MalformedFrame:
            continue
        slices.extend(bundle.slices)
    return slices


def _has_common_run(a: bytes, b: bytes, k: int) -> bool:
    if k == 0:
        return True
    if k > len(a) or k > len(b):
        return False
    grams = {a[i:i + k] for i in range(len(a) - k + 1)}
    return any(b[j:j + k] in grams for j in range(len(b) - k + 1))


def leakage_scan(captured: bytes, plaintext: bytes) -> int:
    """Longest common substring length between the two byte strings.

    Exponential probe then binary search over run length k, using k-gram
    hash sets; O((|a|+|b|) log) and exact.
    """
    hi_cap = min(len(captured), len(plaintext))
    if hi_cap == 0 or not _has_common_run(captured, plaintext, 1):
        return 0
    lo = 1  # longest k known to match
    hi = 2  # probe
    while hi <= hi_cap and _has_common_run(captured, plaintext, hi):
        lo = hi
        hi *= 2
    hi = min(hi, hi_cap + 1)  # smallest k known (or assumed) to fail
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _has_common_run(captured, plaintext, mid):
            lo = mid
        else:
            hi = mid
    return lo


def _no_keys_reconstruction(slices: Sequence[Slice], m: int) -> int:
    """Parts provably completable without the tag map.

    Tags are opaque, so the only handle is slice length; an assembly is
    forced only when a length class holds exactly one slice per route and
    nothing else.
    """
    by_length: Dict[int, List[Slice]] = {}
    for s in slices:
        by_length.setdefault(len(s.data), []).append(s)
    complete = 0
    for group in by_length.values():
        routes = sorted(s.slice_index for s in group)
        if routes == list(range(m)):
            complete += 1
    return complete


def attempt_reconstruction(cap: CaptureSet, *,
                           m: int,
                           manifest: Optional[SessionManifest] = None,
                           keys: Optional[Keys] = None,
                           plaintext: Optional[bytes] = None) -> ReconstructionReport:
    """Run the attacker procedure for the capture's knowledge tier and
    score it against the ground-truth plaintext."""
    slices = _captured_slices(cap)
    bytes_captured = sum(len(s.data) for s in slices)
    tier = cap.knowledge

    if tier is Knowledge.NO_KEYS:
        parts_complete = _no_keys_reconstruction(slices, m)
        captured_blob = b"".join(s.data for s in slices)
        recovered = 0
    else:
        if manifest is None:
            raise ValueError(f"{tier.value} tier requires the manifest")
        parts_complete, assembled = _assemble_with_manifest(slices, manifest)
        captured_blob = b"".join(
            assembled[p].data if p in assembled else b""
            for p in range(manifest.n)
        ) + b"".join(s.data for s in slices
                     if manifest.tag_map.get(s.tag, (None, None))[0] not in assembled)
        if tier is Knowledge.MANIFEST_ONLY:
            recovered = 0
        else:
            if keys is None:
                raise ValueError("manifest_and_keys tier requires the keys")
            recovered_bytes = _recover_plaintext(assembled, manifest, keys)
            recovered = len(recovered_bytes)
            captured_blob = recovered_bytes

    ngram = leakage_scan(captured_blob, plaintext) if plaintext is not None else 0
    return ReconstructionReport(
        routes_captured=tuple(sorted(cap.routes_captured)),
        knowledge=tier,
        parts_complete=parts_complete,
        bytes_captured=bytes_captured,
        plaintext_bytes_recovered=recovered,
        ngram_leakage=ngram,
    )


def _assemble_with_manifest(slices: Sequence[Slice],
                            manifest: SessionManifest):
    """Assemble every transformed part whose m slices were all captured.
    Returns (count, {shuffled_position: TransformedPart})."""
    by_position: Dict[int, List[Slice]] = {}
    for s in slices:
        pos_slice = manifest.tag_map.get(s.tag)
        if pos_slice is None:
            continue
        position, slice_index = pos_slice
        by_position.setdefault(position, []).append(
            Slice(tag=s.tag, part_index=position,
                  slice_index=slice_index, data=s.data))
    assembled = {}
    for position, group in by_position.items():
        if len({s.slice_index for s in group}) == manifest.m \
                and len(group) == manifest.m:
            assembled[position] = assemble_part(group, manifest.m, seq=position)
    return len(assembled), assembled


def _recover_plaintext(assembled, manifest: SessionManifest,
                       keys: Keys) -> bytes:
    """Invert the keystream on assembled parts and splice recovered bytes
    into payload order; only in-range (unpadded) bytes count."""
    chain = derive_chain(keys.master_key, manifest.nonce, manifest.n)
    plen = part_length(manifest.true_len, manifest.n, manifest.m)
    recovered = []
    for position, tpart in assembled.items():
        seq = manifest.w2_inverse[position]
        ks = keystream(chain.r_values[seq], len(tpart.data))
        plain = bytes(a ^ b for a, b in zip(tpart.data, ks))
        start = seq * plen
        in_range = max(0, min(manifest.true_len - start, len(plain)))
        recovered.append((start, plain[:in_range]))
    recovered.sort()
    return b"".join(chunk for _, chunk in recovered)


def reconstruction_table(cap_sets: Iterable[CaptureSet], *, m: int,
                         manifest: Optional[SessionManifest] = None,
                         keys: Optional[Keys] = None,
                         plaintext: Optional[bytes] = None) -> List[str]:
    """CSV lines (with header) for a batch of capture experiments."""
    lines = [ReconstructionReport.CSV_HEADER]
    for cap in cap_sets:
        report = attempt_reconstruction(cap, m=m, manifest=manifest,
                                        keys=keys, plaintext=plaintext)
        lines.append(report.csv_row())
    return lines
