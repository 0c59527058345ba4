"""jmpath: multipath routing of sliced, keystream-masked data transfer.

A packet is fragmented into N parts, each part XOR-masked with a chained
keystream, the parts shuffled under a keyed permutation, sliced into M
pieces, and dispatched over M independent routes so that every route
carries exactly one slice of every part.  An out-of-band manifest carries
the inverse permutation, the tag map, and the MAC the receiver needs to
reassemble and authenticate.
"""

from .core import (
    ChainState,
    Packet,
    Part,
    Permutation,
    TransformedPart,
    apply_permutation,
    derive_chain,
    defragment,
    fragment,
    keystream,
    make_shuffle,
    prf,
    transform_parts,
)
from .errors import ProtocolError
from .manifest import SessionManifest, decode_manifest, encode_manifest
from .pipeline import Keys, RecvSession, SendSession, compute_mac
from .slicing import Bundle, Slice, smallest_factor
from .transport import AdversaryConfig, RouteAdversary, open_routes_sim

__version__ = "0.1.0"

__all__ = [
    "AdversaryConfig",
    "Bundle",
    "ChainState",
    "Keys",
    "Packet",
    "Part",
    "Permutation",
    "ProtocolError",
    "RecvSession",
    "RouteAdversary",
    "SendSession",
    "SessionManifest",
    "Slice",
    "TransformedPart",
    "apply_permutation",
    "compute_mac",
    "decode_manifest",
    "defragment",
    "derive_chain",
    "encode_manifest",
    "fragment",
    "keystream",
    "make_shuffle",
    "open_routes_sim",
    "prf",
    "smallest_factor",
    "transform_parts",
]
