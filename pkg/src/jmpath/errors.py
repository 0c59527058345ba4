"""Exception hierarchy for the jmpath protocol stack.

Every error raised by the library derives from ProtocolError so callers
can catch one type at the boundary; the CLI maps subtypes to exit codes.
"""


class ProtocolError(Exception):
    """Base class for all jmpath errors."""


class InvalidParams(ProtocolError):
    """A parameter is outside its allowed range."""


class MissingPart(ProtocolError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__(f"missing part seq numbers: {self.missing}")


class DuplicatePart(ProtocolError):
    def __init__(self, seq):
        self.seq = seq
        super().__init__(f"duplicate part seq {seq}")


class LengthMismatch(ProtocolError):
    """Lengths of related values disagree."""


class ChainLengthMismatch(ProtocolError):
    """Part count does not match the keystream chain length."""


class NotDivisible(ProtocolError):
    """Part length is not divisible by the slice count (upstream bug)."""


class MissingSlice(ProtocolError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__(f"missing slice indices: {self.missing}")


class DuplicateSlice(ProtocolError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"duplicate slice index {index}")


class MalformedFrame(ProtocolError):
    """A bundle wire frame failed to parse."""


class MalformedManifest(ProtocolError):
    def __init__(self, offset, reason):
        self.offset = offset
        self.reason = reason
        super().__init__(f"malformed manifest at offset {offset}: {reason}")


class UnsupportedVersion(ProtocolError):
    def __init__(self, version):
        self.version = version
        super().__init__(f"unsupported format version 0x{version:02x}")


class InconsistentInputs(ProtocolError):
    def __init__(self, field, reason):
        self.field = field
        super().__init__(f"inconsistent manifest input {field!r}: {reason}")


class ChannelClosed(ProtocolError):
    """Sync channel is closed."""


class InvalidConfig(ProtocolError):
    """Transport or adversary configuration is invalid."""


class ConnectFailed(ProtocolError):
    def __init__(self, route, reason):
        self.route = route
        super().__init__(f"route {route}: connect failed ({reason})")


class HandshakeMismatch(ProtocolError):
    """The socket handshake bytes did not match."""


class RouteClosed(ProtocolError):
    def __init__(self, route):
        self.route = route
        super().__init__(f"route {route} is closed")


class Incomplete(ProtocolError):
    def __init__(self, missing_count):
        self.missing_count = missing_count
        super().__init__(f"transfer incomplete: {missing_count} slices missing")


class MacMismatch(ProtocolError):
    """Authentication failed; the payload is never released."""


class ReceiveTimeout(ProtocolError):
    """The receiver gave up waiting for outstanding slices."""
