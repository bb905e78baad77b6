"""Exception hierarchy shared by the protocol, cluster and benchmark layers."""


class WsForgeError(Exception):
    pass


# --- framing ---------------------------------------------------------------

class ProtocolViolation(WsForgeError):
    """Peer sent bytes that break the WebSocket framing rules."""

    close_code = 1002


class ControlFrameTooLong(ProtocolViolation):
    pass


class InvalidUtf8(ProtocolViolation):
    close_code = 1007


class MessageTooBig(ProtocolViolation):
    close_code = 1009


# --- HTTP / handshake ------------------------------------------------------

class MalformedHttp(WsForgeError):
    pass


class NotAnUpgrade(WsForgeError):
    """A well-formed HTTP request that does not ask for a WebSocket upgrade.

    The parsed request and the number of bytes it occupied are attached so the
    caller can answer it (static page, 400, ...).
    """

    def __init__(self, request, consumed):
        super().__init__(f"not an upgrade request: {request.method} {request.target}")
        self.request = request
        self.consumed = consumed


class InvalidKey(WsForgeError):
    pass


class HandshakeError(WsForgeError):
    pass


class BadStatus(HandshakeError):
    pass


class BadAccept(HandshakeError):
    pass


# --- batching --------------------------------------------------------------

class EnvelopeError(WsForgeError):
    pass


class TruncatedEnvelope(EnvelopeError):
    pass


class TrailingGarbage(EnvelopeError):
    pass


# --- comet -----------------------------------------------------------------

class SessionConflict(WsForgeError):
    pass


# --- cluster ---------------------------------------------------------------

class ConfigError(WsForgeError):
    pass


class PortInUse(WsForgeError):
    pass


class SpawnFailure(WsForgeError):
    pass


class NoWorkerAvailable(WsForgeError):
    pass


# --- loadgen / analysis ----------------------------------------------------

class UnknownPreset(WsForgeError):
    pass


class NoTransports(WsForgeError):
    pass


class TargetUnreachable(WsForgeError):
    pass


class DivergesAtOne(WsForgeError, ValueError):
    pass


class DegenerateInput(WsForgeError, ValueError):
    pass


# --- metrics ---------------------------------------------------------------

class SamplingDenied(WsForgeError, PermissionError):
    """The OS refused access to another process's statistics."""


class EmptySeries(WsForgeError, ValueError):
    pass
