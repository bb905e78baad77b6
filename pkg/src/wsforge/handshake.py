"""Opening handshake: the HTTP/1.1 GET + Upgrade exchange, both directions."""

from __future__ import annotations

import base64
import binascii
import hashlib
import random
from dataclasses import dataclass
from urllib.parse import urlsplit

from .errors import BadAccept, BadStatus, InvalidKey, MalformedHttp, NotAnUpgrade
from .httpwire import Headers, format_request, format_response, parse_request, parse_response

GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


@dataclass
class HandshakeRequest:
    method: str
    target: str
    headers: Headers
    origin: str | None
    key: str


@dataclass
class HandshakeResponse:
    status: int
    headers: Headers
    accept: str


def _decode_key(key: str) -> bytes:
    try:
        raw = base64.b64decode(key.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError, ValueError):
        raise InvalidKey(f"key {key!r} is not base64") from None
    if len(raw) != 16:
        raise InvalidKey(f"key decodes to {len(raw)} bytes, expected 16")
    return raw


def compute_accept_key(key: str) -> str:
    _decode_key(key)
    digest = hashlib.sha1((key + GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def new_client_key(rng: random.Random) -> str:
    return base64.b64encode(rng.randbytes(16)).decode("ascii")


def is_upgrade(headers: Headers) -> bool:
    return "websocket" in headers.tokens("Upgrade") and "upgrade" in headers.tokens("Connection")


def parse_upgrade_request(data: bytes) -> tuple[HandshakeRequest, int] | None:
    """Parse an upgrade request from the front of ``data``.

    Returns ``(request, consumed)`` or ``None`` if the header block is incomplete.
    Raises :class:`NotAnUpgrade` for ordinary HTTP requests so the caller can
    serve them some other way.
    """
    res = parse_request(data)
    if res is None:
        return None
    req, consumed = res
    if req.method != "GET" or not is_upgrade(req.headers):
        raise NotAnUpgrade(req, consumed)
    key = req.headers.get("Sec-WebSocket-Key")
    if key is None:
        raise MalformedHttp("upgrade request without Sec-WebSocket-Key")
    try:
        _decode_key(key)
    except InvalidKey as exc:
        raise MalformedHttp(str(exc)) from None
    # absolute-form targets (GET ws://host/ HTTP/1.1) are reduced to their path
    target = (urlsplit(req.target).path or "/") if "://" in req.target else req.target
    return HandshakeRequest(req.method, target, req.headers, req.headers.get("Origin"), key), consumed


def build_response(req: HandshakeRequest) -> bytes:
    return format_response(101, [
        ("Upgrade", "websocket"),
        ("Connection", "Upgrade"),
        ("Sec-WebSocket-Accept", compute_accept_key(req.key)),
    ])


def build_request(host: str, key: str, path: str = "/", origin: str | None = None) -> bytes:
    headers = [
        ("Host", host),
        ("Upgrade", "websocket"),
        ("Connection", "Upgrade"),
        ("Sec-WebSocket-Key", key),
        ("Sec-WebSocket-Version", "13"),
    ]
    if origin is not None:
        headers.append(("Origin", origin))
    return format_request("GET", path, headers)


def validate_response(data: bytes, expected_key: str) -> tuple[HandshakeResponse, int] | None:
    """Check a server's answer to our upgrade.  ``None`` means need more bytes.

    On success returns the parsed response and the number of bytes it used;
    anything after that belongs to the frame stream.
    """
    res = parse_response(data, body_expected=False)
    if res is None:
        return None
    resp, consumed = res
    if resp.status != 101:
        raise BadStatus(f"expected 101, got {resp.status} {resp.reason}")
    if not is_upgrade(resp.headers):
        raise MalformedHttp("101 response without Upgrade/Connection headers")
    accept = resp.headers.get("Sec-WebSocket-Accept")
    if accept != compute_accept_key(expected_key):
        raise BadAccept(f"Sec-WebSocket-Accept {accept!r} does not match our key")
    return HandshakeResponse(resp.status, resp.headers, accept), consumed
