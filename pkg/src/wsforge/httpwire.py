"""Just enough HTTP/1.1 to carry a WebSocket upgrade and the comet transports."""

from __future__ import annotations

from dataclasses import dataclass
from urllib.parse import parse_qs, urlsplit

from .errors import MalformedHttp

MAX_REQUEST_LINE = 8 * 1024
MAX_HEADER_BLOCK = 64 * 1024

REASONS = {
    101: "Switching Protocols",
    200: "OK",
    204: "No Content",
    400: "Bad Request",
    404: "Not Found",
    405: "Method Not Allowed",
    503: "Service Unavailable",
}


class Headers:
    """Ordered multimap with case-insensitive lookup; original spelling kept."""

    def __init__(self, items=()):
        self._items: list[tuple[str, str]] = list(items)

    def add(self, name: str, value: str) -> None:
        self._items.append((name, value))

    def get(self, name: str, default: str | None = None) -> str | None:
        lname = name.lower()
        for k, v in self._items:
            if k.lower() == lname:
                return v
        return default

    def get_all(self, name: str) -> list[str]:
        lname = name.lower()
        return [v for k, v in self._items if k.lower() == lname]

    def tokens(self, name: str) -> set[str]:
        """Comma-separated tokens across every occurrence of ``name``, lowercased."""
        out = set()
        for v in self.get_all(name):
            out.update(t.strip().lower() for t in v.split(",") if t.strip())
        return out

    def __contains__(self, name: str) -> bool:
        return self.get(name) is not None

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __eq__(self, other):
        return isinstance(other, Headers) and self._items == other._items

    def __repr__(self):
        return f"Headers({self._items!r})"

    def encode(self) -> bytes:
        return "".join(f"{k}: {v}\r\n" for k, v in self._items).encode("latin-1")


@dataclass
class HttpRequest:
    method: str
    target: str
    version: str
    headers: Headers
    body: bytes = b""

    @property
    def path(self) -> str:
        return urlsplit(self.target).path or "/"

    @property
    def query(self) -> dict[str, str]:
        return {k: v[0] for k, v in parse_qs(urlsplit(self.target).query).items()}


@dataclass
class HttpResponse:
    status: int
    reason: str
    version: str
    headers: Headers
    body: bytes = b""


@dataclass
class _Head:
    start: list[str]
    headers: Headers
    end: int


def _split_head(data: bytes) -> _Head | None:
    end = data.find(b"\r\n\r\n")
    if end < 0:
        first = data.find(b"\r\n")
        if (first < 0 and len(data) > MAX_REQUEST_LINE) or first > MAX_REQUEST_LINE:
            raise MalformedHttp("start line too long")
        if len(data) > MAX_HEADER_BLOCK:
            raise MalformedHttp("header block too large")
        return None
    if end + 4 > MAX_HEADER_BLOCK:
        raise MalformedHttp("header block too large")
    try:
        text = bytes(data[:end]).decode("latin-1")
    except UnicodeDecodeError:  # pragma: no cover - latin-1 decodes everything
        raise MalformedHttp("undecodable header block") from None
    lines = text.split("\r\n")
    if len(lines[0]) > MAX_REQUEST_LINE:
        raise MalformedHttp("start line too long")
    headers = Headers()
    for line in lines[1:]:
        name, sep, value = line.partition(":")
        if not sep or not name or name != name.strip() or " " in name:
            raise MalformedHttp(f"bad header line {line!r}")
        headers.add(name, value.strip())
    return _Head(lines[0].split(" ", 2), headers, end + 4)


def _content_length(headers: Headers) -> int:
    raw = headers.get("Content-Length")
    if raw is None:
        return 0
    if not raw.isdigit():
        raise MalformedHttp(f"bad Content-Length {raw!r}")
    return int(raw)


def parse_request(data: bytes) -> tuple[HttpRequest, int] | None:
    """Parse one request (head plus Content-Length body). ``None`` means need more."""
    head = _split_head(data)
    if head is None:
        return None
    if len(head.start) != 3 or not head.start[2].startswith("HTTP/1."):
        raise MalformedHttp(f"bad request line {' '.join(head.start)!r}")
    method, target, version = head.start
    if not method.isalpha() or not method.isupper() or not target:
        raise MalformedHttp(f"bad request line {' '.join(head.start)!r}")
    if "chunked" in head.headers.tokens("Transfer-Encoding"):
        raise MalformedHttp("chunked request bodies are not supported")
    n = _content_length(head.headers)
    if len(data) < head.end + n:
        return None
    body = bytes(data[head.end:head.end + n])
    return HttpRequest(method, target, version, head.headers, body), head.end + n


def parse_response(data: bytes, body_expected: bool = True) -> tuple[HttpResponse, int] | None:
    head = _split_head(data)
    if head is None:
        return None
    start = head.start
    if len(start) < 2 or not start[0].startswith("HTTP/1.") or not start[1].isdigit():
        raise MalformedHttp(f"bad status line {' '.join(start)!r}")
    status = int(start[1])
    reason = start[2] if len(start) > 2 else ""
    n = _content_length(head.headers) if body_expected and status not in (101, 204) else 0
    if len(data) < head.end + n:
        return None
    body = bytes(data[head.end:head.end + n])
    return HttpResponse(status, reason, start[0], head.headers, body), head.end + n


def format_response(status: int, headers: Headers | list | None = None, body: bytes = b"",
                    reason: str | None = None) -> bytes:
    hdrs = headers if isinstance(headers, Headers) else Headers(headers or [])
    line = f"HTTP/1.1 {status} {reason or REASONS.get(status, 'Unknown')}\r\n"
    return line.encode("latin-1") + hdrs.encode() + b"\r\n" + body


def format_request(method: str, target: str, headers: Headers | list, body: bytes = b"") -> bytes:
    hdrs = headers if isinstance(headers, Headers) else Headers(headers)
    return f"{method} {target} HTTP/1.1\r\n".encode("latin-1") + hdrs.encode() + b"\r\n" + body
