"""HTTP polling and long-polling transports, the baseline WebSocket is compared against.

Endpoints (one request per TCP connection, ``Connection: close``):

    GET  /poll?sid=S      pending message or an empty 200 right away
    GET  /lpoll?sid=S     hanging GET: held until a message arrives or the hold times out (204)
    POST /emit?sid=S      client event (JSON envelope); a ping publishes a pong to S
    POST /publish?sid=S   internal publish hook: body is queued for S as-is
"""

from __future__ import annotations

import asyncio
import logging
import os
import signal
from collections import deque
from dataclasses import dataclass, field

from .errors import MalformedHttp
from .frame import Message, Opcode, frame_overhead
from .httpwire import format_request, format_response, parse_request

log = logging.getLogger(__name__)

DEFAULT_HOLD_TIMEOUT = 25.0


# --- header accounting -------------------------------------------------------

@dataclass(frozen=True)
class HeaderProfile:
    name: str
    request_header_bytes: int
    response_header_bytes: int

    def __post_init__(self):
        if min(self.request_header_bytes, self.response_header_bytes) < 26:
            raise ValueError("header byte counts below minimal legal HTTP framing")

    @property
    def total(self) -> int:
        return self.request_header_bytes + self.response_header_bytes


def poll_request(path: str, sid: str, host: str = "127.0.0.1:8000", body: bytes = b"",
                 method: str = "GET") -> bytes:
    headers = [("Host", host), ("Connection", "close")]
    if method == "POST":
        headers += [("Content-Type", "application/json"), ("Content-Length", str(len(body)))]
    return format_request(method, f"{path}?sid={sid}", headers, body)


def data_response(body: bytes) -> bytes:
    return format_response(200, [
        ("Content-Type", "application/octet-stream"),
        ("Content-Length", str(len(body))),
        ("Cache-Control", "no-cache"),
        ("Connection", "close"),
    ], body)


def empty_response(status: int = 204) -> bytes:
    if status == 204:
        return format_response(204, [("Cache-Control", "no-cache"), ("Connection", "close")])
    return format_response(status, [("Content-Length", "0"), ("Connection", "close")])


def measured_minimal_profile(payload: int = 20) -> HeaderProfile:
    """Header bytes of this module's own long-poll exchange (16-hex-char session id)."""
    req = poll_request("/lpoll", "0" * 16)
    resp = data_response(bytes(payload))
    return HeaderProfile("minimal", len(req), len(resp) - payload)


MINIMAL = measured_minimal_profile()
# 871 bytes of request+response headers for a browser exchange; the split is ours
BROWSER_REALISTIC = HeaderProfile("browser-realistic", 575, 296)
PROFILES = {p.name: p for p in (MINIMAL, BROWSER_REALISTIC)}


def measure_per_message_bytes(transport: str, payload: int, profile: HeaderProfile | None = None,
                              masked: bool = False) -> int:
    """Wire bytes needed to deliver one ``payload``-byte message over ``transport``."""
    if payload < 0:
        raise ValueError("payload must be >= 0")
    if transport == "websocket":
        return frame_overhead(payload, masked) + payload
    if transport in ("poll", "long_poll"):
        if profile is None:
            raise ValueError("HTTP transports need a header profile")
        return profile.request_header_bytes + profile.response_header_bytes + payload
    raise ValueError(f"unknown transport {transport!r}")


# --- sessions ----------------------------------------------------------------

@dataclass
class PollSession:
    session_id: str
    pending: deque = field(default_factory=deque)
    parked: asyncio.Future | None = None
    hold_deadline: float | None = None


class CometHub:
    """Session table.  All methods run on one event loop, which serializes each session."""

    def __init__(self, hold_timeout: float = DEFAULT_HOLD_TIMEOUT):
        self.hold_timeout = hold_timeout
        self.sessions: dict[str, PollSession] = {}
        self.delivered = 0
        self.timeouts = 0
        self.released = 0

    def session(self, sid: str) -> PollSession:
        s = self.sessions.get(sid)
        if s is None:
            s = self.sessions[sid] = PollSession(sid)
        return s

    def publish(self, sid: str, data: bytes) -> None:
        s = self.session(sid)
        s.pending.append(bytes(data))
        if s.parked is not None and not s.parked.done():
            s.parked.set_result(True)

    def requeue(self, sid: str, data: bytes) -> None:
        """Put back a message whose response could not be written."""
        s = self.session(sid)
        s.pending.appendleft(data)
        self.delivered -= 1
        if s.parked is not None and not s.parked.done():
            s.parked.set_result(True)

    def _take(self, s: PollSession) -> bytes:
        self.delivered += 1
        return s.pending.popleft()

    def serve_poll(self, sid: str) -> tuple[int, bytes]:
        s = self.session(sid)
        if s.pending:
            return 200, self._take(s)
        return 200, b""

    async def serve_long_poll(self, sid: str, hold_timeout: float | None = None) -> tuple[int, bytes | None]:
        """Returns ``(200, message)`` or ``(204, None)`` after a timeout or a release."""
        s = self.session(sid)
        if s.pending:
            return 200, self._take(s)
        if s.parked is not None and not s.parked.done():
            # a newer hanging GET wins; the old one is answered empty
            self.released += 1
            s.parked.set_result(False)
        loop = asyncio.get_running_loop()
        hold = self.hold_timeout if hold_timeout is None else hold_timeout
        fut = s.parked = loop.create_future()
        s.hold_deadline = loop.time() + hold
        try:
            got = await asyncio.wait_for(asyncio.shield(fut), hold)
        except asyncio.TimeoutError:
            got = False
            self.timeouts += 1
        finally:
            if s.parked is fut:
                s.parked = None
                s.hold_deadline = None
        if got and s.pending:
            return 200, self._take(s)
        return 204, None


# --- server ------------------------------------------------------------------

class CometServer:
    def __init__(self, hold_timeout: float = DEFAULT_HOLD_TIMEOUT):
        from .cluster.worker import FileRegistry, WorkerStats

        self.hub = CometHub(hold_timeout)
        self.stats = WorkerStats()
        self.files = FileRegistry()
        self.requests = 0
        self.active = 0
        self.server = None

    async def handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        self.active += 1
        buf = bytearray()
        try:
            while True:
                try:
                    res = parse_request(buf)
                except MalformedHttp:
                    writer.write(empty_response(400))
                    return
                if res is not None:
                    break
                chunk = await reader.read(65536)
                if not chunk:
                    return
                buf += chunk
            req, _ = res
            self.requests += 1
            await self.route(req, writer)
        except ConnectionError:
            pass
        finally:
            self.active -= 1
            try:
                await writer.drain()
            except ConnectionError:
                pass
            writer.close()

    async def route(self, req, writer):
        sid = req.query.get("sid")
        if not sid:
            writer.write(empty_response(400))
            return
        if req.path == "/poll" and req.method == "GET":
            _, body = self.hub.serve_poll(sid)
            writer.write(data_response(body))
        elif req.path == "/lpoll" and req.method == "GET":
            status, body = await self.hub.serve_long_poll(sid)
            if status == 200:
                writer.write(data_response(body))
                try:
                    await writer.drain()
                except ConnectionError:
                    self.hub.requeue(sid, body)
                    raise
            else:
                writer.write(empty_response(204))
        elif req.path == "/emit" and req.method == "POST":
            self.on_emit(sid, req.body)
            writer.write(empty_response(204))
        elif req.path == "/publish" and req.method == "POST":
            self.hub.publish(sid, req.body)
            writer.write(empty_response(204))
        else:
            writer.write(empty_response(404))

    def on_emit(self, sid: str, body: bytes):
        from .cluster.worker import handle_event, parse_envelope

        self.stats.msgs_in += 1
        for reply in handle_event(self.stats, parse_envelope(Message(Opcode.TEXT, body)), self.files):
            self.hub.publish(sid, reply.data)
            self.stats.msgs_out += 1
            if reply.kind == Opcode.TEXT:
                self.stats.pongs_sent += 1

    def snapshot(self) -> dict:
        return {
            "role": "comet",
            "active_conns": self.active,
            "sessions": len(self.hub.sessions),
            "requests": self.requests,
            "pings_received": self.stats.pings_received,
            "pongs_sent": self.stats.pongs_sent,
            "msgs_in": self.stats.msgs_in,
            "msgs_out": self.stats.msgs_out,
            "delivered": self.hub.delivered,
            "timeouts": self.hub.timeouts,
            "drops": 0,
        }

    async def start(self, host: str, port: int):
        self.server = await asyncio.start_server(self.handle, host, port, backlog=4096)


async def _run(host, port, hold_timeout, ready):
    from .cluster.control import serve_control

    srv = CometServer(hold_timeout)
    await srv.start(host, port)
    stop = asyncio.Event()

    async def shutdown(arg):
        srv.server.close()
        asyncio.get_running_loop().call_later(0.05, stop.set)
        return srv.snapshot()

    ctl, ctl_port = await serve_control({"STATS": lambda arg: srv.snapshot(), "SHUTDOWN": shutdown})
    asyncio.get_running_loop().add_signal_handler(signal.SIGTERM, stop.set)
    ready.send(("ok", ctl_port, os.getpid()))
    await stop.wait()
    ctl.close()


def main(host: str, port: int, hold_timeout: float, ready) -> None:
    try:
        asyncio.run(_run(host, port, hold_timeout, ready))
    except OSError as exc:
        ready.send(("error", exc.errno, str(exc)))


class CometHandle:
    def __init__(self, proc_info, host, port):
        self.proc = proc_info
        self.host, self.port = host, port

    def pids(self):
        return [(self.proc.pid, "comet", 0)]

    def stats(self) -> dict:
        from .cluster import control

        return control.request_json(self.proc.control_port, "STATS")

    def shutdown(self, grace: float = 2.0) -> dict:
        from .cluster import control

        final = {}
        try:
            final = control.request_json(self.proc.control_port, f"SHUTDOWN {grace}", grace + 5)
        except (OSError, ValueError):
            pass
        self.proc.process.join(grace)
        if self.proc.process.is_alive():
            self.proc.process.kill()
            self.proc.process.join(2)
        return final

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


def spawn_comet(port: int, host: str = "127.0.0.1", hold_timeout: float = DEFAULT_HOLD_TIMEOUT) -> CometHandle:
    import multiprocessing as mp

    from .cluster.supervisor import _start, port_free
    from .errors import PortInUse

    if not port_free(host, port):
        raise PortInUse(f"port {port} already in use")
    procs = []
    _start(mp.get_context("fork"), main, (host, port, hold_timeout), "comet", 0, procs)
    return CometHandle(procs[0], host, port)
