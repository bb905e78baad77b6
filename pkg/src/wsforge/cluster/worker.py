"""Worker process: terminates the WebSocket protocol and runs the app handlers.

Application events travel as JSON text messages ``{"e": name, "d": data, "c": n}``:

* ``ping``    -> ``{"e": "pong", "c": <pings this worker has received>}``
* ``getfile`` -> one Binary message ``[4-byte BE name length][name][content]``
"""

from __future__ import annotations

import asyncio
import json
import logging
import os
import signal
import struct
import time
from dataclasses import asdict, dataclass
from importlib import resources

from ..errors import MalformedHttp, NotAnUpgrade
from ..frame import Message, Opcode
from ..handshake import build_response, parse_upgrade_request
from ..httpwire import format_response
from ..wsconn import CLOSE_GOING_AWAY, CLOSE_TRY_AGAIN, WsProtocol
from .config import ClusterConfig

log = logging.getLogger(__name__)


@dataclass
class WorkerStats:
    worker_index: int = 0
    active_conns: int = 0
    total_conns: int = 0
    pings_received: int = 0
    pongs_sent: int = 0
    files_sent: int = 0
    unknown_events: int = 0
    msgs_in: int = 0
    msgs_out: int = 0
    drops: int = 0


class FileRegistry:
    """Named blobs a client may request.  ``synthetic:<n>`` yields n deterministic bytes."""

    def __init__(self, files: dict[str, bytes] | None = None):
        self.files = dict(files) if files is not None else self.bundled()

    @staticmethod
    def bundled() -> dict[str, bytes]:
        root = resources.files("wsforge") / "data"
        return {"foo.txt": (root / "foo.txt").read_bytes()}

    def get(self, name: str) -> bytes | None:
        if name in self.files:
            return self.files[name]
        if name.startswith("synthetic:"):
            size = name.partition(":")[2]
            if size.isdigit() and int(size) <= 64 * 1024 * 1024:
                n = int(size)
                blob = (b"0123456789abcdef" * (n // 16 + 1))[:n]
                self.files[name] = blob
                return blob
        return None


def file_message(name: str, content: bytes) -> Message:
    raw = name.encode("utf-8")
    return Message(Opcode.BINARY, struct.pack("!I", len(raw)) + raw + content)


def parse_file_message(data: bytes) -> tuple[str, bytes]:
    (n,) = struct.unpack_from("!I", data)
    return data[4:4 + n].decode("utf-8"), data[4 + n:]


def parse_envelope(msg: Message) -> dict | None:
    if msg.kind != Opcode.TEXT:
        return None
    try:
        env = json.loads(msg.data)
    except ValueError:
        return None
    if not isinstance(env, dict) or not isinstance(env.get("e"), str):
        return None
    return env


def handle_event(stats: WorkerStats, envelope: dict | None, files: FileRegistry) -> list[Message]:
    """Apply one inbound event to the worker counters; return the replies to send."""
    event = envelope.get("e") if envelope else None
    if event == "ping":
        stats.pings_received += 1
        return [Message(Opcode.TEXT, json.dumps({"e": "pong", "c": stats.pings_received},
                                                separators=(",", ":")).encode())]
    if event == "getfile":
        name = envelope.get("d")
        content = files.get(name) if isinstance(name, str) else None
        if content is not None:
            stats.files_sent += 1
            return [file_message(name, content)]
    stats.unknown_events += 1
    return []


def index_page() -> bytes:
    return (resources.files("wsforge") / "data" / "index.html").read_bytes()


class WorkerConnection(WsProtocol):
    def __init__(self, worker: "Worker"):
        super().__init__(send_queue_cap=worker.config.send_queue_cap,
                         max_payload=worker.config.max_message_size)
        self.worker = worker
        self._hbuf = bytearray()
        self.counted = False
        self.rejected = False

    def handshake_data(self, data):
        self._hbuf += data
        try:
            res = parse_upgrade_request(self._hbuf)
        except NotAnUpgrade as exc:
            self._serve_plain(exc.request)
            return
        except MalformedHttp:
            self.transport.write(format_response(400, [("Content-Length", "0"), ("Connection", "close")]))
            self.transport.close()
            return
        if res is None:
            return
        req, used = res
        leftover = bytes(self._hbuf[used:])
        self._hbuf = bytearray()
        self.transport.write(build_response(req))
        w = self.worker
        if w.stats.active_conns >= w.config.max_conns_per_worker or w.stopping:
            w.stats.drops += 1
            self.rejected = True
            self.open()
            self.close(CLOSE_TRY_AGAIN, "worker full")
            return
        self.open(leftover)

    def _serve_plain(self, req):
        if req.method == "GET" and req.path in ("/", "/index.html"):
            body = index_page()
            resp = format_response(200, [("Content-Type", "text/html; charset=utf-8"),
                                         ("Content-Length", str(len(body))),
                                         ("Connection", "close")], body)
        else:
            resp = format_response(404, [("Content-Length", "0"), ("Connection", "close")])
        self.transport.write(resp)
        self.transport.close()

    def on_open(self):
        if self.rejected:
            return
        w = self.worker
        self.counted = True
        w.conns.add(self)
        w.stats.active_conns += 1
        w.stats.total_conns += 1

    def on_closed(self, exc):
        w = self.worker
        if self.counted:
            self.counted = False
            w.conns.discard(self)
            w.stats.active_conns -= 1

    def on_overflow(self):
        self.worker.stats.drops += 1

    def on_message(self, msg):
        w = self.worker
        w.stats.msgs_in += 1
        before = w.stats.pings_received
        for reply in handle_event(w.stats, parse_envelope(msg), w.files):
            if self.send_message(reply):
                w.stats.msgs_out += 1
                if reply.kind == Opcode.TEXT:
                    w.stats.pongs_sent += 1
        if w.stats.pings_received != before:
            w.report_ping()


class Worker:
    def __init__(self, index: int, config: ClusterConfig, files: FileRegistry | None = None):
        self.index = index
        self.config = config
        self.files = files or FileRegistry()
        self.stats = WorkerStats(worker_index=index)
        self.conns: set[WorkerConnection] = set()
        self.store = None
        self.stopping = False
        self.server = None
        self._store_key = f"pings:{index}"

    async def start(self, port: int):
        if self.config.n_stores:
            from .store import StoreClient

            self.store = StoreClient(self.config.host, self.config.store_port)
            await self.store.connect()
        loop = asyncio.get_running_loop()
        self.server = await loop.create_server(lambda: WorkerConnection(self), self.config.host,
                                               port, backlog=4096)

    def report_ping(self):
        if self.store is not None:
            fut = self.store.send(f"INCR {self._store_key}")
            fut.add_done_callback(_swallow)

    def snapshot(self) -> dict:
        d = asdict(self.stats)
        d["role"] = "worker"
        return d

    async def shutdown(self, grace: float) -> dict:
        self.stopping = True
        if self.server is not None:
            self.server.close()
        deadline = time.monotonic() + grace * 0.6
        for conn in list(self.conns):
            conn.close(CLOSE_GOING_AWAY, "server shutting down")
        while self.conns and time.monotonic() < deadline:
            await asyncio.sleep(0.02)
        for conn in list(self.conns):
            conn.transport.abort()
        if self.store is not None:
            await self.store.drain(timeout=max(0.5, grace * 0.3))
            await self.store.close()
        return self.snapshot()


def _swallow(fut: asyncio.Future):
    if not fut.cancelled():
        fut.exception()


async def _run(index: int, config: ClusterConfig, ready) -> None:
    from .control import serve_control

    worker = Worker(index, config)
    await worker.start(config.worker_base_port + index)
    stop = asyncio.Event()

    async def shutdown(arg):
        final = await worker.shutdown(float(arg or 5.0))
        asyncio.get_running_loop().call_later(0.05, stop.set)
        return final

    ctl, ctl_port = await serve_control({
        "STATS": lambda arg: worker.snapshot(),
        "SHUTDOWN": shutdown,
    })
    asyncio.get_running_loop().add_signal_handler(signal.SIGTERM, stop.set)
    ready.send(("ok", ctl_port, os.getpid()))
    await stop.wait()
    ctl.close()


def main(index: int, config_dict: dict, ready) -> None:
    config = ClusterConfig(**config_dict)
    try:
        asyncio.run(_run(index, config, ready))
    except OSError as exc:
        ready.send(("error", exc.errno, str(exc)))
