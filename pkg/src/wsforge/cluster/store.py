"""Counter store: a line protocol over TCP.

    INCR <key>    -> new value
    GET <key>     -> current value (0 when absent)
    SUM <prefix>  -> sum over keys starting with prefix
    anything else -> -ERR
"""

from __future__ import annotations

import asyncio
import logging
import os
import signal
from collections import deque

log = logging.getLogger(__name__)


class CounterStore:
    def __init__(self):
        self.counters: dict[str, int] = {}
        self.ops = 0

    def incr(self, key: str) -> int:
        self.counters[key] = self.counters.get(key, 0) + 1
        return self.counters[key]

    def get(self, key: str) -> int:
        return self.counters.get(key, 0)

    def sum(self, prefix: str) -> int:
        return sum(v for k, v in self.counters.items() if k.startswith(prefix))


def store_op(store: CounterStore, line: str) -> str:
    """Apply one request line and return the reply line (with newline)."""
    parts = line.rstrip("\r\n").split(" ")
    if len(parts) == 2 and parts[1]:
        cmd, key = parts[0].upper(), parts[1]
        store.ops += 1
        if cmd == "INCR":
            return f"{store.incr(key)}\n"
        if cmd == "GET":
            return f"{store.get(key)}\n"
        if cmd == "SUM":
            return f"{store.sum(key)}\n"
    elif len(parts) == 2 and parts[0].upper() == "SUM":
        store.ops += 1
        return f"{store.sum('')}\n"
    return "-ERR\n"


async def _serve_lines(store: CounterStore, reader, writer):
    try:
        while True:
            line = await reader.readline()
            if not line:
                break
            writer.write(store_op(store, line.decode("utf-8", "replace")).encode())
            if writer.transport.get_write_buffer_size() > 65536:
                await writer.drain()
    except ConnectionError:
        pass
    finally:
        writer.close()


class StoreClient:
    """Pipelined request/response client over one connection (worker side)."""

    def __init__(self, host: str, port: int):
        self.host, self.port = host, port
        self._reader = self._writer = None
        self._waiting: deque[asyncio.Future] = deque()
        self._reader_task = None
        self.errors = 0

    async def connect(self, timeout: float = 5.0):
        self._reader, self._writer = await asyncio.wait_for(
            asyncio.open_connection(self.host, self.port), timeout)
        self._reader_task = asyncio.create_task(self._read_replies())

    async def _read_replies(self):
        try:
            while True:
                line = await self._reader.readline()
                if not line:
                    break
                fut = self._waiting.popleft()
                if not fut.done():
                    fut.set_result(line.decode().strip())
        except (ConnectionError, IndexError) as exc:
            log.warning("store connection failed: %s", exc)
        finally:
            while self._waiting:
                fut = self._waiting.popleft()
                if not fut.done():
                    fut.set_exception(ConnectionError("store connection lost"))

    def send(self, line: str) -> asyncio.Future:
        fut = asyncio.get_running_loop().create_future()
        if self._writer is None or self._writer.is_closing():
            self.errors += 1
            fut.set_exception(ConnectionError("store not connected"))
            fut.exception()
            return fut
        self._waiting.append(fut)
        self._writer.write(line.encode() + b"\n")
        return fut

    async def call(self, line: str) -> str:
        return await self.send(line)

    async def drain(self, timeout: float = 5.0):
        """Wait until every request sent so far has been answered."""
        pending = [f for f in self._waiting if not f.done()]
        if pending:
            await asyncio.wait(pending, timeout=timeout)

    async def close(self):
        if self._writer is not None:
            self._writer.close()
        if self._reader_task is not None:
            try:
                await asyncio.wait_for(self._reader_task, 1.0)
            except (asyncio.TimeoutError, asyncio.CancelledError):
                pass


async def _run(port: int, host: str, ready) -> None:
    from .control import serve_control

    store = CounterStore()
    stop = asyncio.Event()
    server = await asyncio.start_server(lambda r, w: _serve_lines(store, r, w), host, port)

    async def shutdown(arg):
        server.close()
        asyncio.get_running_loop().call_later(0.05, stop.set)
        return {"role": "store", "ops": store.ops, "keys": len(store.counters)}

    ctl, ctl_port = await serve_control({
        "STATS": lambda arg: {"role": "store", "ops": store.ops, "keys": len(store.counters),
                              "active_conns": 0, "msgs_in": store.ops, "msgs_out": store.ops,
                              "drops": 0},
        "SHUTDOWN": shutdown,
    })
    loop = asyncio.get_running_loop()
    loop.add_signal_handler(signal.SIGTERM, stop.set)
    ready.send(("ok", ctl_port, os.getpid()))
    await stop.wait()
    ctl.close()


def main(port: int, host: str, ready) -> None:
    try:
        asyncio.run(_run(port, host, ready))
    except OSError as exc:
        ready.send(("error", exc.errno, str(exc)))
