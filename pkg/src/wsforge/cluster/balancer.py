"""Load balancer process: accept public TCP connections and splice each one to a worker.

The balancer never parses WebSocket; the handshake happens at the worker.
"""

from __future__ import annotations

import asyncio
import logging
import os
import signal
import time

from ..errors import NoWorkerAvailable
from .config import ClusterConfig

log = logging.getLogger(__name__)

RETRY_UNHEALTHY_AFTER = 1.0


class Balancer:
    """Worker selection state.  ``pick`` chooses; ``release`` undoes a pick when the splice ends."""

    def __init__(self, n_workers: int, strategy: str = "round_robin"):
        if strategy not in ("round_robin", "least_connections"):
            raise ValueError(f"unknown strategy {strategy!r}")
        self.strategy = strategy
        self.active = [0] * n_workers
        self.assigned = [0] * n_workers
        self._down_until = [0.0] * n_workers
        self._cursor = 0

    def healthy(self, i: int, now: float | None = None) -> bool:
        return (time.monotonic() if now is None else now) >= self._down_until[i]

    def mark_down(self, i: int, for_seconds: float = RETRY_UNHEALTHY_AFTER) -> None:
        self._down_until[i] = time.monotonic() + for_seconds

    def pick(self, exclude=()) -> int:
        n = len(self.active)
        now = time.monotonic()
        candidates = [i for i in range(n) if i not in exclude and self.healthy(i, now)]
        if not candidates:
            raise NoWorkerAvailable("no healthy worker")
        if self.strategy == "round_robin":
            for step in range(n):
                i = (self._cursor + step) % n
                if i in candidates:
                    self._cursor = (i + 1) % n
                    break
        else:
            i = min(candidates, key=lambda k: (self.active[k], k))
        self.active[i] += 1
        self.assigned[i] += 1
        return i

    def release(self, i: int) -> None:
        self.active[i] -= 1


def balance(balancer: Balancer, new_connection=None) -> int:
    """Pick the worker for a new connection (the connection object itself is not inspected)."""
    return balancer.pick()


class _Upstream(asyncio.Protocol):
    def __init__(self, downstream: "_Downstream"):
        self.down = downstream
        self.transport = None

    def connection_made(self, transport):
        self.transport = transport

    def data_received(self, data):
        self.down.lb.msgs_out += 1
        if not self.down.transport.is_closing():
            self.down.transport.write(data)

    def connection_lost(self, exc):
        self.down.upstream_lost()

    def pause_writing(self):
        self.down.transport.pause_reading()

    def resume_writing(self):
        self.down.transport.resume_reading()


class _Downstream(asyncio.Protocol):
    def __init__(self, lb: "LoadBalancer"):
        self.lb = lb
        self.transport = None
        self.up: _Upstream | None = None
        self.worker: int | None = None
        self._early: list[bytes] = []
        self._done = False

    def connection_made(self, transport):
        self.transport = transport
        self.lb.conns.add(self)
        self.lb.stats_total += 1
        asyncio.get_running_loop().create_task(self._connect())

    async def _connect(self):
        tried = set()
        loop = asyncio.get_running_loop()
        host = self.lb.config.host
        while True:
            try:
                i = self.lb.balancer.pick(exclude=tried)
            except NoWorkerAvailable:
                self.lb.drops += 1
                self.transport.abort()
                return
            try:
                _, up = await loop.create_connection(lambda: _Upstream(self), host,
                                                     self.lb.config.worker_base_port + i)
            except OSError as exc:
                log.warning("worker %d unreachable: %s", i, exc)
                self.lb.balancer.release(i)
                self.lb.balancer.mark_down(i)
                tried.add(i)
                continue
            if self.transport.is_closing():
                self.lb.balancer.release(i)
                up.transport.close()
                return
            self.worker, self.up = i, up
            for chunk in self._early:
                up.transport.write(chunk)
            self._early = []
            return

    def data_received(self, data):
        self.lb.msgs_in += 1
        if self.up is None:
            self._early.append(data)
        else:
            self.up.transport.write(data)

    def pause_writing(self):
        if self.up is not None:
            self.up.transport.pause_reading()

    def resume_writing(self):
        if self.up is not None:
            self.up.transport.resume_reading()

    def upstream_lost(self):
        if not self.transport.is_closing():
            self.transport.close()
        self._finish()

    def connection_lost(self, exc):
        if self.up is not None and not self.up.transport.is_closing():
            self.up.transport.close()
        self._finish()

    def _finish(self):
        if self._done:
            return
        self._done = True
        self.lb.conns.discard(self)
        if self.worker is not None:
            self.lb.balancer.release(self.worker)


class LoadBalancer:
    def __init__(self, index: int, config: ClusterConfig):
        self.index = index
        self.config = config
        self.balancer = Balancer(config.n_workers, config.lb_strategy)
        self.conns: set[_Downstream] = set()
        self.stats_total = 0
        self.msgs_in = 0
        self.msgs_out = 0
        self.drops = 0
        self.server = None

    async def start(self):
        loop = asyncio.get_running_loop()
        self.server = await loop.create_server(lambda: _Downstream(self), self.config.host,
                                               self.config.public_port, reuse_port=True,
                                               backlog=4096)

    def snapshot(self) -> dict:
        return {
            "role": "load_balancer",
            "lb_index": self.index,
            "active_conns": len(self.conns),
            "total_conns": self.stats_total,
            "assigned": list(self.balancer.assigned),
            "msgs_in": self.msgs_in,
            "msgs_out": self.msgs_out,
            "drops": self.drops,
        }

    async def shutdown(self, grace: float) -> dict:
        if self.server is not None:
            self.server.close()
        deadline = time.monotonic() + grace
        while self.conns and time.monotonic() < deadline:
            await asyncio.sleep(0.02)
        for c in list(self.conns):
            c.transport.abort()
        return self.snapshot()


async def _run(index: int, config: ClusterConfig, ready) -> None:
    from .control import serve_control

    lb = LoadBalancer(index, config)
    await lb.start()
    stop = asyncio.Event()

    async def shutdown(arg):
        final = await lb.shutdown(float(arg or 2.0))
        asyncio.get_running_loop().call_later(0.05, stop.set)
        return final

    ctl, ctl_port = await serve_control({"STATS": lambda arg: lb.snapshot(), "SHUTDOWN": shutdown})
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
