"""Start, health-check and stop the cluster's OS processes."""

from __future__ import annotations

import errno
import logging
import multiprocessing as mp
import signal
import socket
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass

from ..errors import PortInUse, SpawnFailure
from ..limits import check_fd_limit
from . import balancer, control, store, worker
from .config import ClusterConfig
from .worker import WorkerStats

log = logging.getLogger(__name__)

READY_TIMEOUT = 15.0


@dataclass
class ProcInfo:
    role: str
    index: int
    pid: int
    control_port: int
    process: mp.Process


def port_free(host: str, port: int) -> bool:
    with socket.socket() as s:
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            s.bind((host, port))
        except OSError:
            return False
    return True


class ClusterHandle:
    def __init__(self, config: ClusterConfig, procs: list[ProcInfo]):
        self.config = config
        self.procs = procs
        self.final_stats: list[WorkerStats] | None = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if self.final_stats is None:
            self.shutdown()

    @property
    def endpoint(self) -> str:
        return f"ws://{self.config.host}:{self.config.public_port}/"

    def by_role(self, role: str) -> list[ProcInfo]:
        return [p for p in self.procs if p.role == role]

    def pids(self) -> list[tuple[int, str, int]]:
        return [(p.pid, p.role, p.index) for p in self.procs]

    def health(self) -> bool:
        try:
            return all(control.request(p.control_port, "PING", 2.0) == "PONG" for p in self.procs)
        except OSError:
            return False

    def stats(self, proc: ProcInfo) -> dict:
        return control.request_json(proc.control_port, "STATS")

    def stats_fn(self, proc: ProcInfo):
        return lambda: self.stats(proc)

    def worker_stats(self) -> list[WorkerStats]:
        return [_worker_stats(self.stats(p)) for p in self.by_role("worker")]

    def store_query(self, line: str) -> int:
        if not self.config.n_stores:
            raise SpawnFailure("cluster has no store")
        with socket.create_connection((self.config.host, self.config.store_port), timeout=5) as s:
            s.sendall(line.encode() + b"\n")
            buf = b""
            while not buf.endswith(b"\n"):
                chunk = s.recv(4096)
                if not chunk:
                    break
                buf += chunk
        reply = buf.decode().strip()
        if reply.startswith("-"):
            raise ValueError(f"store rejected {line!r}: {reply}")
        return int(reply)

    def store_sum(self, prefix: str = "pings:") -> int:
        return self.store_query(f"SUM {prefix}")

    def shutdown(self, grace: float = 5.0) -> list[WorkerStats]:
        """Close client connections (code 1001), stop every process, return final worker stats."""
        if self.final_stats is not None:
            return self.final_stats
        finals = []
        for role in ("worker", "load_balancer", "store"):
            for p in self.by_role(role):
                if not p.process.is_alive():
                    continue
                try:
                    reply = control.request_json(p.control_port, f"SHUTDOWN {grace}", timeout=grace + 5)
                    if role == "worker":
                        finals.append(_worker_stats(reply))
                except (OSError, ValueError) as exc:
                    log.warning("%s %d did not shut down cleanly: %s", role, p.index, exc)
        deadline = time.monotonic() + grace
        for p in self.procs:
            p.process.join(max(0.0, deadline - time.monotonic()))
        for p in self.procs:
            if p.process.is_alive():
                log.warning("killing %s %d", p.role, p.index)
                p.process.kill()
                p.process.join(2)
        self.final_stats = sorted(finals, key=lambda s: s.worker_index)
        return self.final_stats


def _worker_stats(d: dict) -> WorkerStats:
    fields = WorkerStats.__dataclass_fields__
    return WorkerStats(**{k: v for k, v in d.items() if k in fields})


@contextmanager
def sigint_ignored():
    """Children forked inside this block ignore Ctrl-C; the parent drives their shutdown."""
    if threading.current_thread() is not threading.main_thread():
        yield
        return
    old = signal.signal(signal.SIGINT, signal.SIG_IGN)
    try:
        yield
    finally:
        signal.signal(signal.SIGINT, old)


def _start(ctx, target, args, role, index, procs):
    parent, child = ctx.Pipe(duplex=False)
    proc = ctx.Process(target=target, args=(*args, child), name=f"wsforge-{role}-{index}", daemon=True)
    with sigint_ignored():
        proc.start()
    child.close()
    if not parent.poll(READY_TIMEOUT):
        proc.kill()
        raise SpawnFailure(f"{role} {index} did not report ready within {READY_TIMEOUT}s")
    try:
        msg = parent.recv()
    except EOFError:
        raise SpawnFailure(f"{role} {index} exited during startup") from None
    if msg[0] != "ok":
        proc.join(2)
        _, code, text = msg
        if code == errno.EADDRINUSE:
            raise PortInUse(f"{role} {index}: {text}")
        raise SpawnFailure(f"{role} {index}: {text}")
    procs.append(ProcInfo(role, index, msg[2], msg[1], proc))


def peak_sockets(config: ClusterConfig) -> int:
    """Most client-driven sockets any single cluster process holds at ``expected_conns``."""
    expected = config.expected_conns or 0
    per_worker = -(-expected // config.n_workers)
    # a balancer holds both ends of every connection it splices
    per_lb = 2 * -(-expected // config.n_load_balancers) if config.n_load_balancers else 0
    return max(per_worker, per_lb)


def fd_preflight(config: ClusterConfig) -> bool:
    if not config.expected_conns:
        return True
    return check_fd_limit(peak_sockets(config))


def spawn(config: ClusterConfig) -> ClusterHandle:
    config.validate()
    fd_preflight(config)
    ports = [config.public_port, *config.worker_ports] + ([config.store_port] if config.n_stores else [])
    busy = [p for p in ports if not port_free(config.host, p)]
    if busy:
        raise PortInUse(f"ports already in use: {', '.join(map(str, busy))}")

    ctx = mp.get_context("fork")
    cfg = config.to_dict()
    procs: list[ProcInfo] = []
    try:
        if config.n_stores:
            _start(ctx, store.main, (config.store_port, config.host), "store", 0, procs)
        for i in range(config.n_workers):
            _start(ctx, worker.main, (i, cfg), "worker", i, procs)
        for i in range(config.n_load_balancers):
            _start(ctx, balancer.main, (i, cfg), "load_balancer", i, procs)
        handle = ClusterHandle(config, procs)
        if not handle.health():
            raise SpawnFailure("health check failed")
    except BaseException:
        for p in procs:
            p.process.kill()
        for p in procs:
            p.process.join(5)
        raise
    return handle
