"""One benchmark client process: opens its share of connections tick by tick and
pings on each until the run ends, then waits for outstanding replies."""

from __future__ import annotations

import asyncio
import json
import logging
import os
import random
import time
from collections import deque
from dataclasses import asdict

from ..comet import poll_request
from ..errors import HandshakeError, MalformedHttp
from ..frame import Opcode
from ..handshake import build_request, new_client_key, validate_response
from ..httpwire import parse_response
from ..wsconn import CLOSE_NORMAL, WsProtocol
from .report import ProcReport
from .scenario import Scenario, planned_attempts

log = logging.getLogger(__name__)

CONNECT_TIMEOUT = 10.0


class ClientConn(WsProtocol):
    def __init__(self, proc: "ClientProc", rng: random.Random):
        super().__init__(send_queue_cap=4096, mask_rng=rng)
        self.proc = proc
        self.rng = rng
        self.key = new_client_key(rng)
        self._hbuf = bytearray()
        self.sent_times: deque[float] = deque()
        self.timer: asyncio.TimerHandle | None = None
        self.established = False
        self.dropped = False
        self.handshake_done = asyncio.get_running_loop().create_future()

    def connection_made(self, transport):
        super().connection_made(transport)
        req = build_request(f"{self.proc.sc.host}:{self.proc.sc.port}", self.key)
        self.proc.report.handshake_bytes += len(req)
        transport.write(req)

    def handshake_data(self, data):
        self._hbuf += data
        try:
            res = validate_response(self._hbuf, self.key)
        except (HandshakeError, MalformedHttp) as exc:
            self._fail(f"handshake: {exc}")
            return
        if res is None:
            return
        _, used = res
        self.proc.report.handshake_bytes += used
        leftover = bytes(self._hbuf[used:])
        self._hbuf = bytearray()
        self.bytes_in = len(leftover)
        self.bytes_out = 0
        self.open(leftover)

    def _fail(self, why: str):
        if not self.handshake_done.done():
            self.handshake_done.set_exception(ConnectionError(why))
        self.transport.abort()

    def on_open(self):
        self.established = True
        if not self.handshake_done.done():
            self.handshake_done.set_result(True)
        self.proc.on_established(self)

    def on_message(self, msg):
        self.proc.on_reply(self, msg)

    def on_closed(self, exc):
        if self.timer is not None:
            self.timer.cancel()
        if not self.handshake_done.done():
            self.handshake_done.set_exception(ConnectionError(f"closed during handshake: {exc}"))
        self.proc.on_closed(self)


class ClientProc:
    def __init__(self, sc: Scenario, index: int):
        self.sc = sc
        self.index = index
        self.opened = 0
        self.report = ProcReport(proc_index=index, pid=os.getpid())
        self.conns: set = set()
        self.sending = False
        self.closing = False
        self.t0 = 0.0
        self.file_name = sc.file_name
        self.tasks: set[asyncio.Task] = set()

    # --- shared bookkeeping ------------------------------------------------

    def second(self) -> int:
        return int(time.monotonic() - self.t0)

    def conn_rng(self, ordinal: int) -> random.Random:
        """Private generator per connection, so schedules do not depend on event interleaving."""
        return conn_rng(self.sc.seed, self.index, ordinal)

    def ping_body(self, rng: random.Random) -> bytes:
        if self.file_name is not None:
            return json.dumps({"e": "getfile", "d": self.file_name}).encode()
        return json.dumps({"e": "ping", "d": rng.random()}).encode()

    def note_sent(self, sent_times: deque):
        sent_times.append(time.monotonic())
        self.report.pings_sent += 1
        self.report.tick_second(self.second(), sent=1)

    def note_reply(self, sent_times: deque) -> bool:
        if not sent_times:
            self.report.errors.append("reply without an outstanding request")
            return False
        rtt = (time.monotonic() - sent_times.popleft()) * 1000.0
        self.report.pongs_received += 1
        self.report.record_rtt(rtt)
        self.report.tick_second(self.second(), received=1)
        return True

    def outstanding(self) -> int:
        return sum(len(c.sent_times) for c in self.conns)

    # --- websocket ---------------------------------------------------------

    def on_established(self, conn: ClientConn):
        self.report.conns_established += 1
        self.conns.add(conn)
        if self.sc.closed_loop:
            self._ws_ping(conn)
        else:
            self._schedule(conn)

    def _schedule(self, conn: ClientConn):
        delay = self.sc.draw_interval(conn.rng)
        conn.timer = asyncio.get_running_loop().call_later(delay, self._ws_ping, conn)

    def _ws_ping(self, conn: ClientConn):
        conn.timer = None
        if not self.sending or not conn.is_open:
            return
        if conn.send_frame(Opcode.TEXT, self.ping_body(conn.rng)):
            self.note_sent(conn.sent_times)
        if not self.sc.closed_loop:
            self._schedule(conn)

    def on_reply(self, conn: ClientConn, msg):
        expected = Opcode.BINARY if self.file_name is not None else Opcode.TEXT
        if msg.kind != expected:
            self.report.errors.append(f"unexpected {msg.kind.name} reply")
            return
        if self.note_reply(conn.sent_times) and self.sc.closed_loop and self.sending:
            self._ws_ping(conn)

    def on_closed(self, conn: ClientConn):
        self.conns.discard(conn)
        code = conn.close_code
        self.report.close_codes[str(code)] = self.report.close_codes.get(str(code), 0) + 1
        if conn.established and not self.closing and not conn.dropped:
            conn.dropped = True
            self.report.conns_dropped += 1

    async def _open_ws(self):
        loop = asyncio.get_running_loop()
        rng = self.conn_rng(self.opened)
        self.opened += 1
        conn = None
        try:
            _, conn = await asyncio.wait_for(
                loop.create_connection(lambda: ClientConn(self, rng), self.sc.host, self.sc.port),
                CONNECT_TIMEOUT)
            await asyncio.wait_for(conn.handshake_done, CONNECT_TIMEOUT)
        except (OSError, asyncio.TimeoutError, ConnectionError) as exc:
            self.report.conns_dropped += 1
            if conn is not None:
                conn.dropped = True
                if conn.transport is not None:
                    conn.transport.abort()
            if len(self.report.errors) < 50:
                self.report.errors.append(f"connect: {exc!r}")
        except asyncio.CancelledError:
            # the run ended before the handshake finished
            if conn is None or not conn.established:
                self.report.conns_dropped += 1
                if conn is not None and conn.transport is not None:
                    conn.dropped = True
                    conn.transport.abort()
            raise

    # --- long polling ------------------------------------------------------

    async def _http(self, raw: bytes) -> tuple[int, bytes]:
        reader, writer = await asyncio.wait_for(
            asyncio.open_connection(self.sc.host, self.sc.port), CONNECT_TIMEOUT)
        try:
            writer.write(raw)
            data = await reader.read()
        finally:
            writer.close()
        res = parse_response(data)
        if res is None:
            raise ConnectionError("truncated HTTP response")
        self.report.wire_bytes_out += len(raw)
        self.report.wire_bytes_in += len(data)
        return res[0].status, res[0].body

    async def _open_comet(self):
        rng = self.conn_rng(self.opened)
        self.opened += 1
        sid = rng.randbytes(8).hex()
        host = f"{self.sc.host}:{self.sc.port}"
        session = _CometSession(rng)
        try:
            raw = poll_request("/poll", sid, host)
            status, _ = await self._http(raw)
            if status != 200:
                raise ConnectionError(f"poll answered {status}")
        except (OSError, asyncio.TimeoutError, ConnectionError) as exc:
            self.report.conns_dropped += 1
            self.report.errors.append(f"comet connect: {exc!r}")
            return
        except asyncio.CancelledError:
            self.report.conns_dropped += 1
            raise
        self.report.conns_established += 1
        self.conns.add(session)
        try:
            await asyncio.gather(self._comet_recv(sid, host, session), self._comet_send(sid, host, session))
        except (OSError, asyncio.TimeoutError, ConnectionError) as exc:
            if not self.closing:
                self.report.conns_dropped += 1
                self.report.errors.append(f"comet session: {exc!r}")
        finally:
            self.conns.discard(session)

    async def _comet_send(self, sid, host, session):
        while self.sending:
            await asyncio.sleep(self.sc.draw_interval(session.rng))
            if not self.sending:
                break
            body = self.ping_body(session.rng)
            self.note_sent(session.sent_times)
            await self._http(poll_request("/emit", sid, host, body, method="POST"))

    async def _comet_recv(self, sid, host, session):
        raw = poll_request("/lpoll", sid, host)
        while self.sending or session.sent_times:
            if self.closing:
                break
            status, body = await self._http(raw)
            if status == 200:
                self.note_reply(session.sent_times)

    # --- run ---------------------------------------------------------------

    def _spawn(self, coro):
        task = asyncio.get_running_loop().create_task(coro)
        self.tasks.add(task)
        task.add_done_callback(self.tasks.discard)

    async def run(self, start_at: float) -> ProcReport:
        sc = self.sc
        opener = self._open_comet if sc.transport == "long_poll" else self._open_ws

        await asyncio.sleep(max(0.0, start_at - time.time()))
        self.t0 = time.monotonic()
        self.sending = True
        end = self.t0 + sc.duration
        tick = 0
        while True:
            tick_at = self.t0 + tick * sc.tick_period
            if tick_at >= end:
                break
            await asyncio.sleep(max(0.0, tick_at - time.monotonic()))
            k = planned_attempts(sc, tick + 1, self.index) - self.report.conns_attempted
            for _ in range(k):
                self.report.conns_attempted += 1
                self._spawn(opener())
            self.report.ramp.append(self.report.conns_attempted)
            tick += 1
        await asyncio.sleep(max(0.0, end - time.monotonic()))
        self.sending = False
        for c in list(self.conns):
            if getattr(c, "timer", None) is not None:
                c.timer.cancel()

        deadline = time.monotonic() + sc.drain_timeout
        while self.outstanding() and time.monotonic() < deadline:
            await asyncio.sleep(0.02)
        self.closing = True
        closers = []
        for c in list(self.conns):
            if isinstance(c, ClientConn):
                self.report.wire_bytes_out += c.bytes_out
                self.report.wire_bytes_in += c.bytes_in
                c.close(CLOSE_NORMAL)
                closers.append(c.closed)
        if closers:
            await asyncio.wait(closers, timeout=3.0)
        for t in list(self.tasks):
            t.cancel()
        if self.tasks:
            await asyncio.wait(list(self.tasks), timeout=3.0)
        lost = self.outstanding()
        if lost:
            self.report.errors.append(f"{lost} requests never answered")
        return self.report


class _CometSession:
    def __init__(self, rng: random.Random):
        self.rng = rng
        self.sent_times: deque[float] = deque()


def conn_rng(seed: int, proc_index: int, ordinal: int) -> random.Random:
    return random.Random(f"{seed}/{proc_index}/{ordinal}")


def proc_main(sc_dict: dict, index: int, start_at: float, results) -> None:
    sc = Scenario(**sc_dict)
    try:
        report = asyncio.run(ClientProc(sc, index).run(start_at))
    except Exception as exc:  # report whatever went wrong instead of hanging the parent
        log.exception("client process %d failed", index)
        report = ProcReport(proc_index=index, pid=os.getpid(), errors=[f"crashed: {exc!r}"])
    results.put(asdict(report))
