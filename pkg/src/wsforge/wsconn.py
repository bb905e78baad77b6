"""asyncio protocol glue shared by the cluster worker and the benchmark client.

:class:`WsProtocol` owns the byte stream once the handshake is done: it splits
frames, answers control frames, reassembles messages and runs the closing
handshake.  Outbound data goes through a bounded queue so a reader that
stops draining cannot grow our memory without limit.
"""

from __future__ import annotations

import asyncio
import logging
import random
from collections import deque

from .errors import ProtocolViolation
from .frame import (
    DEFAULT_MAX_PAYLOAD, Frame, FrameParser, Message, MessageAssembler, Opcode,
    close_payload, encode_frame, parse_close,
)

log = logging.getLogger(__name__)

CLOSE_NORMAL = 1000
CLOSE_GOING_AWAY = 1001
CLOSE_PROTOCOL_ERROR = 1002
CLOSE_POLICY = 1008
CLOSE_TOO_BIG = 1009
CLOSE_TRY_AGAIN = 1013


class WsProtocol(asyncio.Protocol):
    """Frame-level connection.  Subclasses do the handshake then call :meth:`open`.

    ``mask_rng`` set means we are the client and must mask what we send.
    """

    def __init__(self, send_queue_cap: int = 1024, mask_rng: random.Random | None = None,
                 max_payload: int = DEFAULT_MAX_PAYLOAD):
        self.transport: asyncio.Transport | None = None
        self.send_queue_cap = send_queue_cap
        self.mask_rng = mask_rng
        self.max_payload = max_payload
        self.parser: FrameParser | None = None
        self.assembler = MessageAssembler(max_payload)
        self.is_open = False
        self.close_sent = False
        self.close_code: int | None = None
        self.overflowed = False
        self.bytes_in = 0
        self.bytes_out = 0
        self._paused = False
        self._pending: deque[bytes] = deque()
        self.closed = asyncio.get_running_loop().create_future()

    # --- hooks -----------------------------------------------------------

    def on_open(self) -> None:
        pass

    def on_message(self, msg: Message) -> None:
        pass

    def on_overflow(self) -> None:
        pass

    def on_closed(self, exc: Exception | None) -> None:
        pass

    # --- asyncio.Protocol --------------------------------------------------

    def connection_made(self, transport):
        self.transport = transport

    def pause_writing(self):
        self._paused = True

    def resume_writing(self):
        self._paused = False
        while self._pending and not self._paused:
            self._raw_write(self._pending.popleft())

    def connection_lost(self, exc):
        self.is_open = False
        self._pending.clear()
        if not self.closed.done():
            self.closed.set_result(self.close_code)
        self.on_closed(exc)

    def data_received(self, data):
        self.bytes_in += len(data)
        if self.parser is None:
            self.handshake_data(data)
        else:
            self.frame_data(data)

    def handshake_data(self, data: bytes) -> None:  # pragma: no cover - overridden
        raise NotImplementedError

    # --- frame stream ----------------------------------------------------

    def open(self, leftover: bytes = b"") -> None:
        self.parser = FrameParser(require_mask=self.mask_rng is None, max_payload=self.max_payload)
        self.is_open = True
        self.on_open()
        if leftover and self.transport is not None and not self.transport.is_closing():
            self.frame_data(leftover)

    def frame_data(self, data: bytes) -> None:
        try:
            for frame in self.parser.feed(data):
                self._handle_frame(frame)
                if self.transport is None or self.transport.is_closing():
                    return
        except ProtocolViolation as exc:
            log.debug("protocol violation: %s", exc)
            self.close(exc.close_code, str(exc)[:100])

    def _handle_frame(self, frame: Frame) -> None:
        op = frame.opcode
        if op == Opcode.PING:
            self.send_frame(Opcode.PONG, frame.payload)
        elif op == Opcode.PONG:
            pass
        elif op == Opcode.CLOSE:
            code, _ = parse_close(frame.payload)
            if self.close_code is None:
                self.close_code = code
            if not self.close_sent:
                self.send_frame(Opcode.CLOSE, frame.payload[:2])
                self.close_sent = True
            self.is_open = False
            self.transport.close()
        else:
            msg = self.assembler.add(frame)
            if msg is not None and self.is_open:
                self.on_message(msg)

    def _raw_write(self, data: bytes) -> None:
        self.bytes_out += len(data)
        self.transport.write(data)

    def write(self, data: bytes) -> bool:
        """Write raw bytes through the bounded queue.  False if the connection was dropped."""
        if self.transport is None or self.transport.is_closing():
            return False
        if not self._paused:
            self._raw_write(data)
            return True
        if len(self._pending) >= self.send_queue_cap:
            self.overflowed = True
            self._pending.clear()
            self.is_open = False
            self.on_overflow()
            self.transport.abort()
            return False
        self._pending.append(data)
        return True

    def send_frame(self, opcode: Opcode, payload: bytes = b"", fin: bool = True) -> bool:
        key = self.mask_rng.randbytes(4) if self.mask_rng is not None else None
        return self.write(encode_frame(Frame(opcode, payload, fin, mask_key=key)))

    def send_message(self, msg: Message) -> bool:
        if not self.is_open:
            return False
        return self.send_frame(msg.kind, msg.data)

    def send_text(self, text: str) -> bool:
        return self.send_message(Message(Opcode.TEXT, text.encode("utf-8")))

    def close(self, code: int = CLOSE_NORMAL, reason: str = "") -> None:
        """Start the closing handshake; the peer's echo (or a timeout) ends it."""
        if self.transport is None or self.transport.is_closing():
            return
        self.is_open = False
        if self.close_code is None:
            self.close_code = code
        if not self.close_sent:
            self.close_sent = True
            self.send_frame(Opcode.CLOSE, close_payload(code, reason))
        asyncio.get_running_loop().call_later(2.0, self._force_close)

    def _force_close(self):
        if self.transport is not None and not self.transport.is_closing():
            self.transport.close()

    @property
    def queued(self) -> int:
        return len(self._pending)
