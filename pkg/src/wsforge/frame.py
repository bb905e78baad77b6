"""RFC 6455 frame codec.

Everything here is a pure function over bytes.  ``decode_frame`` returns
``None`` while the input is still a strict prefix of a frame; the streaming
helpers (:class:`FrameParser`, :class:`MessageAssembler`) build on that.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterator

from .errors import ControlFrameTooLong, InvalidUtf8, MessageTooBig, ProtocolViolation

DEFAULT_MAX_PAYLOAD = 16 * 1024 * 1024
MAX_CONTROL_PAYLOAD = 125


class Opcode(IntEnum):
    CONTINUATION = 0x0
    TEXT = 0x1
    BINARY = 0x2
    CLOSE = 0x8
    PING = 0x9
    PONG = 0xA

    @property
    def is_control(self) -> bool:
        return self >= 0x8


_OPCODES = {int(op) for op in Opcode}


@dataclass(frozen=True)
class Frame:
    opcode: Opcode
    payload: bytes = b""
    fin: bool = True
    rsv: tuple[bool, bool, bool] = (False, False, False)
    mask_key: bytes | None = None

    def validate(self) -> None:
        if any(self.rsv):
            raise ProtocolViolation("rsv bits set without a negotiated extension")
        if self.mask_key is not None and len(self.mask_key) != 4:
            raise ValueError("mask key must be exactly 4 bytes")
        if self.opcode.is_control:
            if len(self.payload) > MAX_CONTROL_PAYLOAD:
                raise ControlFrameTooLong(
                    f"control frame payload {len(self.payload)} > {MAX_CONTROL_PAYLOAD}")
            if not self.fin:
                raise ProtocolViolation("control frames cannot be fragmented")
            if self.opcode == Opcode.CLOSE and len(self.payload) == 1:
                raise ProtocolViolation("close payload must start with a 2-byte code")
        if self.opcode == Opcode.TEXT and self.fin:
            _check_utf8(self.payload)


@dataclass(frozen=True)
class Message:
    kind: Opcode
    data: bytes

    def __post_init__(self):
        if self.kind not in (Opcode.TEXT, Opcode.BINARY):
            raise ValueError(f"message kind must be TEXT or BINARY, not {self.kind!r}")

    @property
    def text(self) -> str:
        return self.data.decode("utf-8")


def _check_utf8(data: bytes) -> None:
    try:
        data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InvalidUtf8(str(exc)) from None


def apply_mask(payload: bytes, key: bytes) -> bytes:
    """XOR ``payload`` with the repeating 4-byte ``key``."""
    n = len(payload)
    if n == 0:
        return b""
    stream = (key * (n // 4 + 1))[:n]
    # one big-int XOR is much faster than a per-byte loop in CPython
    return (int.from_bytes(payload, "little") ^ int.from_bytes(stream, "little")).to_bytes(n, "little")


def frame_overhead(payload_len: int, masked: bool) -> int:
    if payload_len < 0:
        raise ValueError("payload_len must be >= 0")
    if payload_len <= 125:
        size = 2
    elif payload_len <= 0xFFFF:
        size = 4
    else:
        size = 10
    return size + 4 if masked else size


def encode_frame(frame: Frame) -> bytes:
    frame.validate()
    payload = frame.payload
    n = len(payload)
    b0 = (0x80 if frame.fin else 0) | int(frame.opcode)
    mask_bit = 0x80 if frame.mask_key is not None else 0
    if n <= 125:
        header = struct.pack("!BB", b0, mask_bit | n)
    elif n <= 0xFFFF:
        header = struct.pack("!BBH", b0, mask_bit | 126, n)
    else:
        header = struct.pack("!BBQ", b0, mask_bit | 127, n)
    if frame.mask_key is not None:
        return header + frame.mask_key + apply_mask(payload, frame.mask_key)
    return header + payload


def decode_frame(data: bytes, max_payload: int = DEFAULT_MAX_PAYLOAD) -> tuple[Frame, int] | None:
    """Decode one frame from the front of ``data``.

    Returns ``(frame, consumed)`` or ``None`` when more bytes are needed.
    """
    return _decode_at(data, 0, max_payload)


def _decode_at(data, start: int, max_payload: int) -> tuple[Frame, int] | None:
    # returns (frame, absolute end offset)
    avail = len(data) - start
    if avail < 2:
        return None
    b0, b1 = data[start], data[start + 1]
    fin = bool(b0 & 0x80)
    rsv = (bool(b0 & 0x40), bool(b0 & 0x20), bool(b0 & 0x10))
    if any(rsv):
        raise ProtocolViolation("rsv bits set without a negotiated extension")
    op = b0 & 0x0F
    if op not in _OPCODES:
        raise ProtocolViolation(f"unknown opcode 0x{op:x}")
    opcode = Opcode(op)
    masked = bool(b1 & 0x80)
    n = b1 & 0x7F
    pos = 2
    if opcode.is_control:
        if not fin:
            raise ProtocolViolation("fragmented control frame")
        if n > MAX_CONTROL_PAYLOAD:
            raise ControlFrameTooLong(f"control frame payload length {n}")
    if n == 126:
        if avail < 4:
            return None
        (n,) = struct.unpack_from("!H", data, start + 2)
        if n <= 125:
            raise ProtocolViolation("non-minimal 16-bit length")
        pos = 4
    elif n == 127:
        if avail < 10:
            return None
        (n,) = struct.unpack_from("!Q", data, start + 2)
        if n >> 63:
            raise ProtocolViolation("64-bit length has its high bit set")
        if n <= 0xFFFF:
            raise ProtocolViolation("non-minimal 64-bit length")
        pos = 10
    if n > max_payload:
        raise MessageTooBig(f"payload of {n} bytes exceeds cap {max_payload}")
    pos += start
    mask_key = None
    if masked:
        if len(data) < pos + 4:
            return None
        mask_key = bytes(data[pos:pos + 4])
        pos += 4
    end = pos + n
    if len(data) < end:
        return None
    payload = bytes(data[pos:end])
    if mask_key is not None:
        payload = apply_mask(payload, mask_key)
    if opcode == Opcode.CLOSE and n == 1:
        raise ProtocolViolation("close payload must start with a 2-byte code")
    return Frame(opcode, payload, fin, rsv, mask_key), end


def fragment_message(msg: Message, max_fragment: int) -> list[Frame]:
    if max_fragment < 1:
        raise ValueError("max_fragment must be >= 1")
    data = msg.data
    chunks = [data[i:i + max_fragment] for i in range(0, len(data), max_fragment)] or [b""]
    last = len(chunks) - 1
    return [
        Frame(msg.kind if i == 0 else Opcode.CONTINUATION, chunk, fin=(i == last))
        for i, chunk in enumerate(chunks)
    ]


def reassemble(frames) -> Message:
    asm = MessageAssembler()
    out = None
    for f in frames:
        if out is not None:
            raise ProtocolViolation("frames continue after the final fragment")
        out = asm.add(f)
    if out is None:
        raise ProtocolViolation("message is missing its final fragment")
    return out


def close_payload(code: int, reason: str = "") -> bytes:
    return struct.pack("!H", code) + reason.encode("utf-8")


def parse_close(payload: bytes) -> tuple[int | None, str]:
    if not payload:
        return None, ""
    (code,) = struct.unpack_from("!H", payload)
    return code, payload[2:].decode("utf-8", "replace")


def new_mask_key(rng: random.Random) -> bytes:
    return rng.randbytes(4)


class MessageAssembler:
    """Collects data frames into messages.  Control frames are not accepted."""

    def __init__(self, max_message: int = DEFAULT_MAX_PAYLOAD):
        self.max_message = max_message
        self._kind: Opcode | None = None
        self._parts: list[bytes] = []
        self._size = 0

    def add(self, frame: Frame) -> Message | None:
        if frame.opcode.is_control:
            raise ValueError("control frames bypass the assembler")
        if frame.opcode == Opcode.CONTINUATION:
            if self._kind is None:
                raise ProtocolViolation("continuation frame without a started message")
        else:
            if self._kind is not None:
                raise ProtocolViolation("new data frame before the previous message finished")
            self._kind = frame.opcode
        self._size += len(frame.payload)
        if self._size > self.max_message:
            raise MessageTooBig(f"message exceeds {self.max_message} bytes")
        self._parts.append(frame.payload)
        if not frame.fin:
            return None
        data = b"".join(self._parts)
        kind = self._kind
        self._kind, self._parts, self._size = None, [], 0
        if kind == Opcode.TEXT:
            _check_utf8(data)
        return Message(kind, data)


class FrameParser:
    """Incremental frame splitter for a byte stream.

    ``require_mask`` enforces the direction rule: True on the server side
    (clients must mask), False on the client side (servers must not).
    """

    def __init__(self, require_mask: bool | None = None, max_payload: int = DEFAULT_MAX_PAYLOAD):
        self.require_mask = require_mask
        self.max_payload = max_payload
        self._buf = bytearray()

    def feed(self, data: bytes) -> Iterator[Frame]:
        self._buf += data
        buf = self._buf
        pos = 0
        try:
            while True:
                res = _decode_at(buf, pos, self.max_payload)
                if res is None:
                    break
                frame, pos = res
                if self.require_mask is not None and (frame.mask_key is not None) != self.require_mask:
                    raise ProtocolViolation(
                        "client frames must be masked" if self.require_mask
                        else "server frames must not be masked")
                yield frame
        finally:
            del buf[:pos]

    @property
    def buffered(self) -> int:
        return len(self._buf)
