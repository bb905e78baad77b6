"""Coalesce small application messages into one Binary WebSocket message.

Envelope layout: repeated ``[4-byte big-endian length][bytes]``.
"""

from __future__ import annotations

import struct
import time

from .errors import TrailingGarbage, TruncatedEnvelope
from .frame import Message, Opcode, frame_overhead

PREFIX = 4
MAX_ENTRY = 2**32 - 1


def encode_envelope(entries) -> bytes:
    out = bytearray()
    for e in entries:
        if len(e) > MAX_ENTRY:
            raise ValueError("entry does not fit a 4-byte length prefix")
        out += struct.pack("!I", len(e))
        out += e
    return bytes(out)


def unbatch(payload: bytes, count: int | None = None) -> list[bytes]:
    """Split an envelope back into its entries.

    With ``count`` the receiver states how many entries it expects; bytes left
    over after that many raise :class:`TrailingGarbage`.
    """
    entries = []
    pos, end = 0, len(payload)
    while pos < end and (count is None or len(entries) < count):
        if end - pos < PREFIX:
            raise TruncatedEnvelope(f"{end - pos} stray bytes where a length prefix should be")
        (n,) = struct.unpack_from("!I", payload, pos)
        pos += PREFIX
        if end - pos < n:
            raise TruncatedEnvelope(f"entry claims {n} bytes, {end - pos} left")
        entries.append(bytes(payload[pos:pos + n]))
        pos += n
    if pos != end:
        raise TrailingGarbage(f"{end - pos} bytes after entry {count}")
    if count is not None and len(entries) != count:
        raise TruncatedEnvelope(f"expected {count} entries, found {len(entries)}")
    return entries


def envelope_size(sizes) -> int:
    return sum(PREFIX + s for s in sizes)


def batching_savings(msg_sizes, masked: bool) -> int:
    """Wire bytes saved by sending ``msg_sizes`` as one envelope (may be negative)."""
    sizes = list(msg_sizes)
    if not sizes:
        raise ValueError("msg_sizes must be non-empty")
    individual = sum(frame_overhead(s, masked) + s for s in sizes)
    env = envelope_size(sizes)
    return individual - (frame_overhead(env, masked) + env)


class Batcher:
    """Per-connection queue that flushes on size or on age of the oldest entry.

    ``enqueue`` and ``poll`` return the flushed :class:`Message` when a flush
    happened, otherwise ``None``.  Single owner; not thread safe.
    """

    def __init__(self, flush_threshold: int = 1400, max_delay: float = 0.05,
                 masked: bool = False, clock=time.monotonic):
        self.flush_threshold = flush_threshold
        self.max_delay = max_delay
        self.masked = masked
        self.clock = clock
        self._entries: list[bytes] = []
        self._env_size = 0
        self._oldest: float | None = None

    def __len__(self):
        return len(self._entries)

    @property
    def pending_wire_size(self) -> int:
        if not self._entries:
            return 0
        return frame_overhead(self._env_size, self.masked) + self._env_size

    def enqueue(self, msg: bytes) -> Message | None:
        if len(msg) > MAX_ENTRY:
            raise ValueError("message does not fit a 4-byte length prefix")
        if not self._entries:
            self._oldest = self.clock()
        self._entries.append(bytes(msg))
        self._env_size += PREFIX + len(msg)
        if self.pending_wire_size >= self.flush_threshold or self.due():
            return self.flush()
        return None

    def due(self) -> bool:
        return self._oldest is not None and self.clock() - self._oldest >= self.max_delay

    def poll(self) -> Message | None:
        return self.flush() if self.due() else None

    def flush(self) -> Message | None:
        if not self._entries:
            return None
        msg = Message(Opcode.BINARY, encode_envelope(self._entries))
        self._entries, self._env_size, self._oldest = [], 0, None
        return msg
