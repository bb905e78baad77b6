"""Helpers for tests that start real servers on loopback."""

import random
import socket

from wsforge.cluster import ClusterConfig


def _free(port):
    with socket.socket() as s:
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            s.bind(("127.0.0.1", port))
        except OSError:
            return False
    return True


def free_block(n, rng=random.Random()):
    """First port of ``n`` consecutive free ports."""
    for _ in range(200):
        base = rng.randrange(20000, 60000 - n)
        if all(_free(base + i) for i in range(n)):
            return base
    raise RuntimeError("no free port block")


def cluster_config(n_workers=1, **kw):
    base = free_block(n_workers + 2)
    return ClusterConfig(public_port=base, store_port=base + 1, worker_base_port=base + 2,
                         n_workers=n_workers, **kw)


class RawClient:
    """Bare asyncio-streams WebSocket client built from the package's wire primitives."""

    def __init__(self, reader, writer, leftover=b""):
        from wsforge.frame import FrameParser

        self.reader, self.writer = reader, writer
        self.parser = FrameParser(require_mask=False, max_payload=1 << 26)
        self.frames = []
        self._leftover = leftover
        self.rng = random.Random(7)

    @classmethod
    async def connect(cls, port, path="/"):
        import asyncio

        from wsforge.handshake import build_request, new_client_key, validate_response

        reader, writer = await asyncio.open_connection("127.0.0.1", port)
        key = new_client_key(random.Random(port))
        writer.write(build_request(f"127.0.0.1:{port}", key, path))
        buf = b""
        while True:
            res = validate_response(buf, key)
            if res is not None:
                break
            chunk = await reader.read(4096)
            if not chunk:
                raise ConnectionError("closed during handshake")
            buf += chunk
        return cls(reader, writer, buf[res[1]:])

    def send(self, opcode, payload):
        from wsforge.frame import Frame, encode_frame

        self.writer.write(encode_frame(Frame(opcode, payload, mask_key=self.rng.randbytes(4))))

    def send_json(self, obj):
        import json

        from wsforge.frame import Opcode

        self.send(Opcode.TEXT, json.dumps(obj).encode())

    async def recv(self, timeout=5.0):
        """Next frame from the server, or None at EOF."""
        import asyncio

        while not self.frames:
            data, self._leftover = self._leftover, b""
            if not data:
                data = await asyncio.wait_for(self.reader.read(65536), timeout)
                if not data:
                    return None
            self.frames.extend(self.parser.feed(data))
        return self.frames.pop(0)

    async def close(self, code=1000):
        from wsforge.frame import Opcode, close_payload

        self.send(Opcode.CLOSE, close_payload(code))
        try:
            while (await self.recv(2.0)) is not None:
                pass
        except Exception:
            pass
        self.writer.close()
