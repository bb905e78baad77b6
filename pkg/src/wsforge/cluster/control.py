"""Per-process control socket: one request line in, one reply line out.

Every cluster process answers ``PING`` with ``PONG`` and ``STATS`` with a JSON
object; ``SHUTDOWN <grace>`` makes it wind down and reply with final stats.
"""

from __future__ import annotations

import asyncio
import json
import socket


async def serve_control(handlers: dict, host: str = "127.0.0.1"):
    """Start the control server on an ephemeral port; returns ``(server, port)``."""

    async def on_client(reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                cmd, _, arg = line.decode("ascii", "replace").strip().partition(" ")
                fn = handlers.get(cmd.upper())
                if cmd.upper() == "PING":
                    reply = "PONG"
                elif fn is None:
                    reply = "-ERR"
                else:
                    reply = fn(arg)
                    if asyncio.iscoroutine(reply):
                        reply = await reply
                    if not isinstance(reply, str):
                        reply = json.dumps(reply, sort_keys=True)
                writer.write(reply.encode() + b"\n")
                await writer.drain()
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            writer.close()

    server = await asyncio.start_server(on_client, host, 0)
    return server, server.sockets[0].getsockname()[1]


def request(port: int, line: str, timeout: float = 5.0, host: str = "127.0.0.1") -> str:
    with socket.create_connection((host, port), timeout=timeout) as s:
        s.sendall(line.encode() + b"\n")
        buf = b""
        while not buf.endswith(b"\n"):
            chunk = s.recv(65536)
            if not chunk:
                break
            buf += chunk
    return buf.decode().strip()


def request_json(port: int, line: str, timeout: float = 5.0) -> dict:
    return json.loads(request(port, line, timeout))
