"""WebSocket protocol stack, multi-process cluster server and benchmark harness."""

from .batch import Batcher, encode_envelope, unbatch
from .frame import Frame, Message, Opcode, decode_frame, encode_frame
from .handshake import compute_accept_key

__version__ = "0.1.0"

__all__ = [
    "Batcher", "Frame", "Message", "Opcode", "compute_accept_key", "decode_frame",
    "encode_envelope", "encode_frame", "unbatch",
]
