import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import header_bits, xor_mask
from wsforge.errors import ControlFrameTooLong, InvalidUtf8, ProtocolViolation
from wsforge.frame import (
    Frame, FrameParser, Message, MessageAssembler, Opcode, apply_mask, close_payload,
    decode_frame, encode_frame, fragment_message, frame_overhead, parse_close, reassemble,
)

BOUNDARIES = [0, 125, 126, 65535, 65536]


def test_empty_text_frame():
    assert encode_frame(Frame(Opcode.TEXT, b"")) == b"\x81\x00"
    frame, used = decode_frame(b"\x81\x00")
    assert frame == Frame(Opcode.TEXT, b"", fin=True)
    assert used == 2


def test_binary_126_header():
    wire = encode_frame(Frame(Opcode.BINARY, bytes(126)))
    assert wire[:4] == b"\x82\x7e\x00\x7e"
    assert len(wire) == 130


def test_masked_hello_world():
    wire = encode_frame(Frame(Opcode.TEXT, b"Hello, world!", mask_key=b"abcd"))
    assert len(wire) == 19


@pytest.mark.parametrize("n", BOUNDARIES)
@pytest.mark.parametrize("masked", [False, True])
def test_header_size_matches_oracle(n, masked):
    expected = header_bits(n, masked)
    key = b"\x01\x02\x03\x04" if masked else None
    wire = encode_frame(Frame(Opcode.BINARY, bytes(n), mask_key=key))
    assert len(wire) - n == expected
    assert frame_overhead(n, masked) == expected


@pytest.mark.parametrize("n,masked,expected", [(20, True, 6), (0, False, 2), (70000, True, 14)])
def test_frame_overhead_examples(n, masked, expected):
    assert frame_overhead(n, masked) == expected


def test_mask_examples():
    assert apply_mask(b"\xff" * 5, b"\x0f\x0f\x0f\x0f") == b"\xf0" * 5
    assert apply_mask(b"anything", b"\x00\x00\x00\x00") == b"anything"


@given(st.binary(max_size=300), st.binary(min_size=4, max_size=4))
def test_mask_matches_bytewise_oracle(payload, key):
    assert apply_mask(payload, key) == xor_mask(payload, key)
    assert apply_mask(apply_mask(payload, key), key) == payload


def test_control_frame_limits():
    with pytest.raises(ControlFrameTooLong):
        encode_frame(Frame(Opcode.PING, bytes(126)))
    with pytest.raises(ProtocolViolation):
        encode_frame(Frame(Opcode.PING, b"", fin=False))
    # 0x89 0x7e: ping claiming a 16-bit length
    with pytest.raises(ControlFrameTooLong):
        decode_frame(b"\x89\x7e\x00\x80" + bytes(128))
    with pytest.raises(ProtocolViolation):
        decode_frame(b"\x09\x00")


def test_invalid_utf8_single_text_frame():
    with pytest.raises(InvalidUtf8):
        encode_frame(Frame(Opcode.TEXT, b"\xff\xfe"))
    # non-final text fragments may split a code point
    encode_frame(Frame(Opcode.TEXT, "é".encode()[:1], fin=False))


@pytest.mark.parametrize("wire", [b"\xc1\x00", b"\x83\x00", b"\x8b\x00", b"\x88\x01\x03"])
def test_decode_rejects(wire):
    with pytest.raises(ProtocolViolation):
        decode_frame(wire)


def test_decode_rejects_non_minimal_lengths_and_cap():
    with pytest.raises(ProtocolViolation):
        decode_frame(b"\x82\x7e\x00\x05" + bytes(5))
    with pytest.raises(ProtocolViolation):
        decode_frame(b"\x82\x7f" + (100).to_bytes(8, "big"))
    with pytest.raises(ProtocolViolation):
        decode_frame(b"\x82\x7f" + (2**63).to_bytes(8, "big"))
    with pytest.raises(ProtocolViolation):
        decode_frame(encode_frame(Frame(Opcode.BINARY, bytes(200))), max_payload=100)


def frames():
    def build(op, payload, fin, key):
        if op.is_control:
            payload = payload[:125]
            fin = True
            if op == Opcode.CLOSE and len(payload) == 1:
                payload = b""
        if op == Opcode.TEXT and fin:
            payload = payload.decode("utf-8", "replace").encode("utf-8")
        return Frame(op, payload, fin, mask_key=key)

    return st.builds(
        build,
        st.sampled_from(list(Opcode)),
        st.binary(max_size=70000) | st.binary(max_size=200),
        st.booleans(),
        st.none() | st.binary(min_size=4, max_size=4),
    )


@settings(max_examples=300, deadline=None)
@given(frames())
def test_round_trip_and_prefixes(f):
    wire = encode_frame(f)
    assert decode_frame(wire) == (f, len(wire))
    # trailing bytes are never consumed
    assert decode_frame(wire + b"\x81\x00") == (f, len(wire))
    for cut in {1, len(wire) // 2, len(wire) - 1} - {0}:
        assert decode_frame(wire[:cut]) is None


def test_first_byte_is_need_more():
    assert decode_frame(b"\x82") is None
    assert decode_frame(b"") is None


def test_fragment_examples():
    one = fragment_message(Message(Opcode.TEXT, b"hello"), 10)
    assert len(one) == 1 and one[0].fin
    three = fragment_message(Message(Opcode.BINARY, bytes(range(10))), 4)
    assert [len(f.payload) for f in three] == [4, 4, 2]
    assert [f.opcode for f in three] == [Opcode.BINARY, Opcode.CONTINUATION, Opcode.CONTINUATION]
    assert [f.fin for f in three] == [False, False, True]


@given(st.sampled_from([Opcode.TEXT, Opcode.BINARY]), st.binary(max_size=2000), st.integers(1, 300))
def test_fragment_reassemble(kind, data, k):
    if kind == Opcode.TEXT:
        data = data.decode("utf-8", "replace").encode()
    msg = Message(kind, data)
    assert reassemble(fragment_message(msg, k)) == msg


def test_assembler_order_errors():
    asm = MessageAssembler()
    with pytest.raises(ProtocolViolation):
        asm.add(Frame(Opcode.CONTINUATION, b"x"))
    asm.add(Frame(Opcode.TEXT, b"a", fin=False))
    with pytest.raises(ProtocolViolation):
        asm.add(Frame(Opcode.BINARY, b"b"))


def test_assembler_utf8_across_fragments():
    data = "héllo".encode()
    msg = reassemble([Frame(Opcode.TEXT, data[:2], fin=False), Frame(Opcode.CONTINUATION, data[2:])])
    assert msg.text == "héllo"
    with pytest.raises(InvalidUtf8):
        reassemble([Frame(Opcode.TEXT, b"\xc3", fin=False), Frame(Opcode.CONTINUATION, b"(")])


def test_parser_streaming_byte_by_byte():
    rng = random.Random(7)
    sent = [Frame(Opcode.BINARY, rng.randbytes(rng.randrange(300)), mask_key=rng.randbytes(4))
            for _ in range(20)]
    wire = b"".join(encode_frame(f) for f in sent)
    parser = FrameParser(require_mask=True)
    got = []
    for i in range(len(wire)):
        got.extend(parser.feed(wire[i:i + 1]))
    assert got == sent
    assert parser.buffered == 0


def test_parser_enforces_mask_direction():
    with pytest.raises(ProtocolViolation):
        list(FrameParser(require_mask=True).feed(b"\x81\x00"))
    with pytest.raises(ProtocolViolation):
        list(FrameParser(require_mask=False).feed(encode_frame(Frame(Opcode.TEXT, mask_key=b"abcd"))))


def test_close_payload():
    assert parse_close(close_payload(1001, "bye")) == (1001, "bye")
    assert parse_close(b"") == (None, "")
