import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import accept_key
from wsforge.errors import BadAccept, BadStatus, InvalidKey, MalformedHttp, NotAnUpgrade
from wsforge.handshake import (
    build_request, build_response, compute_accept_key, new_client_key,
    parse_upgrade_request, validate_response,
)

# Request block from the protocol walkthrough, with the RFC key added.
PAPER_REQUEST = (
    b"GET ws://websocket.example.com/ HTTP/1.1\r\n"
    b"Origin: http://example.com\r\n"
    b"Connection: Upgrade\r\n"
    b"Host: websocket.example.com\r\n"
    b"Upgrade: websocket\r\n"
    b"Sec-WebSocket-Key: dGhlIHNhbXBsZSBub25jZQ==\r\n"
    b"\r\n"
)

GOLDEN_RESPONSE = (
    b"HTTP/1.1 101 Switching Protocols\r\n"
    b"Upgrade: websocket\r\n"
    b"Connection: Upgrade\r\n"
    b"Sec-WebSocket-Accept: s3pPLMBiTxaQ9kYGzzhZRbK+xOo=\r\n"
    b"\r\n"
)


def test_paper_request_parses():
    req, used = parse_upgrade_request(PAPER_REQUEST)
    assert used == len(PAPER_REQUEST)
    assert req.origin == "http://example.com"
    assert req.target == "/"
    assert req.key == "dGhlIHNhbXBsZSBub25jZQ=="
    assert req.headers.get("host") == "websocket.example.com"


def test_golden_response_bytes():
    req, _ = parse_upgrade_request(PAPER_REQUEST)
    assert build_response(req) == GOLDEN_RESPONSE


def test_prefix_is_need_more():
    assert parse_upgrade_request(PAPER_REQUEST[:-2]) is None
    for cut in range(len(PAPER_REQUEST)):
        assert parse_upgrade_request(PAPER_REQUEST[:cut]) is None


@pytest.mark.parametrize("cut", [1, 17, 60, 120])
def test_split_feed_matches_single(cut):
    buf = bytearray(PAPER_REQUEST[:cut])
    assert parse_upgrade_request(buf) is None
    buf += PAPER_REQUEST[cut:]
    assert parse_upgrade_request(bytes(buf)) == parse_upgrade_request(PAPER_REQUEST)


def test_not_an_upgrade():
    with pytest.raises(NotAnUpgrade) as info:
        parse_upgrade_request(b"GET / HTTP/1.1\r\nHost: x\r\n\r\n")
    assert info.value.request.path == "/"
    assert info.value.consumed == len(b"GET / HTTP/1.1\r\nHost: x\r\n\r\n")


def test_case_insensitive_and_duplicate_tokens():
    raw = (b"GET /chat HTTP/1.1\r\nhost: h\r\nUPGRADE: WebSocket\r\n"
           b"connection: keep-alive, upgrade\r\nConnection: Upgrade\r\nX-Odd: 1\r\n"
           b"sec-websocket-key: dGhlIHNhbXBsZSBub25jZQ==\r\n\r\n")
    req, _ = parse_upgrade_request(raw)
    assert req.target == "/chat"
    assert req.headers.get("X-Odd") == "1"


@pytest.mark.parametrize("raw", [
    b"GARBAGE\r\n\r\n",
    b"GET / HTTP/1.1\r\nno colon here\r\n\r\n",
    b"GET / HTTP/1.1\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n\r\n",
    b"GET / HTTP/1.1\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Key: c2hvcnQ=\r\n\r\n",
])
def test_malformed(raw):
    with pytest.raises(MalformedHttp):
        parse_upgrade_request(raw)


def test_size_caps():
    with pytest.raises(MalformedHttp):
        parse_upgrade_request(b"GET /" + b"a" * 9000)
    with pytest.raises(MalformedHttp):
        parse_upgrade_request(b"GET / HTTP/1.1\r\n" + b"X: y\r\n" * 12000)


def test_accept_key_vector():
    assert compute_accept_key("dGhlIHNhbXBsZSBub25jZQ==") == "s3pPLMBiTxaQ9kYGzzhZRbK+xOo="
    assert compute_accept_key("dGhlIHNhbXBsZSBub25jZQ==") == compute_accept_key("dGhlIHNhbXBsZSBub25jZQ==")


def test_accept_key_random_vs_oracle():
    rng = random.Random(1234)
    for _ in range(100):
        key = new_client_key(rng)
        assert compute_accept_key(key) == accept_key(key)


@pytest.mark.parametrize("bad", ["", "not base64!", "c2hvcnQ="])
def test_invalid_key(bad):
    with pytest.raises(InvalidKey):
        compute_accept_key(bad)


def test_client_server_round_trip():
    key = new_client_key(random.Random(5))
    req, _ = parse_upgrade_request(build_request("localhost:8000", key, origin="http://x"))
    resp_bytes = build_response(req)
    resp, used = validate_response(resp_bytes + b"\x81\x00", key)
    assert used == len(resp_bytes)
    assert resp.status == 101


def test_validate_bad_status():
    with pytest.raises(BadStatus):
        validate_response(b"HTTP/1.1 200 OK\r\nContent-Length: 2\r\n\r\nhi", "dGhlIHNhbXBsZSBub25jZQ==")


@given(st.integers(0, 27), st.integers(1, 255))
def test_validate_flipped_accept(pos, delta):
    accept = "s3pPLMBiTxaQ9kYGzzhZRbK+xOo="
    chars = list(accept)
    alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/"
    chars[pos] = alphabet[(alphabet.index(chars[pos]) + delta) % 64] if chars[pos] in alphabet else "A"
    mutated = "".join(chars)
    if mutated == accept:
        return
    raw = GOLDEN_RESPONSE.replace(accept.encode(), mutated.encode())
    with pytest.raises(BadAccept):
        validate_response(raw, "dGhlIHNhbXBsZSBub25jZQ==")


def test_validate_missing_upgrade_and_prefix():
    with pytest.raises(MalformedHttp):
        validate_response(b"HTTP/1.1 101 Switching Protocols\r\n\r\n", "dGhlIHNhbXBsZSBub25jZQ==")
    assert validate_response(GOLDEN_RESPONSE[:-1], "dGhlIHNhbXBsZSBub25jZQ==") is None
    with pytest.raises(MalformedHttp):
        validate_response(b"SPDY nonsense\r\n\r\n", "dGhlIHNhbXBsZSBub25jZQ==")
