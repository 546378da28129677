import json
import socket
import struct

import pytest
from hypothesis import given, strategies as st

from rdaudit.harness import Harness, LogicalClock, tpa_audit
from rdaudit.protocol import AuditProof, canonical_json, gen_challenge, verify_proof
from rdaudit.wire import (
    KINDS,
    MAX_FRAME,
    VERSION,
    FrameServer,
    SocketTransport,
    WireError,
    WireMessage,
    dispatch_payload,
    read_frame,
)


def raw_frame(obj) -> bytes:
    payload = json.dumps(obj).encode()
    return struct.pack("!I", len(payload)) + payload


@pytest.fixture
def served():
    h = Harness(seed=11, clock=LogicalClock())
    h.upload("u", "f", b"wire" * 200)
    srv = FrameServer(("127.0.0.1", 0), h.server.handle, timeout=5)
    srv.serve_in_thread()
    yield h, srv.server_address[1]
    srv.shutdown()
    srv.server_close()


def exchange(port, data: bytes) -> list[WireMessage]:
    out = []
    with socket.create_connection(("127.0.0.1", port), timeout=5) as s:
        s.sendall(data)
        while True:
            payload = read_frame(s)
            if payload is None:
                break
            out.append(WireMessage.decode(payload))
    return out


json_bodies = st.dictionaries(
    st.text(max_size=6),
    st.recursive(st.none() | st.booleans() | st.integers() | st.text(max_size=6),
                 lambda c: st.lists(c, max_size=3), max_leaves=8),
    max_size=5)


@given(st.sampled_from(KINDS), json_bodies)
def test_encoding_is_deterministic(kind, body):
    a = WireMessage(kind, body).frame()
    b = WireMessage(kind, json.loads(json.dumps(body))).frame()
    assert a == b
    assert WireMessage.decode(a[4:]) == WireMessage(kind, body)


def test_decode_rejections():
    with pytest.raises(WireError, match="supported version is 1"):
        WireMessage.decode(canonical_json({"version": 99, "kind": "ack", "body": {}}))
    with pytest.raises(WireError, match="unknown message kind"):
        WireMessage.decode(canonical_json({"version": VERSION, "kind": "gossip", "body": {}}))
    for bad in (b"\xff\xfe", b"not json", b"[]", canonical_json({"version": 1, "kind": "ack"}),
                canonical_json({"version": 1, "kind": "ack", "body": []})):
        with pytest.raises(WireError):
            WireMessage.decode(bad)


def test_dispatch_closes_only_on_malformed_frames():
    def boom(msg):
        raise RuntimeError("handler failed")

    resp, keep = dispatch_payload(boom, WireMessage("ack").encode())
    assert resp.kind == "error" and keep and "handler failed" in resp.body["message"]
    resp, keep = dispatch_payload(boom, b"garbage")
    assert resp.kind == "error" and not keep


def test_oversize_frame_rejected():
    with pytest.raises(WireError):
        WireMessage("ack", {"x": "a" * (MAX_FRAME + 1)}).frame()


def test_loopback_challenge_proof_verify(served):
    h, port = served
    reg = h.tpa.registry[("u", "f")]
    ch = gen_challenge(h.tpa_rng, reg.n, 10, reg.file_id)
    with SocketTransport("127.0.0.1", port) as t:
        resp = t.request(WireMessage("challenge", ch.to_json()))
        assert resp.kind == "proof"
        assert verify_proof(reg.public_key, ch, AuditProof.from_json(resp.body))
        # the connection stays open for further requests
        result, ack = tpa_audit(h.tpa, t, "u", "f", 10, h.tpa_rng)
        assert result.accepted and ack.message == "data not modified"


def test_unknown_kind_over_socket(served):
    _, port = served
    replies = exchange(port, raw_frame({"version": 1, "kind": "gossip", "body": {}}))
    assert [r.kind for r in replies] == ["error"]


def test_version_99_over_socket(served):
    _, port = served
    replies = exchange(port, raw_frame({"version": 99, "kind": "challenge", "body": {}}))
    assert replies[0].kind == "error" and "supported version is 1" in replies[0].body["message"]


def test_malformed_frame_then_close(served):
    _, port = served
    data = struct.pack("!I", 5) + b"{{{{{" + WireMessage("ack").frame()
    replies = exchange(port, data)
    assert [r.kind for r in replies] == ["error"]  # second frame never answered


def test_oversize_header_over_socket(served):
    _, port = served
    replies = exchange(port, struct.pack("!I", MAX_FRAME + 1))
    assert replies[0].kind == "error" and "exceeds" in replies[0].body["message"]


def test_server_side_errors_keep_connection(served):
    h, port = served
    with SocketTransport("127.0.0.1", port) as t:
        bad = t.request(WireMessage("challenge", {"file_id": "nope", "pairs": [[0, "1"]], "nonce": "00"}))
        assert bad.kind == "error"
        assert t.request(WireMessage("proof", {})).kind == "error"
        reg = h.tpa.registry[("u", "f")]
        ch = gen_challenge(h.tpa_rng, reg.n, 3, reg.file_id)
        assert t.request(WireMessage("challenge", ch.to_json())).kind == "proof"


def test_remote_update_round_trip(served):
    h, port = served
    with SocketTransport("127.0.0.1", port) as t:
        from rdaudit.harness import client_update
        root = client_update(h.clients["u"], t, "f", "insert_after", 0, b"remote", h.tpa)
    assert h.server.lookup("u", "f").tree.root == root
    assert h.server.log.entries()[-1].action == "block_insert"
