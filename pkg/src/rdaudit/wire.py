"""Length-prefixed JSON frames between client, server and auditor.

Frame layout::

    [4 bytes - payload length, big-endian]
    [N bytes - UTF-8 canonical JSON {"version", "kind", "body"}]

One request frame gets exactly one response frame.
"""

from __future__ import annotations

import json
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable

from .protocol import canonical_json

VERSION = 1
KINDS = ("challenge", "proof", "update_request", "update_proof", "root_sig", "ack", "error")
HEADER = struct.Struct("!I")
MAX_FRAME = 16 * 1024 * 1024
DEFAULT_TIMEOUT = 30.0


class WireError(ValueError):
    pass


@dataclass(frozen=True)
class WireMessage:
    kind: str
    body: dict = field(default_factory=dict)
    version: int = VERSION

    def encode(self) -> bytes:
        return canonical_json({"version": self.version, "kind": self.kind, "body": self.body})

    def frame(self) -> bytes:
        payload = self.encode()
        if len(payload) > MAX_FRAME:
            raise WireError(f"frame of {len(payload)} bytes exceeds {MAX_FRAME}")
        return HEADER.pack(len(payload)) + payload

    @classmethod
    def decode(cls, payload: bytes) -> "WireMessage":
        try:
            obj = json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise WireError(f"frame is not UTF-8 JSON: {exc}") from exc
        if not isinstance(obj, dict) or set(obj) != {"version", "kind", "body"}:
            raise WireError("frame must hold exactly version, kind and body")
        if obj["version"] != VERSION:
            raise WireError(f"unsupported version {obj['version']!r}; supported version is {VERSION}")
        if obj["kind"] not in KINDS:
            raise WireError(f"unknown message kind {obj['kind']!r}")
        if not isinstance(obj["body"], dict):
            raise WireError("message body must be an object")
        return cls(obj["kind"], obj["body"], obj["version"])


def error(message: str) -> WireMessage:
    return WireMessage("error", {"message": message})


def recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        buf.extend(chunk)
    return bytes(buf)


def read_frame(sock: socket.socket) -> bytes | None:
    """Return one frame payload, or None on clean EOF before a header."""
    first = sock.recv(HEADER.size)
    if not first:
        return None
    header = first + recv_exact(sock, HEADER.size - len(first)) if len(first) < HEADER.size else first
    (length,) = HEADER.unpack(header)
    if length > MAX_FRAME:
        raise WireError(f"frame of {length} bytes exceeds {MAX_FRAME}")
    return recv_exact(sock, length)


def send_message(sock: socket.socket, msg: WireMessage) -> None:
    sock.sendall(msg.frame())


Handler = Callable[[WireMessage], WireMessage]


def dispatch_payload(handler: Handler, payload: bytes) -> tuple[WireMessage, bool]:
    """Decode, handle and return (response, keep_open)."""
    try:
        msg = WireMessage.decode(payload)
    except WireError as exc:
        return error(str(exc)), False
    try:
        return handler(msg), True
    except Exception as exc:  # one bad request must not kill the server
        return error(f"{type(exc).__name__}: {exc}"), True


class InProcessTransport:
    """Round-trips every message through its byte encoding without a socket."""

    def __init__(self, handler: Handler):
        self.handler = handler
        self.transcript: list[bytes] = []

    def request(self, msg: WireMessage) -> WireMessage:
        frame = msg.frame()
        self.transcript.append(frame)
        response, _ = dispatch_payload(self.handler, frame[HEADER.size:])
        out = response.frame()
        self.transcript.append(out)
        return WireMessage.decode(out[HEADER.size:])


class SocketTransport:
    def __init__(self, host: str, port: int, timeout: float = DEFAULT_TIMEOUT):
        self.sock = socket.create_connection((host, port), timeout=timeout)

    def request(self, msg: WireMessage) -> WireMessage:
        send_message(self.sock, msg)
        payload = read_frame(self.sock)
        if payload is None:
            raise ConnectionError("server closed the connection")
        return WireMessage.decode(payload)

    def close(self) -> None:
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class _FrameHandler(socketserver.BaseRequestHandler):
    def handle(self):
        sock = self.request
        sock.settimeout(self.server.timeout_s)
        while True:
            try:
                payload = read_frame(sock)
            except WireError as exc:
                send_message(sock, error(str(exc)))
                return
            except (ConnectionError, OSError):
                return
            if payload is None:
                return
            response, keep_open = dispatch_payload(self.server.handler, payload)
            send_message(sock, response)
            if not keep_open:
                return


class FrameServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], handler: Handler, timeout: float = DEFAULT_TIMEOUT):
        super().__init__(address, _FrameHandler)
        self.handler = handler
        self.timeout_s = timeout

    def serve_in_thread(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t
