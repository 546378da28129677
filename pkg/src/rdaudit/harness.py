"""Three-party simulation: data owner, cloud server and third-party auditor.

Audits and updates travel as ``WireMessage`` frames through a transport
(in-process by default, TCP via ``wire.SocketTransport``). Uploads and
downloads are bulk transfers and go through direct server calls.

The operation log lives on the server, which executes every operation; the
client mirrors entries from the acknowledgements it receives.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import io
import random
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .batch import DEFAULT_LAMBDA_BITS, BatchResult, BatchTask, PairingCache, batch_verify, draw_deltas
from .dynamics import (
    BlockAck,
    TrackedFile,
    UpdateProof,
    UpdateRejected,
    UpdateRequest,
    commit_update,
    exec_update,
    prepare_update,
    rollback_update,
    verify_block,
    verify_update,
)
from .merkle import AuthPath, verify_path
from .protocol import (
    SECTOR_BYTES,
    AuditProof,
    AuditResult,
    Block,
    BlockTag,
    Challenge,
    FileMetadata,
    Keypair,
    PublicKey,
    Reject,
    StoredFile,
    block_element,
    decode_file,
    encode_file,
    gen_challenge,
    gen_proof,
    keygen,
    leaf_digest,
    root_sig_valid,
    sig_gen,
    tag_is_valid,
    verify_proof,
)
from .wire import InProcessTransport, WireMessage

ACTIONS = ("upload", "download", "block_insert", "block_delete", "block_modify", "block_verify")
DISPLAY_ACTIONS = {
    "upload": "upload",
    "download": "Download",
    "block_insert": "Block insertion",
    "block_delete": "Delete Block",
    "block_modify": "Block modification",
    "block_verify": "Block verification",
}
OP_ACTIONS = {"insert_after": "block_insert", "delete": "block_delete", "modify": "block_modify"}
CSV_HEADER = ("UserName", "Action", "File Name", "Date", "Time")
DATE_FMT = "%Y-%m-%d"
TIME_FMT = "%H:%M:%S"


class HarnessError(Exception):
    pass


class IntegrityError(HarnessError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


# -- log ----------------------------------------------------------------------


@dataclass(frozen=True)
class LogEntry:
    user_name: str
    action: str
    file_name: str
    date: str
    time: str

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"unknown log action {self.action!r}")
        dt.datetime.strptime(f"{self.date} {self.time}", f"{DATE_FMT} {TIME_FMT}")

    @classmethod
    def at(cls, user: str, action: str, file_name: str, when: dt.datetime) -> "LogEntry":
        return cls(user, action, file_name, when.strftime(DATE_FMT), when.strftime(TIME_FMT))

    def row(self) -> tuple[str, ...]:
        return (self.user_name, self.action, self.file_name, self.date, self.time)

    def display_row(self) -> tuple[str, ...]:
        return (self.user_name, DISPLAY_ACTIONS[self.action], self.file_name, self.date, self.time)

    def to_json(self) -> dict:
        return dict(zip(("user_name", "action", "file_name", "date", "time"), self.row()))


class OperationLog:
    """Append-only, time-ordered operation history."""

    def __init__(self, entries=()):
        self._entries: list[LogEntry] = []
        self._lock = threading.Lock()
        for e in entries:
            self.append(e)

    def append(self, entry: LogEntry) -> LogEntry:
        with self._lock:
            if self._entries and (entry.date, entry.time) < (self._entries[-1].date, self._entries[-1].time):
                raise ValueError("log entries must be appended in time order")
            self._entries.append(entry)
        return entry

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(list(self._entries))

    def entries(self, file_name: str | None = None, user: str | None = None) -> list[LogEntry]:
        return [
            e for e in self._entries
            if (file_name is None or e.file_name == file_name) and (user is None or e.user_name == user)
        ]

    def to_csv(self, entries=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for e in self._entries if entries is None else entries:
            w.writerow(e.row())
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "OperationLog":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != CSV_HEADER:
            raise ValueError("log CSV header mismatch")
        return cls(LogEntry(*r) for r in rows[1:] if r)

    def render_table(self, entries=None) -> str:
        rows = [CSV_HEADER] + [e.display_row() for e in (self._entries if entries is None else entries)]
        widths = [max(len(r[i]) for r in rows) for i in range(len(CSV_HEADER))]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows) + "\n"


# -- clocks -------------------------------------------------------------------


class LogicalClock:
    """Deterministic clock: each reading advances it by ``step`` seconds."""

    def __init__(self, start: dt.datetime | None = None, step: float = 1.0):
        self.current = start or dt.datetime(2014, 1, 22, 12, 0, 0)
        self.step = dt.timedelta(seconds=step)
        self._lock = threading.Lock()

    def set(self, when: dt.datetime) -> None:
        with self._lock:
            self.current = when

    def now(self) -> dt.datetime:
        with self._lock:
            value = self.current
            self.current = value + self.step
        return value


class WallClock:
    def now(self) -> dt.datetime:
        return dt.datetime.now().replace(microsecond=0)


# -- parties ------------------------------------------------------------------


@dataclass(frozen=True)
class Acknowledgement:
    file_name: str
    verdict: str
    message: str
    at: str

    def to_json(self) -> dict:
        return {"file_name": self.file_name, "verdict": self.verdict, "message": self.message, "at": self.at}


ACK_NOT_MODIFIED = "data not modified"
ACK_MODIFIED = "data modified"


@dataclass
class ClientState:
    name: str
    keypair: Keypair
    public_key: PublicKey
    files: dict[str, TrackedFile] = field(default_factory=dict)
    acks: list[Acknowledgement] = field(default_factory=list)
    log: list[LogEntry] = field(default_factory=list)
    sector_bytes: int = SECTOR_BYTES
    rng: random.Random = field(default_factory=random.SystemRandom, repr=False)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "keypair": self.keypair.to_json(),
            "public_key": self.public_key.to_json(),
            "sector_bytes": self.sector_bytes,
            "files": {k: f.to_json() for k, f in sorted(self.files.items())},
            "acks": [a.to_json() for a in self.acks],
            "log": [e.to_json() for e in self.log],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ClientState":
        pk = PublicKey.from_json(obj["public_key"])
        return cls(
            obj["name"], Keypair.from_json(obj["keypair"]), pk,
            {k: TrackedFile.from_json(v, pk.suite) for k, v in obj["files"].items()},
            [Acknowledgement(**a) for a in obj.get("acks", [])],
            [LogEntry(**e) for e in obj.get("log", [])],
            obj.get("sector_bytes", SECTOR_BYTES),
        )


def new_client(name: str, rng: random.Random, s: int = 1, sector_bytes: int = SECTOR_BYTES,
               suite=None) -> ClientState:
    kp, pk = keygen(rng, s, suite)
    return ClientState(name, kp, pk, sector_bytes=sector_bytes, rng=rng)


@dataclass
class AuditRecord:
    user: str
    file_name: str
    file_id: str
    c: int
    verdict: str
    reason: str | None
    at: str

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Registration:
    public_key: PublicKey
    file_id: str
    n: int


@dataclass
class TpaState:
    registry: dict[tuple[str, str], Registration] = field(default_factory=dict)
    records: list[AuditRecord] = field(default_factory=list)
    cache: PairingCache = field(default_factory=PairingCache, repr=False)

    def register(self, user: str, file_name: str, pk: PublicKey, file_id: str, n: int) -> None:
        self.registry[(user, file_name)] = Registration(pk, file_id, n)

    def to_json(self) -> dict:
        return {
            "registry": [
                {"user": u, "file_name": f, "public_key": r.public_key.to_json(), "file_id": r.file_id, "n": r.n}
                for (u, f), r in sorted(self.registry.items())
            ],
            "records": [r.to_json() for r in self.records],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TpaState":
        tpa = cls()
        for r in obj["registry"]:
            tpa.register(r["user"], r["file_name"], PublicKey.from_json(r["public_key"]), r["file_id"], r["n"])
        tpa.records = [AuditRecord(**r) for r in obj.get("records", [])]
        return tpa


class ServerState:
    """Cloud server: holds files and answers wire requests.

    Updates to one file are serialized by a per-file lock; audits on a file
    with an uncommitted update are refused until it commits or rolls back.
    """

    def __init__(self, clock=None, rng: random.Random | None = None, test_mode: bool = False):
        self.files: dict[str, StoredFile] = {}
        self.names: dict[tuple[str, str], str] = {}
        self.log = OperationLog()
        self.clock = clock or WallClock()
        self.rng = rng or random.SystemRandom()
        self.test_mode = test_mode
        self.update_tamper = None  # test hook: UpdateProof -> UpdateProof
        self._locks: dict[str, threading.RLock] = {}
        self._guard = threading.Lock()
        self._record_lock = threading.Lock()

    def lock(self, file_id: str) -> threading.RLock:
        with self._guard:
            return self._locks.setdefault(file_id, threading.RLock())

    def lookup(self, user: str, file_name: str) -> StoredFile:
        try:
            return self.files[self.names[(user, file_name)]]
        except KeyError:
            raise HarnessError(f"no file {file_name!r} for user {user!r}") from None

    def record(self, user: str, action: str, file_name: str) -> LogEntry:
        # read the clock and append under one lock so entries stay time ordered
        with self._record_lock:
            return self.log.append(LogEntry.at(user, action, file_name, self.clock.now()))

    # bulk transfers

    def accept_upload(self, user: str, file_name: str, pk: PublicKey, blocks: list[Block],
                      tags: list[BlockTag], meta: FileMetadata) -> LogEntry:
        if (user, file_name) in self.names:
            raise HarnessError(f"{user!r} already stored {file_name!r}")
        if len(blocks) != len(tags) or meta.n != len(blocks) or meta.manifest != tuple(b.uid for b in blocks):
            raise HarnessError("upload metadata does not match the blocks")
        for i, (b, t) in enumerate(zip(blocks, tags)):
            if not tag_is_valid(pk, b, t):
                raise HarnessError(f"upload rejected: tag {i} does not verify")
        stored = StoredFile.from_upload(pk, blocks, tags, meta, owner=user, name=file_name)
        if stored.tree.root != meta.root:
            raise HarnessError("upload rejected: root does not match the blocks")
        if not root_sig_valid(pk, meta.root, meta.root_sig):
            raise HarnessError("upload rejected: root signature does not verify")
        with self._guard:
            self.files[meta.file_id] = stored
            self.names[(user, file_name)] = meta.file_id
        return self.record(user, "upload", file_name)

    def serve_download(self, user: str, file_name: str) -> tuple[list[Block], list[AuthPath]]:
        stored = self.lookup(user, file_name)
        with self.lock(stored.file_id):
            blocks = [stored.block(i) for i in range(stored.n)]
            paths = [stored.tree.path(i) for i in range(stored.n)]
        return blocks, paths

    def corrupt_block(self, user: str, file_name: str, index: int, bit: int) -> None:
        if not self.test_mode:
            raise HarnessError("corruption requires test mode")
        stored = self.lookup(user, file_name)
        if not 0 <= index < stored.n:
            raise IndexError(f"block index {index} out of range")
        uid = stored.manifest[index]
        data = bytearray(stored.blocks[uid])
        if not 0 <= bit < 8 * len(data):
            raise IndexError(f"bit {bit} out of range for a {len(data)}-byte block")
        data[bit // 8] ^= 1 << (bit % 8)
        stored.blocks[uid] = bytes(data)

    # wire requests

    def handle(self, msg: WireMessage) -> WireMessage:
        body = msg.body
        if msg.kind == "challenge":
            ch = Challenge.from_json(body)
            stored = self._get(ch.file_id)
            with self.lock(stored.file_id):
                if stored.pending is not None:
                    raise HarnessError("file has an uncommitted update")
                pf = gen_proof(stored, ch, self.rng.randbytes(32))
            return WireMessage("proof", pf.to_json())
        if msg.kind == "update_request":
            req = UpdateRequest.from_json(body)
            stored = self._get(req.file_id)
            lk = self.lock(stored.file_id)
            with lk:
                proof = exec_update(stored, req)
            if self.update_tamper is not None:
                proof = self.update_tamper(proof)
            return WireMessage("update_proof", proof.to_json())
        if msg.kind == "root_sig":
            stored = self._get(body["file_id"])
            with self.lock(stored.file_id):
                if body.get("root_sig") is None:
                    rollback_update(stored)
                    return WireMessage("ack", {"file_id": stored.file_id, "committed": False})
                op = stored.pending.request.op if stored.pending else None
                commit_update(stored, stored.pk.suite.decode_group(body["root_sig"]))
            entry = self.record(stored.owner, OP_ACTIONS[op], stored.name)
            return WireMessage("ack", {"file_id": stored.file_id, "committed": True, "log": entry.to_json()})
        raise HarnessError(f"server does not accept {msg.kind!r} requests")

    def _get(self, file_id: str) -> StoredFile:
        try:
            return self.files[file_id]
        except KeyError:
            raise HarnessError(f"unknown file {file_id}") from None


def _expect(resp: WireMessage, kind: str) -> dict:
    if resp.kind == "error":
        raise HarnessError(resp.body.get("message", "server error"))
    if resp.kind != kind:
        raise HarnessError(f"expected {kind!r} reply, got {resp.kind!r}")
    return resp.body


def _file_id(user: str, file_name: str, nonce: bytes) -> str:
    return hashlib.sha256(b"\x00".join([user.encode(), file_name.encode(), nonce])).hexdigest()[:32]


# -- operations ---------------------------------------------------------------


def client_upload(client: ClientState, server: ServerState, file_name: str, data: bytes,
                  tpa: TpaState | None = None) -> FileMetadata:
    if file_name in client.files:
        raise HarnessError(f"{file_name!r} already uploaded")
    file_id = _file_id(client.name, file_name, client.rng.randbytes(16))
    blocks = encode_file(data, client.public_key.s, client.sector_bytes, rng=client.rng)
    tags, tree, meta = sig_gen(client.keypair, client.public_key, blocks, file_id)
    entry = server.accept_upload(client.name, file_name, client.public_key, blocks, tags, meta)
    # blocks are dropped here; only the signed root is tracked
    client.files[file_name] = TrackedFile(file_id, file_name, meta.root, meta.root_sig, meta.n)
    client.log.append(entry)
    if tpa is not None:
        tpa.register(client.name, file_name, client.public_key, file_id, meta.n)
    return meta


def client_download(client: ClientState, server: ServerState, file_name: str) -> bytes:
    tracked = _tracked(client, file_name)
    blocks, paths = server.serve_download(client.name, file_name)
    if len(blocks) != tracked.n:
        raise IntegrityError(f"server returned {len(blocks)} blocks, expected {tracked.n}")
    suite = client.public_key.suite
    for i, (b, p) in enumerate(zip(blocks, paths)):
        leaf = leaf_digest(block_element(suite, b))
        if p.leaf_index != i or not verify_path(tracked.root, leaf, p):
            raise IntegrityError(f"block {i} fails verification against the signed root", index=i)
    data = decode_file(blocks, strict=tracked.revision == 0)
    client.log.append(server.record(client.name, "download", file_name))
    return data


def client_update(client: ClientState, transport, file_name: str, op: str, index: int,
                  data: bytes | None = None, tpa: TpaState | None = None) -> bytes:
    tracked = _tracked(client, file_name)
    req = prepare_update(client.keypair, client.public_key, tracked.file_id, op, index, data,
                         n=tracked.n, sector_bytes=client.sector_bytes, rng=client.rng)
    body = _expect(transport.request(WireMessage("update_request", req.to_json())), "update_proof")
    suite = client.public_key.suite
    try:
        proof = UpdateProof.from_json(body, suite)
        sig = verify_update(client.public_key, client.keypair, tracked, req, proof)
    except UpdateRejected:
        transport.request(WireMessage("root_sig", {"file_id": tracked.file_id, "root_sig": None}))
        raise
    except (KeyError, TypeError, ValueError) as exc:
        transport.request(WireMessage("root_sig", {"file_id": tracked.file_id, "root_sig": None}))
        raise UpdateRejected("bad_path", f"malformed update proof: {exc}") from exc
    ack = _expect(transport.request(WireMessage("root_sig", {"file_id": tracked.file_id,
                                                             "root_sig": sig.encode()})), "ack")
    if ack.get("log"):
        client.log.append(LogEntry(**ack["log"]))
    if tpa is not None:
        tpa.register(client.name, file_name, client.public_key, tracked.file_id, tracked.n)
    return tracked.root


def _tracked(client: ClientState, file_name: str) -> TrackedFile:
    try:
        return client.files[file_name]
    except KeyError:
        raise HarnessError(f"{client.name!r} has no file {file_name!r}") from None


def _deliver(client: ClientState | None, file_name: str, accepted: bool, when: dt.datetime) -> Acknowledgement:
    ack = Acknowledgement(file_name, "not_modified" if accepted else "modified",
                          ACK_NOT_MODIFIED if accepted else ACK_MODIFIED,
                          when.strftime(f"{DATE_FMT} {TIME_FMT}"))
    if client is not None:
        client.acks.append(ack)
    return ack


def tpa_challenge(tpa: TpaState, user: str, file_name: str, c: int, rng: random.Random) -> tuple[Registration, Challenge]:
    try:
        reg = tpa.registry[(user, file_name)]
    except KeyError:
        raise HarnessError(f"{file_name!r} of {user!r} is not registered with the auditor") from None
    if reg.n == 0:
        raise HarnessError(f"{file_name!r} of {user!r} has no blocks to audit")
    return reg, gen_challenge(rng, reg.n, min(c, reg.n), reg.file_id, reg.public_key.suite)


def tpa_audit(tpa: TpaState, transport, user: str, file_name: str, c: int,
              rng: random.Random | None = None, client: ClientState | None = None,
              clock=None) -> tuple[AuditResult, Acknowledgement]:
    """Challenge the server, verify its proof, record the result and notify the owner."""
    rng = rng or random.SystemRandom()
    clock = clock or WallClock()
    reg, ch = tpa_challenge(tpa, user, file_name, c, rng)
    resp = transport.request(WireMessage("challenge", ch.to_json()))
    if resp.kind == "proof":
        try:
            pf = AuditProof.from_json(resp.body, reg.public_key.suite)
            result = verify_proof(reg.public_key, ch, pf)
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            result = AuditResult(False, Reject.MALFORMED, 0, str(exc))
    else:
        result = AuditResult(False, Reject.MALFORMED, 0, resp.body.get("message", "no proof"))
    when = clock.now()
    tpa.records.append(AuditRecord(user, file_name, reg.file_id, len(ch.pairs),
                                   "accept" if result else "reject",
                                   result.reason.value if result.reason else None,
                                   when.strftime(f"{DATE_FMT} {TIME_FMT}")))
    return result, _deliver(client, file_name, result.accepted, when)


def tpa_batch_audit(tpa: TpaState, transport, targets: list[tuple[str, str]], c: int,
                    rng: random.Random | None = None, lambda_bits: int = DEFAULT_LAMBDA_BITS) -> BatchResult:
    rng = rng or random.SystemRandom()
    entries = []
    for user, file_name in targets:
        reg, ch = tpa_challenge(tpa, user, file_name, c, rng)
        body = _expect(transport.request(WireMessage("challenge", ch.to_json())), "proof")
        entries.append((reg.public_key, ch, AuditProof.from_json(body, reg.public_key.suite)))
    task = BatchTask(entries, draw_deltas(rng, len(entries), lambda_bits), lambda_bits)
    return batch_verify(task, tpa.cache)


def block_verify(server: ServerState, user: str, file_name: str, index: int,
                 rng: random.Random | None = None, client: ClientState | None = None) -> BlockAck:
    stored = server.lookup(user, file_name)
    with server.lock(stored.file_id):
        ack = verify_block(stored.pk, stored, index, server.rng.randbytes(32), rng, server.clock.now())
    entry = server.record(user, "block_verify", file_name)
    if client is not None:
        client.log.append(entry)
        _deliver(client, file_name, ack.verdict == "not_modified",
                 dt.datetime.strptime(ack.audited_at, f"{DATE_FMT} {TIME_FMT}"))
    return ack


def detection_probability(n: int, corrupted: int, c: int) -> float:
    """Chance that a size-``c`` sample without replacement hits a corrupted block."""
    if not 0 <= corrupted <= n or not 1 <= c <= n:
        raise ValueError("need 0 <= corrupted <= n and 1 <= c <= n")
    if corrupted == 0:
        return 0.0
    if c > n - corrupted:
        return 1.0
    miss = 1.0
    for k in range(c):
        miss *= (n - corrupted - k) / (n - k)
    return 1.0 - miss


# -- deterministic session ----------------------------------------------------


class Harness:
    """All three parties wired together with one seed and one clock."""

    def __init__(self, seed: int | None = None, clock=None, test_mode: bool = True,
                 sectors: int = 1, sector_bytes: int = SECTOR_BYTES):
        self.rng = random.Random(seed) if seed is not None else random.SystemRandom()
        self.clock = clock or LogicalClock()
        self.server = ServerState(self.clock, self._child_rng(), test_mode)
        self.tpa = TpaState()
        self.tpa_rng = self._child_rng()
        self.clients: dict[str, ClientState] = {}
        self.transport = InProcessTransport(self.server.handle)
        self.sectors = sectors
        self.sector_bytes = sector_bytes

    def _child_rng(self) -> random.Random:
        if isinstance(self.rng, random.SystemRandom):
            return random.SystemRandom()
        return random.Random(self.rng.getrandbits(64))

    def user(self, name: str, sectors: int | None = None) -> ClientState:
        if name not in self.clients:
            self.clients[name] = new_client(name, self._child_rng(), sectors or self.sectors, self.sector_bytes)
        return self.clients[name]

    def upload(self, user: str, file_name: str, data: bytes) -> FileMetadata:
        return client_upload(self.user(user), self.server, file_name, data, self.tpa)

    def download(self, user: str, file_name: str) -> bytes:
        return client_download(self.user(user), self.server, file_name)

    def update(self, user: str, file_name: str, op: str, index: int, data: bytes | None = None) -> bytes:
        return client_update(self.user(user), self.transport, file_name, op, index, data, self.tpa)

    def audit(self, user: str, file_name: str, c: int, rng: random.Random | None = None):
        return tpa_audit(self.tpa, self.transport, user, file_name, c, rng or self.tpa_rng,
                         self.clients.get(user), self.clock)

    def batch_audit(self, targets, c: int, lambda_bits: int = DEFAULT_LAMBDA_BITS) -> BatchResult:
        return tpa_batch_audit(self.tpa, self.transport, targets, c, self.tpa_rng, lambda_bits)

    def verify_block(self, user: str, file_name: str, index: int) -> BlockAck:
        return block_verify(self.server, user, file_name, index, self.tpa_rng, self.clients.get(user))

    def corrupt(self, user: str, file_name: str, index: int, bit: int) -> None:
        self.server.corrupt_block(user, file_name, index, bit)

    def audit_concurrently(self, jobs: list[tuple[str, str, int]], workers: int = 4):
        """Run several audits in parallel; each job gets its own seeded RNG."""
        seeds = [self.tpa_rng.getrandbits(64) for _ in jobs]

        def run(job_seed):
            (user, name, c), s = job_seed
            return tpa_audit(self.tpa, self.transport, user, name, c, random.Random(s),
                             self.clients.get(user), self.clock)[0]

        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(run, zip(jobs, seeds)))
