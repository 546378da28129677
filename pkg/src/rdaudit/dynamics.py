"""Block-level modify / insert / delete with client-verified root updates.

The server applies an update provisionally and returns the evidence the
client needs (old leaf, its path, and the claimed new root). The client
recomputes the new root from that path alone, signs it, and the server commits
only once the signature arrives. Anything else rolls the file back.
"""

from __future__ import annotations

import datetime as _dt
import random
from dataclasses import dataclass

from .group import get_suite
from .merkle import EMPTY_ROOT, AuthPath, apply_update, verify_path
from .protocol import (
    SECTOR_BYTES,
    Block,
    BlockTag,
    Challenge,
    Keypair,
    PublicKey,
    StoredFile,
    _new_uid,
    block_element,
    gen_proof,
    leaf_digest,
    root_sig_valid,
    sign_root,
    tag_block,
    tag_is_valid,
    verify_proof,
)

OPS = ("modify", "insert_after", "delete")


class UpdateRejected(Exception):
    """Client-side rejection of a server's update proof."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


class UpdateError(ValueError):
    """Bad update request: unknown op, bad index, missing or superfluous payload."""


@dataclass
class TrackedFile:
    """What a client remembers about a file after dropping its blocks."""

    file_id: str
    name: str
    root: bytes
    root_sig: object
    n: int
    revision: int = 0

    def to_json(self) -> dict:
        return {
            "file_id": self.file_id,
            "name": self.name,
            "root": self.root.hex(),
            "root_sig": self.root_sig.encode(),
            "n": self.n,
            "revision": self.revision,
        }

    @classmethod
    def from_json(cls, obj: dict, suite) -> "TrackedFile":
        return cls(obj["file_id"], obj["name"], bytes.fromhex(obj["root"]),
                   suite.decode_group(obj["root_sig"]), obj["n"], obj.get("revision", 0))


def block_to_json(b: Block) -> dict:
    return {"uid": b.uid, "sectors": [str(m) for m in b.sectors], "raw_len": b.raw_len,
            "sector_bytes": b.sector_bytes}


def block_from_json(obj: dict, suite) -> Block:
    return Block(obj["uid"], tuple(suite.decode_scalar(m) for m in obj["sectors"]),
                 obj["raw_len"], obj.get("sector_bytes", SECTOR_BYTES))


@dataclass(frozen=True)
class UpdateRequest:
    file_id: str
    op: str
    index: int
    new_block: Block | None = None
    new_tag: BlockTag | None = None

    def __post_init__(self):
        if self.op not in OPS:
            raise UpdateError(f"unknown op {self.op!r}")
        carries = self.new_block is not None, self.new_tag is not None
        if self.op == "delete" and any(carries):
            raise UpdateError("delete carries no block or tag")
        if self.op != "delete" and not all(carries):
            raise UpdateError(f"{self.op} needs both a block and its tag")

    def to_json(self) -> dict:
        return {
            "file_id": self.file_id,
            "op": self.op,
            "index": self.index,
            "new_block": block_to_json(self.new_block) if self.new_block else None,
            "new_tag": self.new_tag.sigma.encode() if self.new_tag else None,
        }

    @classmethod
    def from_json(cls, obj: dict, suite=None) -> "UpdateRequest":
        suite = suite or get_suite()
        return cls(
            obj["file_id"], obj["op"], obj["index"],
            block_from_json(obj["new_block"], suite) if obj.get("new_block") else None,
            BlockTag(suite.decode_group(obj["new_tag"])) if obj.get("new_tag") else None,
        )


@dataclass(frozen=True)
class UpdateProof:
    old_leaf: bytes | None
    old_path: AuthPath
    old_root: bytes
    old_root_sig: object
    new_root: bytes

    def to_json(self) -> dict:
        return {
            "old_leaf": self.old_leaf.hex() if self.old_leaf is not None else None,
            "old_path": self.old_path.to_json(),
            "old_root": self.old_root.hex(),
            "old_root_sig": self.old_root_sig.encode(),
            "new_root": self.new_root.hex(),
        }

    @classmethod
    def from_json(cls, obj: dict, suite=None) -> "UpdateProof":
        suite = suite or get_suite()
        return cls(
            bytes.fromhex(obj["old_leaf"]) if obj["old_leaf"] is not None else None,
            AuthPath.from_json(obj["old_path"]),
            bytes.fromhex(obj["old_root"]),
            suite.decode_group(obj["old_root_sig"]),
            bytes.fromhex(obj["new_root"]),
        )


@dataclass(frozen=True)
class BlockAck:
    file_id: str
    index: int
    verdict: str
    audited_at: str

    def to_json(self) -> dict:
        return {"file_id": self.file_id, "index": self.index, "verdict": self.verdict,
                "audited_at": self.audited_at}


def prepare_update(kp: Keypair, pk: PublicKey, file_id: str, op: str, index: int,
                   new_bytes: bytes | None = None, *, n: int | None = None,
                   sector_bytes: int = SECTOR_BYTES, rng: random.Random | None = None) -> UpdateRequest:
    if op not in OPS:
        raise UpdateError(f"unknown op {op!r}")
    if (new_bytes is None) != (op == "delete"):
        raise UpdateError("payload required for modify/insert_after and forbidden for delete")
    if n is not None:
        lo = -1 if op == "insert_after" else 0
        if not lo <= index < n:
            raise UpdateError(f"index {index} out of range for {op} on {n} blocks")
    if op == "delete":
        return UpdateRequest(file_id, op, index)
    block = Block.from_bytes(_new_uid(rng), new_bytes, pk.s, sector_bytes)
    tag, _ = tag_block(kp, pk, block)
    return UpdateRequest(file_id, op, index, block, tag)


@dataclass
class PendingUpdate:
    request: UpdateRequest
    proof: UpdateProof
    manifest: list
    tree: object
    removed: tuple | None = None


def exec_update(store: StoredFile, req: UpdateRequest) -> UpdateProof:
    """Apply ``req`` provisionally; ``commit_update`` or ``rollback_update`` finishes it."""
    if store.pending is not None:
        raise UpdateError(f"file {store.file_id} already has an uncommitted update")
    if req.file_id != store.file_id:
        raise KeyError(f"unknown file {req.file_id}")
    pk = store.pk
    n = store.n
    lo = -1 if req.op == "insert_after" else 0
    if not lo <= req.index < n or (n == 0 and req.op != "insert_after"):
        raise UpdateError(f"index {req.index} out of range for {req.op} on {n} blocks")

    new_leaf = element = None
    if req.new_block is not None:
        if len(req.new_block.sectors) != pk.s or req.new_block.uid in store.blocks:
            raise UpdateError("new block does not match the file's sector layout")
        if not tag_is_valid(pk, req.new_block, req.new_tag):
            raise UpdateError("new block tag fails verification")
        element = block_element(pk.suite, req.new_block)
        new_leaf = leaf_digest(element)

    old_tree, old_manifest = store.tree, list(store.manifest)
    old_leaf = None
    removed = None
    if req.op == "modify":
        old_leaf = old_tree.leaf(req.index)
        tree, path = old_tree.modify(req.index, new_leaf)
        uid = store.manifest[req.index]
        removed = (uid, store.blocks[uid], store.tags[uid], store.elements[uid])
        store.manifest[req.index] = req.new_block.uid
    elif req.op == "insert_after":
        if n:
            old_leaf = old_tree.leaf(max(req.index, 0))
        tree, path = old_tree.insert_after(req.index, new_leaf)
        store.manifest.insert(req.index + 1, req.new_block.uid)
    else:
        old_leaf = old_tree.leaf(req.index)
        tree, path = old_tree.delete(req.index)
        uid = store.manifest.pop(req.index)
        removed = (uid, store.blocks[uid], store.tags[uid], store.elements[uid])

    if removed is not None:
        uid = removed[0]
        del store.blocks[uid], store.tags[uid], store.elements[uid]
    if req.new_block is not None:
        uid = req.new_block.uid
        store.blocks[uid] = req.new_block.to_bytes()
        store.tags[uid] = req.new_tag
        store.elements[uid] = element
    store.tree = tree

    proof = UpdateProof(old_leaf, path, old_tree.root, store.root_sig, tree.root)
    store.pending = PendingUpdate(req, proof, old_manifest, old_tree, removed)
    return proof


def commit_update(store: StoredFile, new_root_sig) -> None:
    pending = store.pending
    if pending is None:
        raise UpdateError("no pending update to commit")
    if not root_sig_valid(store.pk, store.tree.root, new_root_sig):
        rollback_update(store)
        raise UpdateError("client root signature does not verify; update rolled back")
    store.root_sig = new_root_sig
    store.pending = None


def rollback_update(store: StoredFile) -> None:
    pending = store.pending
    if pending is None:
        return
    req = pending.request
    if req.new_block is not None:
        uid = req.new_block.uid
        store.blocks.pop(uid, None)
        store.tags.pop(uid, None)
        store.elements.pop(uid, None)
    if pending.removed is not None:
        uid, data, tag, element = pending.removed
        store.blocks[uid] = data
        store.tags[uid] = tag
        store.elements[uid] = element
    store.manifest[:] = pending.manifest
    store.tree = pending.tree
    store.pending = None


def verify_update(pk: PublicKey, kp: Keypair, tracked: TrackedFile, req: UpdateRequest,
                  proof: UpdateProof):
    """Check the server's update proof against the client's tracked root.

    On success the new root is signed, ``tracked`` is advanced and the new
    signature returned. Raises ``UpdateRejected`` otherwise, leaving
    ``tracked`` untouched.
    """
    if proof.old_root != tracked.root or proof.old_root_sig != tracked.root_sig:
        raise UpdateRejected("stale_root", "proof does not start from the tracked root")
    if tracked.n == 0 and proof.old_root != EMPTY_ROOT:
        raise UpdateRejected("stale_root", "tracked root of an empty file must be the empty sentinel")
    if not root_sig_valid(pk, proof.old_root, proof.old_root_sig):
        raise UpdateRejected("stale_root", "old root signature does not verify")

    if tracked.n == 0:
        if req.op != "insert_after" or req.index != -1 or proof.old_path.siblings or proof.old_leaf:
            raise UpdateRejected("bad_path", "only a prepend is possible on an empty file")
    else:
        expected_index = max(req.index, 0)
        if proof.old_leaf is None or proof.old_path.leaf_index != expected_index:
            raise UpdateRejected("bad_path", "path does not address the requested block")
        if not verify_path(proof.old_root, proof.old_leaf, proof.old_path):
            raise UpdateRejected("bad_path", "old leaf does not authenticate under the old root")

    new_leaf = None
    if req.new_block is not None:
        new_leaf = leaf_digest(block_element(pk.suite, req.new_block))
    expected = apply_update(req.op, proof.old_path.siblings, proof.old_leaf, new_leaf,
                            prepend=req.op == "insert_after" and req.index == -1)
    if expected != proof.new_root:
        raise UpdateRejected("root_mismatch", "recomputed root differs from the server's")

    sig = sign_root(kp, pk, proof.new_root)
    tracked.root = proof.new_root
    tracked.root_sig = sig
    tracked.n += {"modify": 0, "insert_after": 1, "delete": -1}[req.op]
    tracked.revision += 1
    return sig


def verify_block(pk: PublicKey, store: StoredFile, index: int, mask_key: bytes | None = None,
                 rng: random.Random | None = None, now: _dt.datetime | None = None) -> BlockAck:
    """Single-block masked audit: detects content drift and tag corruption alike."""
    if not 0 <= index < store.n:
        raise IndexError(f"block index {index} out of range for {store.n} blocks")
    rng = rng or random.SystemRandom()
    ch = Challenge(store.file_id, ((index, rng.randrange(1, pk.suite.q)),), rng.randbytes(16))
    result = verify_proof(pk, ch, gen_proof(store, ch, mask_key))
    now = now or _dt.datetime.now()
    return BlockAck(store.file_id, index, "not_modified" if result else "modified",
                    now.strftime("%Y-%m-%d %H:%M:%S"))
