"""KeyGen / SigGen / GenProof / VerifyProof with sector-encoded blocks.

Block tags are BLS-style homomorphic authenticators::

    sigma_i = (H(block_hash_i) * prod_j u_j ** m_ij) ** x

The server answers a challenge ``{(i, nu_i)}`` with the aggregated tag and a
PRF-masked linear combination of the challenged sectors, so the auditor can
check storage without learning ``sum_i nu_i * m_ij``.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import random
import secrets
from dataclasses import dataclass
from typing import Callable, Sequence

from . import kernels
from .group import (
    TRANSPARENT_SUITE_ID,
    DecodeError,
    GroupElement,
    TargetElement,
    TransparentSuite,
    get_suite,
)
from .merkle import DIGEST_LEN, AuthPath, MhtTree, verify_path

SECTOR_BYTES = 7
LENGTH_PREFIX_BYTES = 8
MASK_KEY_BYTES = 32
NONCE_BYTES = 16


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


class Reject(str, enum.Enum):
    MALFORMED = "malformed"
    ROOT_SIGNATURE = "root_signature"
    PATH = "path"
    EQUATION = "equation"


# -- keys -------------------------------------------------------------------


@dataclass(frozen=True)
class Keypair:
    x: int
    # Root-signing seed material; root signatures currently reuse ``x``.
    ssk_seed: bytes

    def to_json(self) -> dict:
        return {"x": str(self.x), "ssk_seed": self.ssk_seed.hex()}

    @classmethod
    def from_json(cls, obj: dict) -> "Keypair":
        return cls(int(obj["x"]), bytes.fromhex(obj["ssk_seed"]))


@dataclass(frozen=True)
class PublicKey:
    v: GroupElement
    u: tuple[GroupElement, ...]
    suite_id: str = TRANSPARENT_SUITE_ID
    hash_name: str = "sha256"

    @property
    def s(self) -> int:
        return len(self.u)

    @property
    def suite(self) -> TransparentSuite:
        return get_suite(self.suite_id, self.hash_name)

    def fingerprint(self) -> str:
        return hashlib.sha256(canonical_json(self.to_json())).hexdigest()

    def to_json(self) -> dict:
        return {
            "suite": self.suite_id,
            "hash": self.hash_name,
            "v": self.v.encode(),
            "u": [e.encode() for e in self.u],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PublicKey":
        suite = get_suite(obj["suite"], obj.get("hash", "sha256"))
        return cls(
            suite.decode_group(obj["v"]),
            tuple(suite.decode_group(e) for e in obj["u"]),
            suite.suite_id,
            suite.hash_name,
        )


def keygen(rng: random.Random, s: int = 1, suite: TransparentSuite | None = None) -> tuple[Keypair, PublicKey]:
    if s < 1:
        raise ValueError("sector count must be at least 1")
    suite = suite or get_suite()
    x = rng.randrange(1, suite.q)
    ssk_seed = rng.randbytes(32)
    exps: list[int] = []
    while len(exps) < s:
        e = rng.randrange(1, suite.q)
        if e not in exps:
            exps.append(e)
    u = tuple(suite.exp(suite.g, e) for e in exps)
    return Keypair(x, ssk_seed), PublicKey(suite.exp(suite.g, x), u, suite.suite_id, suite.hash_name)


# -- blocks -----------------------------------------------------------------


@dataclass(frozen=True)
class Block:
    uid: str
    sectors: tuple[int, ...]
    raw_len: int
    sector_bytes: int = SECTOR_BYTES

    @classmethod
    def from_bytes(cls, uid: str, data: bytes, s: int, sector_bytes: int = SECTOR_BYTES) -> "Block":
        cap = s * sector_bytes
        if len(data) > cap:
            raise ValueError(f"block payload of {len(data)} bytes exceeds capacity {cap}")
        padded = data.ljust(cap, b"\x00")
        sectors = tuple(
            int.from_bytes(padded[j * sector_bytes:(j + 1) * sector_bytes], "big") for j in range(s)
        )
        return cls(uid, sectors, len(data), sector_bytes)

    def to_bytes(self) -> bytes:
        full = b"".join(m.to_bytes(self.sector_bytes, "big") for m in self.sectors)
        return full[: self.raw_len]

    def canonical(self) -> bytes:
        """Byte string the block hash commits to: payload length then sectors."""
        return self.raw_len.to_bytes(4, "big") + b"".join(m.to_bytes(8, "big") for m in self.sectors)

    def block_hash(self) -> bytes:
        return hashlib.sha256(self.canonical()).digest()


def _new_uid(rng: random.Random | None) -> str:
    return (rng.randbytes(8) if rng is not None else secrets.token_bytes(8)).hex()


def block_count(length: int, s: int, sector_bytes: int = SECTOR_BYTES) -> int:
    return math.ceil((LENGTH_PREFIX_BYTES + length) / (s * sector_bytes))


def encode_file(data: bytes, s: int = 1, sector_bytes: int = SECTOR_BYTES,
                rng: random.Random | None = None, suite: TransparentSuite | None = None) -> list[Block]:
    suite = suite or get_suite()
    if s < 1:
        raise ValueError("sector count must be at least 1")
    if 8 * sector_bytes >= suite.q.bit_length():
        raise ValueError(f"{sector_bytes}-byte sectors do not fit below the group order")
    payload = len(data).to_bytes(LENGTH_PREFIX_BYTES, "big") + data
    cap = s * sector_bytes
    return [
        Block.from_bytes(_new_uid(rng), payload[off:off + cap], s, sector_bytes)
        for off in range(0, len(payload), cap)
    ]


def decode_file(blocks: Sequence[Block], strict: bool = True) -> bytes:
    """Reassemble file bytes from blocks in manifest order.

    With ``strict`` the length prefix must account for exactly the stored
    payload. Files that went through block-level updates no longer satisfy
    that and are decoded with ``strict=False``.
    """
    payload = b"".join(b.to_bytes() for b in blocks)
    if len(payload) < LENGTH_PREFIX_BYTES:
        raise ValueError("corrupt length prefix: file shorter than its header")
    length = int.from_bytes(payload[:LENGTH_PREFIX_BYTES], "big")
    body = payload[LENGTH_PREFIX_BYTES:]
    if strict and length != len(body):
        raise ValueError(f"corrupt length prefix: header says {length} bytes, found {len(body)}")
    return body


# -- tags and metadata ------------------------------------------------------


@dataclass(frozen=True)
class BlockTag:
    sigma: GroupElement


def block_element(suite: TransparentSuite, block: Block) -> GroupElement:
    return suite.hash_to_group(block.block_hash())


def leaf_digest(h: GroupElement) -> bytes:
    return hashlib.sha256(h.encode().encode()).digest()


def check_block(suite: TransparentSuite, block: Block, s: int) -> None:
    if len(block.sectors) != s:
        raise ValueError(f"block {block.uid} has {len(block.sectors)} sectors, expected {s}")
    for m in block.sectors:
        if not 0 <= m < suite.q or m >> (8 * block.sector_bytes):
            raise ValueError(f"block {block.uid} has a sector outside its range")


def tag_block(kp: Keypair, pk: PublicKey, block: Block) -> tuple[BlockTag, GroupElement]:
    suite = pk.suite
    check_block(suite, block, pk.s)
    h = block_element(suite, block)
    base = suite.mul(h, suite.multi_exp(pk.u, block.sectors))
    return BlockTag(suite.exp(base, kp.x)), h


def tag_is_valid(pk: PublicKey, block: Block, tag: BlockTag) -> bool:
    suite = pk.suite
    h = block_element(suite, block)
    base = suite.mul(h, suite.multi_exp(pk.u, block.sectors))
    return suite.pair(tag.sigma, suite.g) == suite.pair(base, pk.v)


def sign_root(kp: Keypair, pk: PublicKey, root: bytes) -> GroupElement:
    suite = pk.suite
    return suite.exp(suite.hash_to_group(root), kp.x)


def root_sig_valid(pk: PublicKey, root: bytes, sig: GroupElement, pair: Callable | None = None) -> bool:
    suite = pk.suite
    pair = pair or suite.pair
    return pair(sig, suite.g) == pair(suite.hash_to_group(root), pk.v)


@dataclass(frozen=True)
class FileMetadata:
    file_id: str
    n: int
    s: int
    root: bytes
    root_sig: GroupElement
    manifest: tuple[str, ...]

    def to_json(self) -> dict:
        return {
            "file_id": self.file_id,
            "n": self.n,
            "s": self.s,
            "root": self.root.hex(),
            "root_sig": self.root_sig.encode(),
            "manifest": list(self.manifest),
        }

    @classmethod
    def from_json(cls, obj: dict, suite: TransparentSuite) -> "FileMetadata":
        return cls(obj["file_id"], obj["n"], obj["s"], bytes.fromhex(obj["root"]),
                   suite.decode_group(obj["root_sig"]), tuple(obj["manifest"]))


def sig_gen(kp: Keypair, pk: PublicKey, blocks: Sequence[Block], file_id: str = ""):
    """Tag every block, build the tree over their hash elements and sign its root.

    Returns ``(tags, tree, meta)``.
    """
    if not blocks:
        raise ValueError("cannot tag an empty block list")
    tags, leaves = [], []
    for b in blocks:
        tag, h = tag_block(kp, pk, b)
        tags.append(tag)
        leaves.append(leaf_digest(h))
    tree = MhtTree.build(leaves)
    meta = FileMetadata(file_id, len(blocks), pk.s, tree.root, sign_root(kp, pk, tree.root),
                        tuple(b.uid for b in blocks))
    return tags, tree, meta


# -- server-side file state -------------------------------------------------


@dataclass
class StoredFile:
    """What the server keeps for one file.

    Blocks are held as raw payload bytes so storage faults act on bytes.
    ``elements`` caches each block's hash element as received at upload.
    """

    file_id: str
    pk: PublicKey
    manifest: list[str]
    blocks: dict[str, bytes]
    tags: dict[str, BlockTag]
    elements: dict[str, GroupElement]
    tree: MhtTree
    root_sig: GroupElement
    sector_bytes: int = SECTOR_BYTES
    owner: str = ""
    name: str = ""
    pending: object = None

    @property
    def n(self) -> int:
        return len(self.manifest)

    def block(self, index: int) -> Block:
        uid = self.manifest[index]
        return Block.from_bytes(uid, self.blocks[uid], self.pk.s, self.sector_bytes)

    def metadata(self) -> FileMetadata:
        return FileMetadata(self.file_id, self.n, self.pk.s, self.tree.root, self.root_sig,
                            tuple(self.manifest))

    @classmethod
    def from_upload(cls, pk: PublicKey, blocks: Sequence[Block], tags: Sequence[BlockTag],
                    meta: FileMetadata, owner: str = "", name: str = "") -> "StoredFile":
        suite = pk.suite
        elements = {b.uid: block_element(suite, b) for b in blocks}
        tree = MhtTree.build([leaf_digest(elements[b.uid]) for b in blocks])
        return cls(
            meta.file_id, pk, [b.uid for b in blocks],
            {b.uid: b.to_bytes() for b in blocks},
            {b.uid: t for b, t in zip(blocks, tags)},
            elements, tree, meta.root_sig,
            blocks[0].sector_bytes if blocks else SECTOR_BYTES, owner, name,
        )


# -- challenge / proof ------------------------------------------------------


@dataclass(frozen=True)
class Challenge:
    file_id: str
    pairs: tuple[tuple[int, int], ...]
    nonce: bytes

    @property
    def indices(self) -> list[int]:
        return [i for i, _ in self.pairs]

    def to_json(self) -> dict:
        return {
            "file_id": self.file_id,
            "pairs": [[i, str(nu)] for i, nu in self.pairs],
            "nonce": self.nonce.hex(),
        }

    @classmethod
    def from_json(cls, obj, suite: TransparentSuite | None = None) -> "Challenge":
        suite = suite or get_suite()
        if not isinstance(obj, dict) or set(obj) != {"file_id", "pairs", "nonce"}:
            raise DecodeError("malformed challenge")
        pairs = []
        for item in obj["pairs"]:
            if not isinstance(item, list) or len(item) != 2 or not isinstance(item[0], int):
                raise DecodeError("malformed challenge pair")
            pairs.append((item[0], suite.decode_scalar(item[1])))
        return cls(obj["file_id"], tuple(pairs), bytes.fromhex(obj["nonce"]))


def gen_challenge(rng: random.Random, n: int, c: int, file_id: str = "",
                  suite: TransparentSuite | None = None) -> Challenge:
    if not 1 <= c <= n:
        raise ValueError(f"challenge size {c} not in [1, {n}]")
    suite = suite or get_suite()
    indices = sorted(rng.sample(range(n), c))
    pairs = tuple((i, rng.randrange(1, suite.q)) for i in indices)
    return Challenge(file_id, pairs, rng.randbytes(NONCE_BYTES))


@dataclass(frozen=True)
class LeafEvidence:
    index: int
    element: GroupElement
    path: AuthPath


@dataclass(frozen=True)
class AuditProof:
    mu: tuple[int, ...]
    sigma: GroupElement
    r_mask: TargetElement
    leaf_evidence: tuple[LeafEvidence, ...]
    root: bytes
    root_sig: GroupElement

    def to_json(self) -> dict:
        return {
            "mu": [str(m) for m in self.mu],
            "sigma": self.sigma.encode(),
            "r_mask": self.r_mask.encode(),
            "leaf_evidence": [
                {"index": ev.index, "element": ev.element.encode(), "path": ev.path.to_json()}
                for ev in self.leaf_evidence
            ],
            "root": self.root.hex(),
            "root_sig": self.root_sig.encode(),
        }

    @classmethod
    def from_json(cls, obj, suite: TransparentSuite | None = None) -> "AuditProof":
        suite = suite or get_suite()
        keys = {"mu", "sigma", "r_mask", "leaf_evidence", "root", "root_sig"}
        if not isinstance(obj, dict) or set(obj) != keys:
            raise DecodeError("malformed proof")
        evidence = []
        for ev in obj["leaf_evidence"]:
            if not isinstance(ev, dict) or set(ev) != {"index", "element", "path"}:
                raise DecodeError("malformed leaf evidence")
            if not isinstance(ev["index"], int):
                raise DecodeError("malformed leaf index")
            try:
                path = AuthPath.from_json(ev["path"])
            except ValueError as exc:
                raise DecodeError(str(exc)) from exc
            evidence.append(LeafEvidence(ev["index"], suite.decode_group(ev["element"]), path))
        try:
            root = bytes.fromhex(obj["root"])
        except (TypeError, ValueError) as exc:
            raise DecodeError("malformed root") from exc
        return cls(
            tuple(suite.decode_scalar(m) for m in obj["mu"]),
            suite.decode_group(obj["sigma"]),
            suite.decode_target(obj["r_mask"]),
            tuple(evidence),
            root,
            suite.decode_group(obj["root_sig"]),
        )


@dataclass(frozen=True)
class AuditResult:
    accepted: bool
    reason: Reject | None = None
    pairing_count: int = 0
    detail: str = ""

    def __bool__(self) -> bool:
        return self.accepted


def mask_scalars(suite: TransparentSuite, mask_key: bytes, nonce: bytes, s: int) -> list[int]:
    return [suite.prf(mask_key, nonce, j) for j in range(s)]


def unmasked_combination(store: StoredFile, ch: Challenge) -> list[int]:
    """Server-internal ``mu'_j = sum_i nu_i * m_ij``; never leaves the server."""
    suite = store.pk.suite
    rows = [store.block(i).sectors for i in ch.indices]
    return kernels.column_dot_mod([nu for _, nu in ch.pairs], rows, store.pk.s, suite.q)


def gen_proof(store: StoredFile, ch: Challenge, mask_key: bytes | None = None) -> AuditProof:
    pk = store.pk
    suite = pk.suite
    if ch.file_id and store.file_id and ch.file_id != store.file_id:
        raise KeyError(f"challenge is for file {ch.file_id}, not {store.file_id}")
    for i in ch.indices:
        if not 0 <= i < store.n:
            raise IndexError(f"challenged index {i} out of range for {store.n} blocks")
    mask_key = mask_key if mask_key is not None else secrets.token_bytes(MASK_KEY_BYTES)

    r = mask_scalars(suite, mask_key, ch.nonce, pk.s)
    r_mask = suite.gt_multi_exp([suite.pair(u_j, pk.v) for u_j in pk.u], r)
    gamma = suite.hash_to_scalar(r_mask.encode().encode())
    mu_prime = unmasked_combination(store, ch)
    mu = tuple((r_j + gamma * m) % suite.q for r_j, m in zip(r, mu_prime))

    nus = [nu for _, nu in ch.pairs]
    uids = [store.manifest[i] for i in ch.indices]
    sigma = suite.multi_exp([store.tags[uid].sigma for uid in uids], nus)
    evidence = tuple(
        LeafEvidence(i, store.elements[uid], store.tree.path(i)) for i, uid in zip(ch.indices, uids)
    )
    return AuditProof(mu, sigma, r_mask, evidence, store.tree.root, store.root_sig)


def _structure_problem(pk: PublicKey, ch: Challenge, pf: AuditProof) -> str | None:
    suite = pk.suite
    if not ch.pairs:
        return "empty challenge"
    idx = ch.indices
    if len(set(idx)) != len(idx) or any(i < 0 for i in idx):
        return "challenge indices not distinct and non-negative"
    if any(not suite.is_scalar(nu) or nu == 0 for _, nu in ch.pairs):
        return "bad challenge coefficient"
    if len(pf.mu) != pk.s or any(not suite.is_scalar(m) for m in pf.mu):
        return f"expected {pk.s} masked sector sums"
    if len(pf.root) != DIGEST_LEN:
        return "bad root digest"
    if len(pf.leaf_evidence) != len(idx):
        return "leaf evidence does not cover the challenge"
    for ev, i in zip(pf.leaf_evidence, idx):
        if ev.index != i or ev.path.leaf_index != i:
            return f"leaf evidence out of order at index {i}"
    try:
        suite._check(pf.sigma, pf.root_sig, *(ev.element for ev in pf.leaf_evidence))
        suite._check_gt(pf.r_mask)
    except ValueError as exc:
        return str(exc)
    return None


def verify_proof(pk: PublicKey, ch: Challenge, pf: AuditProof, pair: Callable | None = None) -> AuditResult:
    """Check root signature, leaf paths and the masked pairing equation, in that order.

    ``pair`` may be a counting wrapper such as ``PairingTally``.
    """
    suite = pk.suite
    calls = [0]
    base_pair = pair or suite.pair

    def counted(a, b):
        calls[0] += 1
        return base_pair(a, b)

    try:
        problem = _structure_problem(pk, ch, pf)
    except (TypeError, AttributeError, ValueError) as exc:
        problem = str(exc)
    if problem:
        return AuditResult(False, Reject.MALFORMED, 0, problem)

    if not root_sig_valid(pk, pf.root, pf.root_sig, counted):
        return AuditResult(False, Reject.ROOT_SIGNATURE, calls[0])

    for ev in pf.leaf_evidence:
        if not verify_path(pf.root, leaf_digest(ev.element), ev.path):
            return AuditResult(False, Reject.PATH, calls[0], f"index {ev.index}")

    gamma = suite.hash_to_scalar(pf.r_mask.encode().encode())
    nus = [nu for _, nu in ch.pairs]
    agg = suite.multi_exp([ev.element for ev in pf.leaf_evidence], nus)
    lhs = suite.gt_mul(counted(suite.exp(pf.sigma, gamma), suite.g), pf.r_mask)
    rhs = suite.gt_mul(
        counted(suite.exp(agg, gamma), pk.v),
        suite.gt_multi_exp([counted(u_j, pk.v) for u_j in pk.u], pf.mu),
    )
    if lhs != rhs:
        return AuditResult(False, Reject.EQUATION, calls[0])
    return AuditResult(True, None, calls[0])


def verify_proof_json(pk: PublicKey, ch: Challenge, proof_obj) -> AuditResult:
    """Like ``verify_proof`` but starting from an untrusted JSON object."""
    try:
        pf = AuditProof.from_json(proof_obj, pk.suite)
    except (DecodeError, KeyError, TypeError, ValueError, AttributeError) as exc:
        return AuditResult(False, Reject.MALFORMED, 0, str(exc))
    return verify_proof(pk, ch, pf)
