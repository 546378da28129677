"""Dynamic Merkle hash tree over block-hash leaves.

The tree is never rebalanced. Insertion splits a leaf into an internal node
over (old, new); deletion promotes the removed leaf's sibling into its parent's
place. Leaf depths therefore vary, and paths bind position only through their
left/right side bits.

Node hashing is domain separated::

    leaf      H(0x00 || digest)
    internal  H(0x01 || left || right)
    empty     H(0x02)
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterator, Sequence

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"
EMPTY_PREFIX = b"\x02"
DIGEST_LEN = 32

LEFT = "left"
RIGHT = "right"


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def leaf_hash(digest: bytes) -> bytes:
    return sha256(LEAF_PREFIX + digest)


def node_hash(left: bytes, right: bytes) -> bytes:
    return sha256(NODE_PREFIX + left + right)


EMPTY_ROOT = sha256(EMPTY_PREFIX)


@dataclass(frozen=True, slots=True)
class _Leaf:
    digest: bytes
    hash: bytes
    size: int = 1


@dataclass(frozen=True, slots=True)
class _Node:
    left: "_Leaf | _Node"
    right: "_Leaf | _Node"
    hash: bytes
    size: int


def _leaf(digest: bytes) -> _Leaf:
    if len(digest) != DIGEST_LEN:
        raise ValueError(f"leaf digest must be {DIGEST_LEN} bytes, got {len(digest)}")
    return _Leaf(digest, leaf_hash(digest))


def _join(left, right) -> _Node:
    return _Node(left, right, node_hash(left.hash, right.hash), left.size + right.size)


@dataclass(frozen=True)
class AuthPath:
    """Sibling hashes from the leaf up to the root.

    Each entry is ``(digest, side)`` where ``side`` says which side of the
    running hash the sibling sits on.
    """

    leaf_index: int
    siblings: tuple[tuple[bytes, str], ...] = ()

    def to_json(self) -> dict:
        return {
            "leaf_index": self.leaf_index,
            "siblings": [[d.hex(), side] for d, side in self.siblings],
        }

    @classmethod
    def from_json(cls, obj) -> "AuthPath":
        if not isinstance(obj, dict) or set(obj) != {"leaf_index", "siblings"}:
            raise ValueError("malformed auth path")
        idx = obj["leaf_index"]
        if not isinstance(idx, int) or isinstance(idx, bool) or idx < 0:
            raise ValueError("malformed auth path index")
        sibs = []
        for item in obj["siblings"]:
            if not isinstance(item, list) or len(item) != 2 or item[1] not in (LEFT, RIGHT):
                raise ValueError("malformed auth path sibling")
            d = bytes.fromhex(item[0])
            if len(d) != DIGEST_LEN:
                raise ValueError("malformed auth path digest")
            sibs.append((d, item[1]))
        return cls(idx, tuple(sibs))


def fold_path(node: bytes, siblings: Sequence[tuple[bytes, str]]) -> bytes:
    """Hash ``node`` up through ``siblings`` and return the resulting root."""
    for sib, side in siblings:
        if side == LEFT:
            node = node_hash(sib, node)
        elif side == RIGHT:
            node = node_hash(node, sib)
        else:
            raise ValueError(f"bad side {side!r}")
    return node


def verify_path(root: bytes, leaf: bytes, p: AuthPath) -> bool:
    try:
        return fold_path(leaf_hash(leaf), p.siblings) == root
    except ValueError:
        return False


def _split(n: int) -> int:
    # largest power of two strictly below n
    k = 1
    while k * 2 < n:
        k *= 2
    return k


def _build(leaves: Sequence[bytes]):
    if len(leaves) == 1:
        return _leaf(leaves[0])
    k = _split(len(leaves))
    return _join(_build(leaves[:k]), _build(leaves[k:]))


class MhtTree:
    """Immutable tree value; updates return new trees sharing structure."""

    __slots__ = ("_root",)

    def __init__(self, root=None):
        self._root = root

    @classmethod
    def build(cls, leaves: Sequence[bytes]) -> "MhtTree":
        return cls(_build(list(leaves)) if leaves else None)

    @classmethod
    def from_shape(cls, shape: Sequence[tuple[bytes, int]]) -> "MhtTree":
        """Rebuild a tree from its in-order (leaf digest, depth) sequence."""
        stack: list[tuple[object, int]] = []
        for digest, depth in shape:
            if depth < 0:
                raise ValueError("negative leaf depth")
            stack.append((_leaf(digest), depth))
            while len(stack) >= 2 and stack[-1][1] == stack[-2][1]:
                (right, d), (left, _) = stack.pop(), stack.pop()
                if d == 0:
                    raise ValueError("leaf depths do not describe a binary tree")
                stack.append((_join(left, right), d - 1))
        if not stack:
            return cls(None)
        if len(stack) != 1 or stack[0][1] != 0:
            raise ValueError("leaf depths do not describe a binary tree")
        return cls(stack[0][0])

    @property
    def root(self) -> bytes:
        return self._root.hash if self._root is not None else EMPTY_ROOT

    @property
    def leaf_count(self) -> int:
        return self._root.size if self._root is not None else 0

    def __len__(self) -> int:
        return self.leaf_count

    def _walk(self) -> Iterator[tuple[_Leaf, int]]:
        if self._root is None:
            return
        stack = [(self._root, 0)]
        while stack:
            node, depth = stack.pop()
            if isinstance(node, _Leaf):
                yield node, depth
            else:
                stack.append((node.right, depth + 1))
                stack.append((node.left, depth + 1))

    @property
    def leaves(self) -> list[bytes]:
        return [leaf.digest for leaf, _ in self._walk()]

    def shape(self) -> list[tuple[bytes, int]]:
        return [(leaf.digest, depth) for leaf, depth in self._walk()]

    def leaf(self, i: int) -> bytes:
        return self._descend(i)[0].digest

    def _descend(self, i: int):
        """Return (leaf, trail) where trail lists (parent, went_left) root-first."""
        if not 0 <= i < self.leaf_count:
            raise IndexError(f"leaf index {i} out of range for {self.leaf_count} leaves")
        node, trail = self._root, []
        while isinstance(node, _Node):
            if i < node.left.size:
                trail.append((node, True))
                node = node.left
            else:
                i -= node.left.size
                trail.append((node, False))
                node = node.right
        return node, trail

    @staticmethod
    def _siblings(trail) -> tuple[tuple[bytes, str], ...]:
        out = []
        for parent, went_left in reversed(trail):
            if went_left:
                out.append((parent.right.hash, RIGHT))
            else:
                out.append((parent.left.hash, LEFT))
        return tuple(out)

    @staticmethod
    def _rebuild(trail, node):
        for parent, went_left in reversed(trail):
            node = _join(node, parent.right) if went_left else _join(parent.left, node)
        return node

    def path(self, i: int) -> AuthPath:
        _, trail = self._descend(i)
        return AuthPath(i, self._siblings(trail))

    def modify(self, i: int, new_leaf: bytes) -> tuple["MhtTree", AuthPath]:
        _, trail = self._descend(i)
        old = AuthPath(i, self._siblings(trail))
        return MhtTree(self._rebuild(trail, _leaf(new_leaf))), old

    def insert_after(self, i: int, new_leaf: bytes) -> tuple["MhtTree", AuthPath]:
        fresh = _leaf(new_leaf)
        if self._root is None:
            if i != -1:
                raise IndexError("only prepend (-1) is valid on an empty tree")
            return MhtTree(fresh), AuthPath(0, ())
        if i < -1 or i >= self.leaf_count:
            raise IndexError(f"insert position {i} out of range for {self.leaf_count} leaves")
        target = max(i, 0)
        old_leaf, trail = self._descend(target)
        split = _join(fresh, old_leaf) if i == -1 else _join(old_leaf, fresh)
        old = AuthPath(target, self._siblings(trail))
        return MhtTree(self._rebuild(trail, split)), old

    def delete(self, i: int) -> tuple["MhtTree", AuthPath]:
        if self._root is None:
            raise IndexError("delete on empty tree")
        _, trail = self._descend(i)
        old = AuthPath(i, self._siblings(trail))
        if not trail:
            return MhtTree(None), old
        parent, went_left = trail[-1]
        promoted = parent.right if went_left else parent.left
        return MhtTree(self._rebuild(trail[:-1], promoted)), old

    def __eq__(self, other) -> bool:
        return isinstance(other, MhtTree) and self.shape() == other.shape()

    def __repr__(self) -> str:
        return f"MhtTree(n={self.leaf_count}, root={self.root.hex()[:16]}...)"

    # -- persistence ----------------------------------------------------------

    def dump_shape(self) -> str:
        return "".join(f"{d.hex()} {depth}\n" for d, depth in self.shape())

    @classmethod
    def load_shape(cls, text: str, expected_root: bytes | None = None) -> "MhtTree":
        shape = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"bad tree line {lineno}")
            shape.append((bytes.fromhex(parts[0]), int(parts[1])))
        tree = cls.from_shape(shape)
        if expected_root is not None and tree.root != expected_root:
            raise ValueError("rebuilt tree root does not match stored root")
        return tree


def apply_update(op: str, siblings: Sequence[tuple[bytes, str]], old_leaf: bytes | None,
                 new_leaf: bytes | None, prepend: bool = False) -> bytes:
    """Recompute the post-update root from the pre-update path alone.

    This is the verifier-side mirror of ``modify``/``insert_after``/``delete``.
    """
    if op == "modify":
        return fold_path(leaf_hash(new_leaf), siblings)
    if op == "insert_after":
        if old_leaf is None:
            return leaf_hash(new_leaf)
        a, b = leaf_hash(old_leaf), leaf_hash(new_leaf)
        split = node_hash(b, a) if prepend else node_hash(a, b)
        return fold_path(split, siblings)
    if op == "delete":
        if not siblings:
            return EMPTY_ROOT
        return fold_path(siblings[0][0], siblings[1:])
    raise ValueError(f"unknown op {op!r}")
