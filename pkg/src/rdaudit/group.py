"""Prime-order group with a symmetric pairing, hashing into the group, and a PRF.

``TransparentSuite`` represents every group element by its discrete log with
respect to the generator, modulo the Mersenne prime 2**61 - 1. The group law is
exponent addition and the pairing is exponent multiplication into an equally
transparent target group. This makes every protocol equation checkable with
plain integer arithmetic. It is a functional model only and offers no
cryptographic hardness whatsoever.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass
from typing import Iterable, Sequence

from . import kernels

TRANSPARENT_SUITE_ID = "transparent-mersenne61"
# Reserved for a pairing-friendly curve backend behind the same interface.
BLS12_381_SUITE_ID = "bls12-381"

MERSENNE61 = (1 << 61) - 1

TAG_GROUP = b"\x01"
TAG_SCALAR = b"\x02"
TAG_PRF = b"\x03"

MIN_PRF_KEY_LEN = 16


class SuiteMismatch(ValueError):
    pass


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class GroupElement:
    suite_id: str
    value: int

    def encode(self) -> str:
        return f"{self.suite_id}:{self.value}"


@dataclass(frozen=True)
class TargetElement:
    suite_id: str
    value: int

    def encode(self) -> str:
        return f"{self.suite_id}:{self.value}"


@dataclass(frozen=True)
class SuiteParams:
    suite_id: str
    q: int
    g: GroupElement
    description: str


def _decode(cls, text: str, suite_id: str, q: int):
    if not isinstance(text, str):
        raise DecodeError(f"expected string, got {type(text).__name__}")
    prefix, sep, digits = text.rpartition(":")
    if not sep or prefix != suite_id:
        raise DecodeError(f"element not in suite {suite_id!r}: {text!r}")
    if not digits.isdigit() or (len(digits) > 1 and digits[0] == "0"):
        raise DecodeError(f"non-canonical exponent: {text!r}")
    value = int(digits)
    if value >= q:
        raise DecodeError(f"exponent out of range: {text!r}")
    return cls(prefix, value)


class TransparentSuite:
    """Discrete-log-exposed group of order ``q`` with a symmetric pairing."""

    suite_id = TRANSPARENT_SUITE_ID

    def __init__(self, hash_name: str = "sha256", q: int = MERSENNE61):
        hashlib.new(hash_name)  # fail fast on unknown hash
        self.hash_name = hash_name
        self.q = q
        self.g = GroupElement(self.suite_id, 1)
        self.identity = GroupElement(self.suite_id, 0)
        self.gt_identity = TargetElement(self.suite_id, 0)
        self.params = SuiteParams(
            self.suite_id,
            q,
            self.g,
            "transparent discrete-log model over Z_q, q = 2^61 - 1 (not secure)",
        )

    def __repr__(self) -> str:
        return f"TransparentSuite(hash_name={self.hash_name!r})"

    # -- validation ---------------------------------------------------------

    def _check(self, *elems: GroupElement) -> None:
        for e in elems:
            if not isinstance(e, GroupElement) or e.suite_id != self.suite_id:
                raise SuiteMismatch(f"{e!r} is not an element of {self.suite_id}")
            if not 0 <= e.value < self.q:
                raise SuiteMismatch(f"{e!r} is outside the group")

    def _check_gt(self, *elems: TargetElement) -> None:
        for e in elems:
            if not isinstance(e, TargetElement) or e.suite_id != self.suite_id:
                raise SuiteMismatch(f"{e!r} is not a target element of {self.suite_id}")
            if not 0 <= e.value < self.q:
                raise SuiteMismatch(f"{e!r} is outside the target group")

    def scalar(self, value: int) -> int:
        return value % self.q

    def is_scalar(self, value) -> bool:
        return isinstance(value, int) and not isinstance(value, bool) and 0 <= value < self.q

    # -- source group -------------------------------------------------------

    def mul(self, a: GroupElement, b: GroupElement) -> GroupElement:
        self._check(a, b)
        return GroupElement(self.suite_id, (a.value + b.value) % self.q)

    def exp(self, base: GroupElement, e: int) -> GroupElement:
        self._check(base)
        return GroupElement(self.suite_id, kernels.mul_mod(base.value, e % self.q, self.q))

    def inv(self, a: GroupElement) -> GroupElement:
        self._check(a)
        return GroupElement(self.suite_id, -a.value % self.q)

    def multi_exp(self, bases: Sequence[GroupElement], exps: Sequence[int]) -> GroupElement:
        self._check(*bases)
        value = kernels.dot_mod([b.value for b in bases], [e % self.q for e in exps], self.q)
        return GroupElement(self.suite_id, value)

    def product(self, elems: Iterable[GroupElement]) -> GroupElement:
        acc = self.identity
        for e in elems:
            acc = self.mul(acc, e)
        return acc

    # -- target group -------------------------------------------------------

    def pair(self, a: GroupElement, b: GroupElement) -> TargetElement:
        self._check(a, b)
        return TargetElement(self.suite_id, kernels.mul_mod(a.value, b.value, self.q))

    def gt_mul(self, a: TargetElement, b: TargetElement) -> TargetElement:
        self._check_gt(a, b)
        return TargetElement(self.suite_id, (a.value + b.value) % self.q)

    def gt_exp(self, base: TargetElement, e: int) -> TargetElement:
        self._check_gt(base)
        return TargetElement(self.suite_id, kernels.mul_mod(base.value, e % self.q, self.q))

    def gt_multi_exp(self, bases: Sequence[TargetElement], exps: Sequence[int]) -> TargetElement:
        self._check_gt(*bases)
        value = kernels.dot_mod([b.value for b in bases], [e % self.q for e in exps], self.q)
        return TargetElement(self.suite_id, value)

    def gt_product(self, elems: Iterable[TargetElement]) -> TargetElement:
        acc = self.gt_identity
        for e in elems:
            acc = self.gt_mul(acc, e)
        return acc

    # -- hashing ------------------------------------------------------------

    def _digest(self, *parts: bytes) -> bytes:
        h = hashlib.new(self.hash_name)
        for p in parts:
            h.update(p)
        return h.digest()

    def hash_to_group(self, data: bytes) -> GroupElement:
        counter = 0
        while True:
            ctr = counter.to_bytes(4, "big") if counter else b""
            value = int.from_bytes(self._digest(TAG_GROUP, ctr, data), "big") % self.q
            if value:
                return GroupElement(self.suite_id, value)
            counter += 1

    def hash_to_scalar(self, data: bytes) -> int:
        return int.from_bytes(self._digest(TAG_SCALAR, data), "big") % self.q

    def prf(self, key: bytes, nonce: bytes, index: int) -> int:
        if len(key) < MIN_PRF_KEY_LEN:
            raise ValueError(f"PRF key must be at least {MIN_PRF_KEY_LEN} bytes")
        if index < 0:
            raise ValueError("PRF index must be non-negative")
        msg = TAG_PRF + len(nonce).to_bytes(4, "big") + nonce + index.to_bytes(8, "big")
        return int.from_bytes(hmac.new(key, msg, self.hash_name).digest(), "big") % self.q

    # -- encodings ----------------------------------------------------------

    def decode_group(self, text: str) -> GroupElement:
        return _decode(GroupElement, text, self.suite_id, self.q)

    def decode_target(self, text: str) -> TargetElement:
        return _decode(TargetElement, text, self.suite_id, self.q)

    @staticmethod
    def encode_scalar(value: int) -> str:
        return str(value)

    def decode_scalar(self, text: str) -> int:
        if not isinstance(text, str) or not text.isdigit() or (len(text) > 1 and text[0] == "0"):
            raise DecodeError(f"non-canonical scalar: {text!r}")
        value = int(text)
        if value >= self.q:
            raise DecodeError(f"scalar out of range: {text!r}")
        return value


class PairingTally:
    """Counts pairing evaluations made through it."""

    def __init__(self, suite: TransparentSuite):
        self.suite = suite
        self.count = 0

    def __call__(self, a: GroupElement, b: GroupElement) -> TargetElement:
        self.count += 1
        return self.suite.pair(a, b)


_SUITES: dict[str, TransparentSuite] = {}


def get_suite(suite_id: str = TRANSPARENT_SUITE_ID, hash_name: str = "sha256") -> TransparentSuite:
    if suite_id == BLS12_381_SUITE_ID:
        raise NotImplementedError("the pairing-friendly curve backend is not bundled")
    if suite_id != TRANSPARENT_SUITE_ID:
        raise ValueError(f"unknown suite {suite_id!r}")
    key = f"{suite_id}/{hash_name}"
    if key not in _SUITES:
        _SUITES[key] = TransparentSuite(hash_name)
    return _SUITES[key]
