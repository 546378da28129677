"""Aggregate verification of many users' audit proofs.

The K pairing equations are raised to independent random combiners and
multiplied together, so one check covers the whole batch. Without combiners
two complementary bad proofs could cancel. A failing batch is bisected until
the bad entries are isolated.
"""

from __future__ import annotations

import random
import threading
from dataclasses import dataclass, field
from typing import Sequence

from .group import GroupElement, TargetElement, TransparentSuite
from .merkle import verify_path
from .protocol import AuditProof, Challenge, PublicKey, _structure_problem, leaf_digest, root_sig_valid

DEFAULT_LAMBDA_BITS = 40

ALL_ACCEPT = "all_accept"
SOME_REJECT = "some_reject"


class PairingCache:
    """Memoized ``pair(u_j, v)`` keyed by (public-key fingerprint, j)."""

    def __init__(self):
        self._values: dict[tuple[str, int], TargetElement] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._values)

    def get(self, pk: PublicKey, j: int, pair) -> TargetElement:
        key = (pk.fingerprint(), j)
        value = self._values.get(key)
        if value is None:
            value = pair(pk.u[j], pk.v)
            with self._lock:
                value = self._values.setdefault(key, value)
        return value


@dataclass
class BatchTask:
    entries: list[tuple[PublicKey, Challenge, AuditProof]]
    deltas: list[int]
    lambda_bits: int = DEFAULT_LAMBDA_BITS

    def __post_init__(self):
        if not self.entries:
            raise ValueError("batch task has no entries")
        if len(self.entries) != len(self.deltas):
            raise ValueError("need exactly one combiner per entry")
        if any(d <= 0 for d in self.deltas):
            raise ValueError("combiners must be nonzero")


@dataclass
class BatchResult:
    verdict: str
    culprits: list[int] = field(default_factory=list)
    pairing_count: int = 0
    k: int = 0

    @property
    def all_accept(self) -> bool:
        return self.verdict == ALL_ACCEPT

    def to_json(self) -> dict:
        return {"verdict": self.verdict, "culprits": self.culprits,
                "pairing_count": self.pairing_count, "k": self.k}


def draw_deltas(rng: random.Random, k: int, lambda_bits: int = DEFAULT_LAMBDA_BITS,
                q: int = (1 << 61) - 1) -> list[int]:
    if k < 1:
        raise ValueError("need at least one combiner")
    if not 1 <= lambda_bits <= q.bit_length() - 1:
        raise ValueError(f"lambda_bits must be in [1, {q.bit_length() - 1}]")
    return [rng.randrange(1, 1 << lambda_bits) if lambda_bits > 1 else 1 for _ in range(k)]


@dataclass
class _Prepared:
    index: int
    pk: PublicKey
    gamma: int
    agg: GroupElement
    pf: AuditProof


def batch_verify(task: BatchTask, cache: PairingCache | None = None) -> BatchResult:
    cache = cache if cache is not None else PairingCache()
    k = len(task.entries)
    suite: TransparentSuite = task.entries[0][0].suite
    count = [0]

    def pair(a, b):
        count[0] += 1
        return suite.pair(a, b)

    culprits: list[int] = []
    ready: list[_Prepared] = []
    for idx, (pk, ch, pf) in enumerate(task.entries):
        if pk.suite is not suite:
            culprits.append(idx)
            continue
        try:
            problem = _structure_problem(pk, ch, pf)
        except (TypeError, AttributeError, ValueError) as exc:
            problem = str(exc)
        if problem or not root_sig_valid(pk, pf.root, pf.root_sig, pair):
            culprits.append(idx)
            continue
        if not all(verify_path(pf.root, leaf_digest(ev.element), ev.path) for ev in pf.leaf_evidence):
            culprits.append(idx)
            continue
        gamma = suite.hash_to_scalar(pf.r_mask.encode().encode())
        agg = suite.multi_exp([ev.element for ev in pf.leaf_evidence], [nu for _, nu in ch.pairs])
        ready.append(_Prepared(idx, pk, gamma, agg, pf))

    def combined_ok(group: Sequence[_Prepared]) -> bool:
        sig_terms, sig_exps = [], []
        mask_terms, mask_exps = [], []
        uv_terms, uv_exps = [], []
        by_user: dict[str, tuple[PublicKey, list, list]] = {}
        for e in group:
            d = task.deltas[e.index]
            w = e.gamma * d % suite.q
            sig_terms.append(e.pf.sigma)
            sig_exps.append(w)
            mask_terms.append(e.pf.r_mask)
            mask_exps.append(d)
            _, aggs, weights = by_user.setdefault(e.pk.fingerprint(), (e.pk, [], []))
            aggs.append(e.agg)
            weights.append(w)
            for j, mu_j in enumerate(e.pf.mu):
                uv_terms.append(cache.get(e.pk, j, pair))
                uv_exps.append(mu_j * d)
        lhs = suite.gt_mul(pair(suite.multi_exp(sig_terms, sig_exps), suite.g),
                           suite.gt_multi_exp(mask_terms, mask_exps))
        rhs = suite.gt_multi_exp(uv_terms, uv_exps)
        # proofs from one user share v, so their aggregates share one pairing
        for pk, aggs, weights in by_user.values():
            rhs = suite.gt_mul(rhs, pair(suite.multi_exp(aggs, weights), pk.v))
        return lhs == rhs

    def bisect(group: Sequence[_Prepared]) -> list[int]:
        if not group or combined_ok(group):
            return []
        if len(group) == 1:
            return [group[0].index]
        mid = len(group) // 2
        return bisect(group[:mid]) + bisect(group[mid:])

    culprits = sorted(culprits + bisect(ready))
    return BatchResult(SOME_REJECT if culprits else ALL_ACCEPT, culprits, count[0], k)
