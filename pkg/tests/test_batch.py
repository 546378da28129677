import random

import pytest

from conftest import make_file
from rdaudit.batch import (
    ALL_ACCEPT,
    SOME_REJECT,
    BatchTask,
    PairingCache,
    batch_verify,
    draw_deltas,
)
from rdaudit.group import get_suite
from rdaudit.protocol import AuditProof, gen_challenge, gen_proof, verify_proof

Q = get_suite().q


def entry(rng, s=1, size=None):
    kp, pk, stored = make_file(rng, size or rng.randrange(20, 300), s)
    ch = gen_challenge(rng, stored.n, rng.randrange(1, stored.n + 1), stored.file_id)
    return pk, ch, gen_proof(stored, ch, rng.randbytes(32)), stored


def corrupt(suite, pf):
    return AuditProof(pf.mu, suite.mul(pf.sigma, suite.g), pf.r_mask, pf.leaf_evidence, pf.root, pf.root_sig)


def run(rng, entries, lam=40, cache=None):
    return batch_verify(BatchTask(entries, draw_deltas(rng, len(entries), lam), lam), cache)


def test_draw_deltas_range_and_determinism():
    rng = random.Random(1)
    ds = draw_deltas(rng, 10000, 12)
    assert all(0 < d < 1 << 12 for d in ds)
    assert draw_deltas(random.Random(2), 5) == draw_deltas(random.Random(2), 5)
    assert draw_deltas(rng, 50, 1) == [1] * 50
    for bad in (0, 61):
        with pytest.raises(ValueError):
            draw_deltas(rng, 3, bad)
    with pytest.raises(ValueError):
        draw_deltas(rng, 0)
    assert max(draw_deltas(rng, 1000, 60)) < 1 << 60


def test_task_validation(rng):
    pk, ch, pf, _ = entry(rng)
    with pytest.raises(ValueError):
        BatchTask([], [])
    with pytest.raises(ValueError):
        BatchTask([(pk, ch, pf)], [0])
    with pytest.raises(ValueError):
        BatchTask([(pk, ch, pf)], [1, 2])


def test_single_entry_matches_verify_proof(rng, suite):
    for k in range(100):
        pk, ch, pf, _ = entry(rng, s=rng.choice([1, 4]))
        if k % 3 == 0:
            pf = corrupt(suite, pf)
        res = run(rng, [(pk, ch, pf)])
        assert res.all_accept == bool(verify_proof(pk, ch, pf))
        assert res.culprits == ([] if res.all_accept else [0])


def test_honest_batches_equivalence_200():
    rng = random.Random(3)
    for _ in range(200):
        entries = [entry(rng, size=rng.randrange(20, 120))[:3] for _ in range(rng.randrange(1, 17))]
        res = run(rng, entries)
        assert res.verdict == ALL_ACCEPT
        assert res.all_accept == all(verify_proof(*e) for e in entries)
        assert res.culprits == [] and res.pairing_count > 0 and res.k == len(entries)


def test_detection_exact_culprits_200(suite):
    rng = random.Random(4)
    for _ in range(200):
        k = rng.randrange(1, 13)
        entries = [list(entry(rng, size=rng.randrange(20, 100))[:3]) for _ in range(k)]
        bad = sorted(rng.sample(range(k), rng.randrange(1, k + 1)))
        for i in bad:
            entries[i][2] = corrupt(suite, entries[i][2])
        res = run(rng, [tuple(e) for e in entries])
        assert res.verdict == SOME_REJECT
        assert res.culprits == bad


def test_k8_entry5_corrupted(rng, suite):
    entries = [list(entry(rng)[:3]) for _ in range(8)]
    entries[5][2] = corrupt(suite, entries[5][2])
    res = run(rng, [tuple(e) for e in entries])
    assert res.verdict == SOME_REJECT and res.culprits == [5]


def test_pairing_cost_below_individual(rng):
    for s in (1, 4):
        single = 4 + s
        for k in range(2, 10):
            entries = [entry(rng, s=s)[:3] for _ in range(k)]
            res = run(rng, entries)
            assert res.all_accept
            assert res.pairing_count == 2 * k + 1 + k + k * s
            assert res.pairing_count < k * single


def test_cache_and_same_user_grouping(rng):
    pk, ch, pf, stored = entry(rng, s=4, size=500)
    entries = [(pk, ch, pf)]
    for _ in range(5):
        ch2 = gen_challenge(rng, stored.n, 3, stored.file_id)
        entries.append((pk, ch2, gen_proof(stored, ch2, rng.randbytes(32))))
    cache = PairingCache()
    first = run(rng, entries, cache=cache)
    assert first.all_accept
    # 2 per root signature, one for sigma, one shared aggregate pairing, s cached values
    assert first.pairing_count == 2 * 6 + 1 + 1 + 4
    assert len(cache) == 4
    again = run(rng, entries, cache=cache)
    assert again.pairing_count == 2 * 6 + 1 + 1


def test_complementary_forgeries_cancel_without_combiners(suite):
    rng = random.Random(5)
    (pk1, ch1, pf1, _), (pk2, ch2, pf2, _) = entry(rng), entry(rng)
    g1 = suite.hash_to_scalar(pf1.r_mask.encode().encode())
    g2 = suite.hash_to_scalar(pf2.r_mask.encode().encode())
    t = 12345
    # shift sigma_1 by t and sigma_2 so that gamma_1*t + gamma_2*t' == 0
    t2 = (-g1 * t * pow(g2, -1, Q)) % Q
    bad1 = AuditProof(pf1.mu, suite.mul(pf1.sigma, suite.exp(suite.g, t)), pf1.r_mask,
                      pf1.leaf_evidence, pf1.root, pf1.root_sig)
    bad2 = AuditProof(pf2.mu, suite.mul(pf2.sigma, suite.exp(suite.g, t2)), pf2.r_mask,
                      pf2.leaf_evidence, pf2.root, pf2.root_sig)
    entries = [(pk1, ch1, bad1), (pk2, ch2, bad2)]
    assert not verify_proof(*entries[0]) and not verify_proof(*entries[1])
    fooled = batch_verify(BatchTask(entries, [1, 1], 1))
    assert fooled.verdict == ALL_ACCEPT
    caught = run(rng, entries, lam=40)
    assert caught.verdict == SOME_REJECT and caught.culprits == [0, 1]


def test_structural_failures_are_culprits(rng, suite):
    entries = [list(entry(rng)[:3]) for _ in range(4)]
    pf = entries[1][2]
    entries[1][2] = AuditProof(pf.mu, pf.sigma, pf.r_mask, pf.leaf_evidence, pf.root, suite.g)
    pf = entries[3][2]
    entries[3][2] = AuditProof(pf.mu[:0], pf.sigma, pf.r_mask, pf.leaf_evidence, pf.root, pf.root_sig)
    res = run(rng, [tuple(e) for e in entries])
    assert res.culprits == [1, 3]


def test_report_json(rng):
    res = run(rng, [entry(rng)[:3]])
    assert set(res.to_json()) == {"verdict", "culprits", "pairing_count", "k"}
