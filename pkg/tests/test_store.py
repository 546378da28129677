import json
import os
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from rdaudit import store
from rdaudit.harness import Harness, LogicalClock
from rdaudit.merkle import MhtTree


def busy_harness(seed=1):
    h = Harness(seed=seed, clock=LogicalClock())
    h.upload("alice", "a.bin", b"alpha" * 100)
    h.upload("bob", "b.bin", b"beta" * 80)
    h.update("alice", "a.bin", "insert_after", 3, b"ins")
    h.update("alice", "a.bin", "delete", 0)
    h.update("bob", "b.bin", "modify", 2, b"mod")
    h.audit("alice", "a.bin", 10)
    h.verify_block("bob", "b.bin", 1)
    return h


def reload(root):
    return store.load(root, clock=LogicalClock())


def test_round_trip_is_byte_identical(tmp_path):
    h = busy_harness()
    store.save(tmp_path, h)
    again = reload(tmp_path)
    assert store.snapshot(again) == store.snapshot(h)
    store.save(tmp_path, again)
    assert store.snapshot(reload(tmp_path)) == store.snapshot(h)


def test_layout(tmp_path):
    h = busy_harness()
    store.save(tmp_path, h)
    fid = h.server.lookup("alice", "a.bin").file_id
    d = tmp_path / "server" / "files" / fid
    for name in ("metadata.json", "manifest.txt", "mht.leaves"):
        assert (d / name).is_file()
    manifest = (d / "manifest.txt").read_text().split()
    assert sorted(p.stem for p in (d / "blocks").glob("*.bin")) == sorted(manifest)
    assert sorted(p.stem for p in (d / "tags").glob("*.tag")) == sorted(manifest)
    assert (tmp_path / "server" / "log.csv").read_text().startswith("UserName,Action,File Name,Date,Time\n")
    assert (tmp_path / "client" / "alice" / "state.json").is_file()
    assert (tmp_path / "tpa" / "state.json").is_file()
    assert not list(tmp_path.rglob("*.tmp"))


def test_empty_store_initializes(tmp_path):
    h = reload(tmp_path / "missing")
    assert not h.clients and not h.server.files and not len(h.server.log)


def test_reload_preserves_audit_verdicts(tmp_path):
    h = busy_harness()
    h.corrupt("bob", "b.bin", 0, 5)
    stored = h.server.lookup("bob", "b.bin")
    before = [h.audit(u, f, n)[0].accepted for u, f, n in
              (("alice", "a.bin", 100), ("bob", "b.bin", stored.n))]
    store.save(tmp_path, h)
    again = reload(tmp_path)
    after = [again.audit(u, f, n)[0].accepted for u, f, n in
             (("alice", "a.bin", 100), ("bob", "b.bin", stored.n))]
    assert before == after == [True, False]
    again.update("alice", "a.bin", "modify", 0, b"reload")
    assert again.audit("alice", "a.bin", 100)[0].accepted


def file_dir(root, h, user, name):
    return Path(root) / "server" / "files" / h.server.lookup(user, name).file_id


def test_truncated_tag_names_uid(tmp_path):
    h = busy_harness()
    store.save(tmp_path, h)
    d = file_dir(tmp_path, h, "alice", "a.bin")
    uid = (d / "manifest.txt").read_text().split()[2]
    tag = d / "tags" / f"{uid}.tag"
    tag.write_text(tag.read_text()[:10])
    with pytest.raises(store.StoreCorrupt, match=uid):
        reload(tmp_path)


@pytest.mark.parametrize("damage, message", [
    (lambda d: (d / "blocks" / next(iter(sorted(os.listdir(d / "blocks"))))).unlink(), "missing block"),
    (lambda d: (d / "tags" / next(iter(sorted(os.listdir(d / "tags"))))).unlink(), "missing tag"),
    (lambda d: (d / "manifest.txt").write_text("abc\n"), "manifest"),
    (lambda d: (d / "metadata.json").write_text("{"), "metadata"),
    (lambda d: (d / "mht.leaves").write_text("zz 0\n"), "mht.leaves"),
])
def test_damaged_store_refused(tmp_path, damage, message):
    h = busy_harness()
    store.save(tmp_path, h)
    damage(file_dir(tmp_path, h, "alice", "a.bin"))
    with pytest.raises(store.StoreCorrupt, match=message):
        reload(tmp_path)


def test_tampered_root_refused(tmp_path):
    h = busy_harness()
    store.save(tmp_path, h)
    d = file_dir(tmp_path, h, "alice", "a.bin")
    meta = json.loads((d / "metadata.json").read_text())
    meta["root"] = "00" * 32
    (d / "metadata.json").write_text(json.dumps(meta))
    with pytest.raises(store.StoreCorrupt, match="root"):
        reload(tmp_path)


def test_swapped_tree_refused(tmp_path):
    h = busy_harness()
    store.save(tmp_path, h)
    d = file_dir(tmp_path, h, "alice", "a.bin")
    leaves = MhtTree.load_shape((d / "mht.leaves").read_text()).leaves
    (d / "mht.leaves").write_text(MhtTree.build(leaves[::-1]).dump_shape())
    with pytest.raises(store.StoreCorrupt):
        reload(tmp_path)


def test_pending_update_not_saved(tmp_path):
    from rdaudit.dynamics import exec_update, prepare_update
    h = busy_harness()
    c = h.clients["alice"]
    stored = h.server.lookup("alice", "a.bin")
    exec_update(stored, prepare_update(c.keypair, c.public_key, stored.file_id, "delete", 0))
    with pytest.raises(ValueError):
        store.save(tmp_path, h)


def test_deleted_blocks_are_removed(tmp_path):
    h = busy_harness()
    store.save(tmp_path, h)
    h.update("alice", "a.bin", "delete", 1)
    store.save(tmp_path, h)
    d = file_dir(tmp_path, h, "alice", "a.bin")
    assert len(list((d / "blocks").glob("*.bin"))) == h.server.lookup("alice", "a.bin").n


@settings(max_examples=15, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["modify", "insert_after", "delete", "audit"]),
                          st.integers(0, 10 ** 6)), max_size=12))
def test_reload_after_scripted_ops(tmp_path_factory, ops):
    root = tmp_path_factory.mktemp("store")
    h = Harness(seed=5, clock=LogicalClock())
    h.upload("u", "f", b"seed" * 30)
    for op, k in ops:
        n = h.clients["u"].files["f"].n
        if op == "audit":
            if n:
                h.audit("u", "f", 5)
        elif op == "insert_after" or n == 0:
            h.update("u", "f", "insert_after", k % (n + 1) - 1, b"i")
        else:
            h.update("u", "f", op, k % n, b"m" if op == "modify" else None)
    store.save(root, h)
    again = reload(root)
    assert store.snapshot(again) == store.snapshot(h)
    if h.clients["u"].files["f"].n:
        assert again.audit("u", "f", 10)[0].accepted
