"""On-disk layout for all three parties.

::

    <root>/client/<user>/state.json
    <root>/server/files/<file_id>/{metadata.json, manifest.txt, mht.leaves}
    <root>/server/files/<file_id>/blocks/<uid>.bin
    <root>/server/files/<file_id>/tags/<uid>.tag
    <root>/server/log.csv
    <root>/tpa/state.json

Every write goes to a temporary name and is renamed into place.
"""

from __future__ import annotations

import datetime as dt
import json
import os
import shutil
import tempfile
from pathlib import Path

from .group import DecodeError
from .harness import DATE_FMT, TIME_FMT, ClientState, Harness, LogicalClock, OperationLog, ServerState, TpaState
from .merkle import MhtTree
from .protocol import BlockTag, PublicKey, StoredFile, canonical_json, leaf_digest
from .protocol import root_sig_valid

STORE_ENV = "REMOTE_AUDIT_STORE"


class StoreCorrupt(Exception):
    pass


def atomic_write(path: Path, data: bytes | str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_if_changed(path: Path, data: bytes | str) -> None:
    # uid-named files almost never change; skipping them avoids an fsync per block
    raw = data.encode("utf-8") if isinstance(data, str) else data
    try:
        if path.read_bytes() == raw:
            return
    except OSError:
        pass
    atomic_write(path, raw)


def _tag_text(stored: StoredFile, uid: str) -> str:
    return f"{stored.tags[uid].sigma.encode()}\n{stored.elements[uid].encode()}\n"


def file_metadata_json(stored: StoredFile) -> dict:
    return {
        "file_id": stored.file_id,
        "owner": stored.owner,
        "name": stored.name,
        "public_key": stored.pk.to_json(),
        "root": stored.tree.root.hex(),
        "root_sig": stored.root_sig.encode(),
        "n": stored.n,
        "s": stored.pk.s,
        "sector_bytes": stored.sector_bytes,
    }


def save_file(root: Path, stored: StoredFile) -> None:
    if stored.pending is not None:
        raise ValueError(f"file {stored.file_id} has an uncommitted update")
    d = Path(root) / "server" / "files" / stored.file_id
    for uid in stored.manifest:
        _write_if_changed(d / "blocks" / f"{uid}.bin", stored.blocks[uid])
        _write_if_changed(d / "tags" / f"{uid}.tag", _tag_text(stored, uid))
    atomic_write(d / "mht.leaves", stored.tree.dump_shape())
    atomic_write(d / "manifest.txt", "".join(u + "\n" for u in stored.manifest))
    # metadata last: it is the commit point for the file
    atomic_write(d / "metadata.json", canonical_json(file_metadata_json(stored)))
    live = set(stored.manifest)
    for sub, ext in (("blocks", ".bin"), ("tags", ".tag")):
        for p in (d / sub).glob(f"*{ext}"):
            if p.stem not in live:
                p.unlink()


def save_server(root: Path, server: ServerState) -> None:
    files_dir = Path(root) / "server" / "files"
    files_dir.mkdir(parents=True, exist_ok=True)
    for stored in server.files.values():
        save_file(root, stored)
    for d in files_dir.iterdir():
        if d.is_dir() and d.name not in server.files:
            shutil.rmtree(d)
    atomic_write(Path(root) / "server" / "log.csv", server.log.to_csv())


def save(root: Path, h: Harness, server: bool = True) -> None:
    root = Path(root)
    for name, client in h.clients.items():
        atomic_write(root / "client" / name / "state.json", canonical_json(client.to_json()))
    if server:
        save_server(root, h.server)
    atomic_write(root / "tpa" / "state.json", canonical_json(h.tpa.to_json()))


def _load_file(d: Path) -> StoredFile:
    fid = d.name
    try:
        meta = json.loads((d / "metadata.json").read_text())
    except (OSError, ValueError) as exc:
        raise StoreCorrupt(f"file {fid}: unreadable metadata.json ({exc})") from exc
    pk = PublicKey.from_json(meta["public_key"])
    suite = pk.suite
    manifest = (d / "manifest.txt").read_text().split()
    if len(manifest) != meta["n"]:
        raise StoreCorrupt(f"file {fid}: manifest has {len(manifest)} entries, metadata says {meta['n']}")
    blocks, tags, elements = {}, {}, {}
    for uid in manifest:
        bpath, tpath = d / "blocks" / f"{uid}.bin", d / "tags" / f"{uid}.tag"
        if not bpath.is_file():
            raise StoreCorrupt(f"file {fid}: missing block {uid}")
        if not tpath.is_file():
            raise StoreCorrupt(f"file {fid}: missing tag {uid}")
        blocks[uid] = bpath.read_bytes()
        lines = tpath.read_text().split("\n")
        try:
            if len(lines) != 3 or lines[2]:
                raise DecodeError("wrong line count")
            tags[uid] = BlockTag(suite.decode_group(lines[0]))
            elements[uid] = suite.decode_group(lines[1])
        except DecodeError as exc:
            raise StoreCorrupt(f"file {fid}: corrupt tag {uid} ({exc})") from exc
    root = bytes.fromhex(meta["root"])
    try:
        tree = MhtTree.load_shape((d / "mht.leaves").read_text())
    except (OSError, ValueError) as exc:
        raise StoreCorrupt(f"file {fid}: unreadable mht.leaves ({exc})") from exc
    if tree.root != root:
        raise StoreCorrupt(f"file {fid}: rebuilt tree root does not match metadata root")
    if tree.leaves != [leaf_digest(elements[u]) for u in manifest]:
        raise StoreCorrupt(f"file {fid}: tree leaves do not match the stored tags")
    root_sig = suite.decode_group(meta["root_sig"])
    if not root_sig_valid(pk, root, root_sig):
        raise StoreCorrupt(f"file {fid}: root signature does not verify")
    return StoredFile(fid, pk, manifest, blocks, tags, elements, tree, root_sig,
                      meta["sector_bytes"], meta["owner"], meta["name"])


def load_server(root: Path, server: ServerState) -> None:
    files_dir = Path(root) / "server" / "files"
    if files_dir.is_dir():
        for d in sorted(files_dir.iterdir()):
            if not d.is_dir():
                continue
            try:
                stored = _load_file(d)
            except StoreCorrupt:
                raise
            except (OSError, KeyError, ValueError) as exc:
                raise StoreCorrupt(f"file {d.name}: {exc}") from exc
            server.files[stored.file_id] = stored
            server.names[(stored.owner, stored.name)] = stored.file_id
    log = Path(root) / "server" / "log.csv"
    if log.is_file():
        try:
            server.log = OperationLog.from_csv(log.read_text())
        except ValueError as exc:
            raise StoreCorrupt(f"server log: {exc}") from exc


def load(root: Path, clock=None, test_mode: bool = True, seed: int | None = None) -> Harness:
    """Load a store into a fresh harness; an empty or missing directory gives an empty one."""
    root = Path(root)
    h = Harness(seed=seed, clock=clock, test_mode=test_mode)
    cdir = root / "client"
    if cdir.is_dir():
        for d in sorted(cdir.iterdir()):
            p = d / "state.json"
            if p.is_file():
                try:
                    client = ClientState.from_json(json.loads(p.read_text()))
                    client.rng = h._child_rng()
                    h.clients[d.name] = client
                except (KeyError, ValueError) as exc:
                    raise StoreCorrupt(f"client {d.name}: {exc}") from exc
    load_server(root, h.server)
    last = h.server.log.entries()[-1:]
    if last and isinstance(h.clock, LogicalClock):
        # resume after the persisted history so new entries stay in order
        resume = dt.datetime.strptime(f"{last[0].date} {last[0].time}", f"{DATE_FMT} {TIME_FMT}") + h.clock.step
        h.clock.set(max(h.clock.current, resume))
    tp = root / "tpa" / "state.json"
    if tp.is_file():
        try:
            h.tpa = TpaState.from_json(json.loads(tp.read_text()))
        except (KeyError, ValueError) as exc:
            raise StoreCorrupt(f"tpa state: {exc}") from exc
    return h


def snapshot(h: Harness) -> bytes:
    """Canonical serialization of all persisted state, for round-trip comparison."""
    files = {}
    for fid, stored in sorted(h.server.files.items()):
        files[fid] = {
            "metadata": file_metadata_json(stored),
            "manifest": list(stored.manifest),
            "blocks": {u: stored.blocks[u].hex() for u in stored.manifest},
            "tags": {u: _tag_text(stored, u) for u in stored.manifest},
            "tree": stored.tree.dump_shape(),
        }
    return canonical_json({
        "clients": {n: c.to_json() for n, c in sorted(h.clients.items())},
        "server": {"files": files, "log": h.server.log.to_csv()},
        "tpa": h.tpa.to_json(),
    })
