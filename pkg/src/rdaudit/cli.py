"""``rdaudit`` command line.

Exit codes: 0 success/accept, 1 reject or integrity failure, 2 usage error,
3 I/O error or corrupt store.
"""

from __future__ import annotations

import argparse
import os
import random
import sys
import threading
from pathlib import Path

from . import config as configmod
from . import store as storemod
from .dynamics import OPS, UpdateError, UpdateRejected
from .harness import (
    ACK_MODIFIED,
    ACK_NOT_MODIFIED,
    WallClock,
    HarnessError,
    IntegrityError,
    new_client,
    tpa_audit,
)
from .group import get_suite
from .protocol import canonical_json
from .session import ScriptError, replay
from .wire import FrameServer, SocketTransport

EXIT_OK, EXIT_REJECT, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
USER_ENV = "REMOTE_AUDIT_USER"


class UsageError(Exception):
    pass


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--store", default=argparse.SUPPRESS,
                   help=f"store directory (default: ${storemod.STORE_ENV} or ./audit-store)")
    p.add_argument("--config", default=argparse.SUPPRESS, help="key=value config file")
    p.add_argument("--user", default=argparse.SUPPRESS, help=f"acting user (default: ${USER_ENV} or 'user')")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="rdaudit", parents=[common],
                                     description="Remote data auditing simulator: client, cloud server, auditor.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", parents=[common], help="create keys for a user")
    p.add_argument("--sectors", type=int)
    p.add_argument("--sector-bytes", type=int)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("upload", parents=[common], help="encode, tag and upload a file")
    p.add_argument("path")
    p.add_argument("--name", help="stored file name (default: basename of path)")
    p.add_argument("--sectors", type=int, help="sectors per block for a new user")

    p = sub.add_parser("download", parents=[common], help="download and verify a file")
    p.add_argument("name")
    p.add_argument("-o", "--output", help="write bytes here instead of stdout")

    p = sub.add_parser("audit", parents=[common], help="auditor spot-checks a stored file")
    p.add_argument("name")
    p.add_argument("-c", "--challenge-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--remote", help="host:port of a running 'serve' process")

    p = sub.add_parser("batch-audit", parents=[common], help="audit several files in one aggregated check")
    p.add_argument("targets", nargs="+", help="NAME or USER:NAME")
    p.add_argument("-c", "--challenge-size", type=int)
    p.add_argument("--lambda-bits", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("update", parents=[common], help="modify, insert or delete one block")
    p.add_argument("name")
    p.add_argument("op", choices=OPS)
    p.add_argument("index", type=int)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data-file")
    src.add_argument("--text")

    p = sub.add_parser("verify-block", parents=[common], help="single-block audit")
    p.add_argument("name")
    p.add_argument("index", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("log", parents=[common], help="show the operation history")
    p.add_argument("name", nargs="?")
    p.add_argument("--format", choices=("table", "csv"), default="table")

    p = sub.add_parser("corrupt", parents=[common], help="flip one stored bit (test mode)")
    p.add_argument("name")
    p.add_argument("index", type=int)
    p.add_argument("bit", type=int)

    p = sub.add_parser("replay", parents=[common], help="run a session script deterministically")
    p.add_argument("script")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--persist", action="store_true", help="save the resulting state into the store")

    p = sub.add_parser("serve", parents=[common], help="answer framed challenge/update requests")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7878)
    p.add_argument("--timeout", type=float, default=30.0)
    return parser


def _store_path(args) -> Path:
    return Path(getattr(args, "store", None) or os.environ.get(storemod.STORE_ENV) or "audit-store")


def _user(args) -> str:
    return getattr(args, "user", None) or os.environ.get(USER_ENV) or "user"


def _open(args, seed: int | None = None):
    root = _store_path(args)
    cfg = configmod.load(Path(args.config) if getattr(args, "config", None) else None, root)
    if cfg["suite"] != "transparent-mersenne61":
        raise UsageError(f"suite {cfg['suite']!r} is not available in this build")
    h = storemod.load(root, clock=WallClock(), seed=seed)
    return root, cfg, h


def _ensure_user(h, name: str, cfg: dict, sectors: int | None = None):
    if name not in h.clients:
        s = sectors or cfg["sectors"]
        suite = get_suite(cfg["suite"], cfg["hash"])
        h.clients[name] = new_client(name, h._child_rng(), s, cfg["sector_bytes"], suite)
    return h.clients[name]


def _require_user(h, name: str):
    if name not in h.clients:
        raise UsageError(f"unknown user {name!r}; run keygen or upload first")
    return h.clients[name]


def cmd_keygen(args) -> int:
    root, cfg, h = _open(args)
    name = _user(args)
    if name in h.clients and not args.force:
        raise UsageError(f"user {name!r} already has keys (use --force)")
    cfg = configmod.resolve(cfg, sectors=args.sectors, sector_bytes=args.sector_bytes)
    h.clients.pop(name, None)
    client = _ensure_user(h, name, cfg)
    storemod.save(root, h)
    print(f"keys for {name}: s={client.public_key.s} v={client.public_key.v.encode()}")
    return EXIT_OK


def cmd_upload(args) -> int:
    root, cfg, h = _open(args)
    data = Path(args.path).read_bytes()
    name = args.name or Path(args.path).name
    _ensure_user(h, _user(args), cfg, args.sectors)
    meta = h.upload(_user(args), name, data)
    storemod.save(root, h)
    print(f"uploaded {name}: {meta.n} blocks, root {meta.root.hex()}")
    return EXIT_OK


def cmd_download(args) -> int:
    root, cfg, h = _open(args)
    _require_user(h, _user(args))
    try:
        data = h.download(_user(args), args.name)
    except IntegrityError as exc:
        print(f"download rejected: {exc}", file=sys.stderr)
        return EXIT_REJECT
    storemod.save(root, h)
    if args.output:
        Path(args.output).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
    return EXIT_OK


def cmd_audit(args) -> int:
    root, cfg, h = _open(args)
    c = args.challenge_size or cfg["challenge_size"]
    rng = random.Random(args.seed) if args.seed is not None else random.SystemRandom()
    user = _user(args)
    client = h.clients.get(user)
    if args.remote:
        host, _, port = args.remote.rpartition(":")
        with SocketTransport(host, int(port)) as t:
            result, ack = tpa_audit(h.tpa, t, user, args.name, c, rng, client, h.clock)
    else:
        result, ack = tpa_audit(h.tpa, h.transport, user, args.name, c, rng, client, h.clock)
    # a remote server owns its own files; only auditor and client state are ours to write
    storemod.save(root, h, server=not args.remote)
    print(ack.message)
    if not result.accepted:
        print(f"reason: {result.reason.value}", file=sys.stderr)
    return EXIT_OK if result.accepted else EXIT_REJECT


def cmd_batch_audit(args) -> int:
    root, cfg, h = _open(args)
    c = args.challenge_size or cfg["challenge_size"]
    lam = args.lambda_bits or cfg["lambda_bits"]
    if args.seed is not None:
        h.tpa_rng = random.Random(args.seed)
    targets = []
    for t in args.targets:
        user, sep, name = t.partition(":")
        targets.append((user, name) if sep else (_user(args), t))
    res = h.batch_audit(targets, c, lam)
    storemod.save(root, h)
    print(canonical_json(res.to_json()).decode())
    return EXIT_OK if res.all_accept else EXIT_REJECT


def cmd_update(args) -> int:
    root, cfg, h = _open(args)
    _require_user(h, _user(args))
    data = None
    if args.data_file:
        data = Path(args.data_file).read_bytes()
    elif args.text is not None:
        data = args.text.encode()
    try:
        new_root = h.update(_user(args), args.name, args.op, args.index, data)
    except UpdateRejected as exc:
        print(f"update rejected: {exc}", file=sys.stderr)
        return EXIT_REJECT
    storemod.save(root, h)
    print(f"{args.op} {args.name}[{args.index}] accepted, new root {new_root.hex()}")
    return EXIT_OK


def cmd_verify_block(args) -> int:
    root, cfg, h = _open(args)
    if args.seed is not None:
        h.tpa_rng = random.Random(args.seed)
    ack = h.verify_block(_user(args), args.name, args.index)
    storemod.save(root, h)
    ok = ack.verdict == "not_modified"
    print(ACK_NOT_MODIFIED if ok else ACK_MODIFIED)
    return EXIT_OK if ok else EXIT_REJECT


def cmd_log(args) -> int:
    _, _, h = _open(args)
    entries = h.server.log.entries(args.name)
    if args.format == "csv":
        sys.stdout.write(h.server.log.to_csv(entries))
    else:
        sys.stdout.write(h.server.log.render_table(entries))
    return EXIT_OK


def cmd_corrupt(args) -> int:
    root, _, h = _open(args)
    try:
        h.corrupt(_user(args), args.name, args.index, args.bit)
    except IndexError as exc:
        raise UsageError(str(exc)) from exc
    storemod.save(root, h)
    print(f"flipped bit {args.bit} of block {args.index} in {args.name}")
    return EXIT_OK


def cmd_replay(args) -> int:
    path = Path(args.script)
    res = replay(path.read_text(), seed=args.seed, base=path.parent)
    for line in res.output:
        print(line)
    if args.persist:
        storemod.save(_store_path(args), res.harness)
    return EXIT_OK if res.failures == 0 else EXIT_REJECT


def cmd_serve(args) -> int:
    root, _, h = _open(args)
    save_lock = threading.Lock()

    def handler(msg):
        resp = h.server.handle(msg)
        if msg.kind == "root_sig":
            with save_lock:
                storemod.save_server(root, h.server)
        return resp

    srv = FrameServer((args.host, args.port), handler, args.timeout)
    host, port = srv.server_address[:2]
    print(f"listening on {host}:{port}", flush=True)
    try:
        srv.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        srv.server_close()
    return EXIT_OK


COMMANDS = {
    "keygen": cmd_keygen,
    "upload": cmd_upload,
    "download": cmd_download,
    "audit": cmd_audit,
    "batch-audit": cmd_batch_audit,
    "update": cmd_update,
    "verify-block": cmd_verify_block,
    "log": cmd_log,
    "corrupt": cmd_corrupt,
    "replay": cmd_replay,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except storemod.StoreCorrupt as exc:
        print(f"store corrupt: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, ScriptError, UpdateError, configmod.configparser.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except HarnessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REJECT if isinstance(exc, IntegrityError) else EXIT_USAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
