"""Line-oriented session scripts replayed against a ``Harness``.

Grammar, one command per line (``#`` starts a comment, arguments are
shell-quoted)::

    user NAME [sectors=N]
    clock YYYY-MM-DD HH:MM:SS
    upload FILE DATA
    download FILE
    update FILE (modify|insert_after|delete) INDEX [DATA]
    audit FILE [C]
    verify FILE INDEX
    corrupt FILE INDEX BIT
    log [csv|table]

DATA is ``text:...``, ``hex:...``, ``random:N`` (seeded bytes) or ``@path``.
"""

from __future__ import annotations

import datetime as dt
import shlex
from dataclasses import dataclass, field
from pathlib import Path

from .dynamics import UpdateRejected
from .harness import DATE_FMT, TIME_FMT, Harness, HarnessError, LogicalClock


class ScriptError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass
class SessionResult:
    harness: Harness
    output: list[str] = field(default_factory=list)
    failures: int = 0


def _payload(arg: str, h: Harness, base: Path | None) -> bytes:
    kind, sep, rest = arg.partition(":")
    if arg.startswith("@"):
        path = Path(arg[1:])
        return (path if path.is_absolute() or base is None else base / path).read_bytes()
    if not sep:
        raise ValueError(f"bad data argument {arg!r}")
    if kind == "text":
        return rest.encode("utf-8")
    if kind == "hex":
        return bytes.fromhex(rest)
    if kind == "random":
        return h.rng.randbytes(int(rest))
    raise ValueError(f"bad data argument {arg!r}")


def replay(script: str, harness: Harness | None = None, seed: int = 0, base: Path | None = None) -> SessionResult:
    h = harness or Harness(seed=seed, clock=LogicalClock())
    res = SessionResult(h)
    user = None
    for lineno, raw in enumerate(script.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            args = shlex.split(line)
        except ValueError as exc:
            raise ScriptError(lineno, str(exc)) from exc
        cmd, rest = args[0], args[1:]
        try:
            if cmd == "user":
                user = rest[0]
                opts = dict(a.split("=", 1) for a in rest[1:])
                h.user(user, int(opts["sectors"]) if "sectors" in opts else None)
                continue
            if cmd == "clock":
                if not isinstance(h.clock, LogicalClock):
                    raise ScriptError(lineno, "clock needs a logical clock")
                h.clock.set(dt.datetime.strptime(" ".join(rest), f"{DATE_FMT} {TIME_FMT}"))
                continue
            if cmd == "log":
                fmt = rest[0] if rest else "table"
                text = h.server.log.to_csv() if fmt == "csv" else h.server.log.render_table()
                res.output.append(text.rstrip("\n"))
                continue
            if user is None:
                raise ScriptError(lineno, "no user selected")
            if cmd == "upload":
                meta = h.upload(user, rest[0], _payload(rest[1], h, base))
                res.output.append(f"upload {rest[0]}: {meta.n} blocks")
            elif cmd == "download":
                data = h.download(user, rest[0])
                res.output.append(f"download {rest[0]}: {len(data)} bytes")
            elif cmd == "update":
                data = _payload(rest[3], h, base) if len(rest) > 3 else None
                root = h.update(user, rest[0], rest[1], int(rest[2]), data)
                res.output.append(f"update {rest[0]} {rest[1]} {rest[2]}: root {root.hex()[:16]}")
            elif cmd == "audit":
                c = int(rest[1]) if len(rest) > 1 else 10
                result, ack = h.audit(user, rest[0], c)
                res.output.append(f"audit {rest[0]}: {ack.message}")
                res.failures += not result.accepted
            elif cmd == "verify":
                ack = h.verify_block(user, rest[0], int(rest[1]))
                res.output.append(f"verify {rest[0]} {rest[1]}: "
                                  + ("data not modified" if ack.verdict == "not_modified" else "data modified"))
                res.failures += ack.verdict != "not_modified"
            elif cmd == "corrupt":
                h.corrupt(user, rest[0], int(rest[1]), int(rest[2]))
                res.output.append(f"corrupt {rest[0]} {rest[1]} {rest[2]}")
            else:
                raise ScriptError(lineno, f"unknown command {cmd!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, ScriptError):
                raise
            raise ScriptError(lineno, str(exc)) from exc
        except (HarnessError, UpdateRejected) as exc:
            res.output.append(f"{cmd} failed: {exc}")
            res.failures += 1
    return res
