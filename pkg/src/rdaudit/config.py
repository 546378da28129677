"""Defaults, ``key=value`` config files and their precedence (flags > file > defaults)."""

from __future__ import annotations

import configparser
from pathlib import Path

DEFAULTS = {
    "suite": "transparent-mersenne61",
    "hash": "sha256",
    "sectors": 1,
    "sector_bytes": 7,
    "challenge_size": 10,
    "lambda_bits": 40,
}

CONFIG_NAME = "rdaudit.conf"


def parse(text: str) -> dict:
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    cp.read_string("[rdaudit]\n" + text)
    out = {}
    for key, raw in cp["rdaudit"].items():
        if key not in DEFAULTS:
            raise ValueError(f"unknown config key {key!r}")
        value = raw.strip().strip('"').strip("'")
        out[key] = int(value) if isinstance(DEFAULTS[key], int) else value
    return out


def load(path: Path | None = None, store: Path | None = None) -> dict:
    cfg = dict(DEFAULTS)
    if path is None and store is not None and (Path(store) / CONFIG_NAME).is_file():
        path = Path(store) / CONFIG_NAME
    if path is not None:
        cfg.update(parse(Path(path).read_text()))
    return cfg


def resolve(cfg: dict, **flags) -> dict:
    out = dict(cfg)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out
