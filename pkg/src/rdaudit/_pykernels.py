"""Pure-Python fallback for the compiled kernels in ``_native``."""

from __future__ import annotations

from typing import Sequence


def dot_mod(a: Sequence[int], b: Sequence[int], q: int) -> int:
    if len(a) != len(b):
        raise ValueError("length mismatch")
    return sum(x * y for x, y in zip(a, b)) % q


def column_dot_mod(coeffs: Sequence[int], rows: Sequence[Sequence[int]], width: int, q: int) -> list[int]:
    if len(coeffs) != len(rows):
        raise ValueError("length mismatch")
    out = [0] * width
    for c, row in zip(coeffs, rows):
        if len(row) != width:
            raise ValueError("ragged rows")
        for j in range(width):
            out[j] += c * row[j]
    return [v % q for v in out]


def mul_mod(a: int, b: int, q: int) -> int:
    return a * b % q
