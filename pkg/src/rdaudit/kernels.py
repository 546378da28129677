"""Backend selection for the modular-arithmetic kernels.

The compiled ``_native`` extension is used when it was built and the modulus
fits in 63 bits; otherwise the pure-Python module is used. Set
``RDAUDIT_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels

MAX_NATIVE_MODULUS = 1 << 63


def _load_native() -> ModuleType | None:
    if os.environ.get("RDAUDIT_PURE_PYTHON", "") not in ("", "0"):
        return None
    try:
        from . import _native
    except ImportError:
        return None
    return _native


native = _load_native()
BACKEND = "cython" if native is not None else "python"


def backend_for(q: int) -> ModuleType:
    if native is not None and q < MAX_NATIVE_MODULUS:
        return native
    return _pykernels


def dot_mod(a, b, q: int) -> int:
    return backend_for(q).dot_mod(a, b, q)


def column_dot_mod(coeffs, rows, width: int, q: int) -> list[int]:
    return backend_for(q).column_dot_mod(coeffs, rows, width, q)


def mul_mod(a: int, b: int, q: int) -> int:
    return backend_for(q).mul_mod(a, b, q)
