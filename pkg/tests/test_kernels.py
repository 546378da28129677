import importlib

import pytest
from hypothesis import given, strategies as st

from rdaudit import _pykernels, kernels
from rdaudit.group import MERSENNE61 as Q

backends = [_pykernels]
if kernels.native is not None:
    backends.append(kernels.native)

elems = st.integers(min_value=0, max_value=Q - 1)


@pytest.mark.parametrize("mod", backends, ids=lambda m: m.__name__)
def test_small_known_values(mod):
    assert mod.dot_mod([1, 2, 3], [4, 5, 6], Q) == 32
    assert mod.dot_mod([], [], Q) == 0
    assert mod.dot_mod([Q - 1], [Q - 1], Q) == 1
    assert mod.column_dot_mod([2, 3], [[1, 1], [10, 0]], 2, Q) == [32, 2]
    assert mod.mul_mod(Q - 1, 2, Q) == Q - 2


@pytest.mark.parametrize("mod", backends, ids=lambda m: m.__name__)
def test_length_checks(mod):
    with pytest.raises(ValueError):
        mod.dot_mod([1], [1, 2], Q)
    with pytest.raises(ValueError):
        mod.column_dot_mod([1], [[1], [2]], 1, Q)
    with pytest.raises(ValueError):
        mod.column_dot_mod([1], [[1, 2]], 1, Q)


@given(st.lists(st.tuples(elems, elems), max_size=80))
def test_native_matches_python_dot(pairs):
    a = [x for x, _ in pairs]
    b = [y for _, y in pairs]
    expected = sum(x * y for x, y in pairs) % Q
    for mod in backends:
        assert mod.dot_mod(a, b, Q) == expected


@given(st.integers(min_value=1, max_value=70), st.data())
def test_native_matches_python_columns(width, data):
    rows = data.draw(st.lists(st.lists(elems, min_size=width, max_size=width), max_size=12))
    coeffs = data.draw(st.lists(elems, min_size=len(rows), max_size=len(rows)))
    expected = [sum(c * r[j] for c, r in zip(coeffs, rows)) % Q for j in range(width)]
    for mod in backends:
        assert mod.column_dot_mod(coeffs, rows, width, Q) == expected


def test_large_modulus_falls_back_to_python():
    big = (1 << 127) - 1
    assert kernels.backend_for(big) is _pykernels
    assert kernels.dot_mod([big - 1], [big - 1], big) == 1


def test_env_forces_fallback(monkeypatch):
    monkeypatch.setenv("RDAUDIT_PURE_PYTHON", "1")
    try:
        mod = importlib.reload(kernels)
        assert mod.BACKEND == "python"
        assert mod.dot_mod([3], [4], Q) == 12
    finally:
        monkeypatch.delenv("RDAUDIT_PURE_PYTHON")
        importlib.reload(kernels)


def test_benchmark_script_runs(monkeypatch, capsys):
    import runpy
    from pathlib import Path
    script = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    monkeypatch.setattr("sys.argv", [str(script), "--repeat", "1"])
    runpy.run_path(str(script), run_name="__main__")
    out = capsys.readouterr().out
    assert "prove+verify" in out and "dot_mod" in out
