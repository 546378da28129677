"""Compare the compiled and pure-Python kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]

Reports the best-of-N time for the raw kernels and for an end-to-end
prove/verify cycle with each backend swapped in.
"""

from __future__ import annotations

import argparse
import random
import timeit

from rdaudit import _pykernels, kernels
from rdaudit.group import MERSENNE61 as Q
from rdaudit.protocol import StoredFile, encode_file, gen_challenge, gen_proof, keygen, sig_gen, verify_proof


def raw_cases(rng):
    a = [rng.randrange(Q) for _ in range(4096)]
    b = [rng.randrange(Q) for _ in range(4096)]
    rows = [[rng.randrange(Q) for _ in range(16)] for _ in range(512)]
    coeffs = [rng.randrange(Q) for _ in range(512)]
    return {
        "dot_mod (4096)": lambda m: m.dot_mod(a, b, Q),
        "column_dot_mod (512x16)": lambda m: m.column_dot_mod(coeffs, rows, 16, Q),
        "mul_mod x4096": lambda m: [m.mul_mod(x, y, Q) for x, y in zip(a, b)],
    }


def end_to_end(rng):
    kp, pk = keygen(rng, 16)
    blocks = encode_file(rng.randbytes(200_000), 16, rng=rng)
    tags, _, meta = sig_gen(kp, pk, blocks, "bench")
    stored = StoredFile.from_upload(pk, blocks, tags, meta)
    ch = gen_challenge(rng, stored.n, 460, "bench")

    def cycle(_module):
        assert verify_proof(pk, ch, gen_proof(stored, ch, b"m" * 32))
    return {"prove+verify (s=16, c=460)": cycle}


def timed(fn, module, repeat):
    native = kernels.native
    kernels.native = module if module is not _pykernels else None
    try:
        return min(timeit.repeat(lambda: fn(module), number=1, repeat=repeat))
    finally:
        kernels.native = native


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = random.Random(0)
    if kernels.native is None:
        print("compiled extension not built; only the Python backend is available")
    cases = {**raw_cases(rng), **end_to_end(rng)}
    print(f"{'case':32} {'python':>10} {'native':>10} {'speedup':>8}")
    for name, fn in cases.items():
        py = timed(fn, _pykernels, args.repeat)
        if kernels.native is None:
            print(f"{name:32} {py * 1e3:9.2f}ms {'-':>10} {'-':>8}")
            continue
        nat = timed(fn, kernels.native, args.repeat)
        print(f"{name:32} {py * 1e3:9.2f}ms {nat * 1e3:9.2f}ms {py / nat:7.1f}x")


if __name__ == "__main__":
    main()
