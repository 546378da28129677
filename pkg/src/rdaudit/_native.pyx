# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled modular-arithmetic kernels for moduli below 2**63."""

ctypedef unsigned long long u64

cdef extern from *:
    """
    typedef unsigned __int128 rd_u128;
    static inline unsigned long long rd_mulmod(unsigned long long a,
                                               unsigned long long b,
                                               unsigned long long q) {
        return (unsigned long long)(((rd_u128)a * b) % q);
    }
    static inline unsigned long long rd_fmadd(unsigned long long acc,
                                              unsigned long long a,
                                              unsigned long long b,
                                              unsigned long long q) {
        return (unsigned long long)(((rd_u128)a * b + acc) % q);
    }
    """
    u64 rd_mulmod(u64 a, u64 b, u64 q) nogil
    u64 rd_fmadd(u64 acc, u64 a, u64 b, u64 q) nogil


def dot_mod(a, b, u64 q):
    cdef Py_ssize_t n = len(a)
    cdef Py_ssize_t i
    cdef u64 acc = 0
    if len(b) != n:
        raise ValueError("length mismatch")
    for i in range(n):
        acc = rd_fmadd(acc, <u64>a[i] % q, <u64>b[i] % q, q)
    return acc


def column_dot_mod(coeffs, rows, Py_ssize_t width, u64 q):
    cdef Py_ssize_t n = len(coeffs)
    cdef Py_ssize_t i, j
    cdef u64 c
    cdef list out
    cdef u64[64] small
    if len(rows) != n:
        raise ValueError("length mismatch")
    if width <= 64:
        for j in range(width):
            small[j] = 0
        for i in range(n):
            c = <u64>coeffs[i] % q
            row = rows[i]
            if len(row) != width:
                raise ValueError("ragged rows")
            for j in range(width):
                small[j] = rd_fmadd(small[j], c, <u64>row[j] % q, q)
        return [small[j] for j in range(width)]
    out = [0] * width
    for i in range(n):
        c = <u64>coeffs[i] % q
        row = rows[i]
        if len(row) != width:
            raise ValueError("ragged rows")
        for j in range(width):
            out[j] = rd_fmadd(<u64>out[j], c, <u64>row[j] % q, q)
    return out


def mul_mod(u64 a, u64 b, u64 q):
    return rd_mulmod(a % q, b % q, q)
