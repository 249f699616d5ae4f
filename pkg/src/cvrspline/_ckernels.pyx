# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
# distutils: language = c++
"""Compiled kernels: sparse modular rank and batched patch evaluation."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t
from libcpp.vector cimport vector
from libcpp.queue cimport priority_queue
from libcpp.utility cimport pair

cnp.import_array()


cdef int64_t _inv_mod(int64_t a, int64_t p) nogil:
    cdef int64_t t = 0, newt = 1, r = p, newr = a % p, q, tmp
    while newr != 0:
        q = r // newr
        tmp = t - q * newt
        t = newt
        newt = tmp
        tmp = r - q * newr
        r = newr
        newr = tmp
    if t < 0:
        t += p
    return t


def sparse_rank_mod(rows, Py_ssize_t ncols, int64_t p):
    """Rank over GF(p) of a sparse matrix given as a list of ``{col: val}``.

    Same algorithm as the Python fallback: every row is reduced against the
    existing pivot rows, smallest column first, and becomes a new pivot row
    if anything survives.  Requires ``p < 2**31``.
    """
    if p >= (1 << 31):
        raise ValueError("prime must be below 2**31")
    cdef vector[int64_t] w = vector[int64_t](ncols, 0)
    cdef vector[int] has_pivot = vector[int](ncols, -1)
    cdef vector[vector[pair[int64_t, int64_t]]] pivots
    cdef vector[int64_t] touched
    cdef priority_queue[int64_t] heap  # max-heap on negated columns
    cdef vector[pair[int64_t, int64_t]] newrow
    cdef int64_t c, k, v, f, old, inv
    cdef Py_ssize_t i, j, rank = 0
    for d in rows:
        touched.clear()
        for kk, vv in d.items():
            k = kk
            v = vv % p
            if v:
                w[k] = v
                touched.push_back(k)
                heap.push(-k)
        while not heap.empty():
            c = -heap.top()
            heap.pop()
            if w[c] == 0:
                continue
            if has_pivot[c] >= 0:
                f = w[c]
                j = has_pivot[c]
                for i in range(<Py_ssize_t>pivots[j].size()):
                    k = pivots[j][i].first
                    v = pivots[j][i].second
                    old = w[k]
                    if old == 0:
                        touched.push_back(k)
                        heap.push(-k)
                    w[k] = (old + (p - f) * v) % p
                continue
            # new pivot: collect the remaining nonzeros
            newrow.clear()
            inv = _inv_mod(w[c], p)
            newrow.push_back(pair[int64_t, int64_t](c, 1))
            w[c] = 0
            while not heap.empty():
                k = -heap.top()
                heap.pop()
                if w[k] != 0:
                    newrow.push_back(pair[int64_t, int64_t](k, (w[k] * inv) % p))
                    w[k] = 0
            has_pivot[c] = pivots.size()
            pivots.push_back(newrow)
            rank += 1
        for i in range(<Py_ssize_t>touched.size()):
            w[touched[i]] = 0
    return rank


def eval_patches(double[:, :, ::1] nets, double[:, ::1] rects, cell_idx, double[::1] x, double[::1] y):
    """Evaluate patch ``cell_idx[i]`` at point ``i`` (negative index gives 0)."""
    cdef cnp.int64_t[::1] idx = np.ascontiguousarray(cell_idx, dtype=np.int64)
    cdef Py_ssize_t n = idx.shape[0], i, j, k
    out_arr = np.zeros(n)
    cdef double[::1] out = out_arr
    cdef double u, v, bu[3], bv[3], s
    cdef cnp.int64_t c
    with nogil:
        for i in range(n):
            c = idx[i]
            if c < 0:
                continue
            u = (x[i] - rects[c, 0]) / (rects[c, 1] - rects[c, 0])
            v = (y[i] - rects[c, 2]) / (rects[c, 3] - rects[c, 2])
            bu[0] = (1 - u) * (1 - u)
            bu[1] = 2 * u * (1 - u)
            bu[2] = u * u
            bv[0] = (1 - v) * (1 - v)
            bv[1] = 2 * v * (1 - v)
            bv[2] = v * v
            s = 0
            for j in range(3):
                for k in range(3):
                    s += bu[j] * nets[c, j, k] * bv[k]
            out[i] = s
    return out_arr
