# cython: language_level=3
"""Compiled level-of-fill ILU kernels.

Same algorithms and outputs as ``_ilu_py``; the factors are stored as one
CSR array holding the strict lower part (unit diagonal implied), the
diagonal and the strict upper part, columns ascending in every row.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

ctypedef cnp.int64_t idx_t


cdef inline void _insert(idx_t[::1] nxt, idx_t END, idx_t j) noexcept:
    cdef idx_t prev = END
    cdef idx_t cur = nxt[END]
    while cur < j:
        prev = cur
        cur = nxt[cur]
    nxt[prev] = j
    nxt[j] = cur


def symbolic(const idx_t[::1] indptr, const idx_t[::1] indices, Py_ssize_t n, int fill):
    """Level-of-fill pattern. Returns ``(lu_indptr, lu_indices, levels, diag)``."""
    cdef Py_ssize_t cap = max(<Py_ssize_t>(indptr[n] + n), <Py_ssize_t>16)
    cdef cnp.ndarray[idx_t, ndim=1] out_ptr = np.zeros(n + 1, dtype=np.int64)
    cdef cnp.ndarray[idx_t, ndim=1] out_idx = np.empty(cap, dtype=np.int64)
    cdef cnp.ndarray[idx_t, ndim=1] out_lev = np.empty(cap, dtype=np.int64)
    cdef cnp.ndarray[idx_t, ndim=1] diag = np.empty(n, dtype=np.int64)
    cdef idx_t[::1] nxt = np.empty(n + 1, dtype=np.int64)
    cdef idx_t[::1] lev = np.empty(n, dtype=np.int64)
    cdef idx_t[::1] inrow = np.full(n, -1, dtype=np.int64)
    cdef idx_t[::1] oi = out_idx
    cdef idx_t[::1] ol = out_lev
    cdef Py_ssize_t i, p, k, j, q, prev, cur, pos = 0
    cdef idx_t nl
    cdef idx_t END = n
    for i in range(n):
        # sorted singly-linked list of the columns of the working row
        nxt[END] = END
        inrow[i] = i
        lev[i] = 0
        _insert(nxt, END, i)
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if inrow[j] != i:
                inrow[j] = i
                lev[j] = 0
                _insert(nxt, END, j)
        k = nxt[END]
        while k < i:
            q = diag[k] + 1
            while q < out_ptr[k + 1]:
                j = oi[q]
                nl = lev[k] + ol[q] + 1
                if nl <= fill:
                    if inrow[j] != i:
                        inrow[j] = i
                        lev[j] = nl
                        # j > k: insertion point is after k
                        prev = k
                        cur = nxt[k]
                        while cur < j:
                            prev = cur
                            cur = nxt[cur]
                        nxt[prev] = j
                        nxt[j] = cur
                    elif nl < lev[j]:
                        lev[j] = nl
                q += 1
            k = nxt[k]
        cur = nxt[END]
        while cur != END:
            if pos >= cap:
                cap *= 2
                out_idx = np.resize(out_idx, cap)
                out_lev = np.resize(out_lev, cap)
                oi = out_idx
                ol = out_lev
            oi[pos] = cur
            ol[pos] = lev[cur]
            if cur == i:
                diag[i] = pos
            pos += 1
            cur = nxt[cur]
        out_ptr[i + 1] = pos
    return out_ptr, out_idx[:pos].copy(), out_lev[:pos].copy(), diag


def numeric(const idx_t[::1] indptr, const idx_t[::1] indices, const double[::1] data,
            const idx_t[::1] lu_ptr, const idx_t[::1] lu_idx, const idx_t[::1] diag,
            double pivot_rtol):
    """IKJ incomplete elimination on a fixed pattern.

    Returns ``(values, bad_row)`` with ``bad_row = -1`` on success.
    """
    cdef Py_ssize_t n = lu_ptr.shape[0] - 1
    cdef cnp.ndarray[double, ndim=1] vals = np.zeros(lu_ptr[n], dtype=np.float64)
    cdef double[::1] v = vals
    cdef idx_t[::1] where = np.full(n, -1, dtype=np.int64)
    cdef Py_ssize_t i, p, q, k, j
    cdef double w, rowmax
    for i in range(n):
        for p in range(lu_ptr[i], lu_ptr[i + 1]):
            where[lu_idx[p]] = p
        rowmax = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            v[where[indices[p]]] += data[p]
            if fabs(data[p]) > rowmax:
                rowmax = fabs(data[p])
        for p in range(lu_ptr[i], diag[i]):
            k = lu_idx[p]
            w = v[p] / v[diag[k]]
            v[p] = w
            if w != 0.0:
                for q in range(diag[k] + 1, lu_ptr[k + 1]):
                    j = where[lu_idx[q]]
                    if j >= 0:
                        v[j] -= w * v[q]
        for p in range(lu_ptr[i], lu_ptr[i + 1]):
            where[lu_idx[p]] = -1
        if fabs(v[diag[i]]) <= pivot_rtol * rowmax or v[diag[i]] == 0.0:
            return vals, i
    return vals, -1


def solve(const idx_t[::1] lu_ptr, const idx_t[::1] lu_idx, const double[::1] vals,
          const idx_t[::1] diag, const double[::1] b):
    """Forward (unit lower) then backward (upper) substitution."""
    cdef Py_ssize_t n = lu_ptr.shape[0] - 1
    cdef cnp.ndarray[double, ndim=1] xa = np.empty(n, dtype=np.float64)
    cdef double[::1] x = xa
    cdef Py_ssize_t i, p
    cdef double s
    for i in range(n):
        s = b[i]
        for p in range(lu_ptr[i], diag[i]):
            s -= vals[p] * x[lu_idx[p]]
        x[i] = s
    for i in range(n - 1, -1, -1):
        s = x[i]
        for p in range(diag[i] + 1, lu_ptr[i + 1]):
            s -= vals[p] * x[lu_idx[p]]
        x[i] = s / vals[diag[i]]
    return xa
