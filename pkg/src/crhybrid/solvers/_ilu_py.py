"""Pure-Python ILU(k) kernels, used when the compiled core is unavailable.

Mirrors ``_ilu_core.pyx`` exactly (same pattern, same elimination order),
only slower.
"""
from __future__ import annotations

import heapq

import numpy as np


def symbolic(indptr, indices, n, fill):
    out_ptr = [0]
    out_idx: list[int] = []
    out_lev: list[int] = []
    diag = np.empty(n, dtype=np.int64)
    for i in range(n):
        row = {int(j): 0 for j in indices[indptr[i]:indptr[i + 1]]}
        row[i] = 0
        heap = [j for j in row if j < i]
        heapq.heapify(heap)
        while heap:
            k = heapq.heappop(heap)
            lk = row[k]
            for q in range(diag[k] + 1, out_ptr[k + 1]):
                j = out_idx[q]
                nl = lk + out_lev[q] + 1
                if nl > fill:
                    continue
                old = row.get(j)
                if old is None:
                    row[j] = nl
                    if j < i:
                        heapq.heappush(heap, j)
                elif nl < old:
                    row[j] = nl
        cols = sorted(row)
        diag[i] = len(out_idx) + cols.index(i)
        out_idx.extend(cols)
        out_lev.extend(row[j] for j in cols)
        out_ptr.append(len(out_idx))
    return (
        np.asarray(out_ptr, dtype=np.int64),
        np.asarray(out_idx, dtype=np.int64),
        np.asarray(out_lev, dtype=np.int64),
        diag,
    )


def numeric(indptr, indices, data, lu_ptr, lu_idx, diag, pivot_rtol):
    n = len(lu_ptr) - 1
    vals = np.zeros(lu_ptr[n])
    lu_idx_l = lu_idx.tolist()
    lu_ptr_l = lu_ptr.tolist()
    diag_l = diag.tolist()
    v = vals.tolist()
    for i in range(n):
        start, stop = lu_ptr_l[i], lu_ptr_l[i + 1]
        where = {lu_idx_l[p]: p for p in range(start, stop)}
        rowmax = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            v[where[int(indices[p])]] += float(data[p])
            rowmax = max(rowmax, abs(float(data[p])))
        for p in range(start, diag_l[i]):
            k = lu_idx_l[p]
            w = v[p] / v[diag_l[k]]
            v[p] = w
            if w != 0.0:
                for q in range(diag_l[k] + 1, lu_ptr_l[k + 1]):
                    j = where.get(lu_idx_l[q])
                    if j is not None:
                        v[j] -= w * v[q]
        piv = v[diag_l[i]]
        if abs(piv) <= pivot_rtol * rowmax or piv == 0.0:
            return np.asarray(v), i
    return np.asarray(v), -1


def solve(lu_ptr, lu_idx, vals, diag, b):
    n = len(lu_ptr) - 1
    x = np.array(b, dtype=float, copy=True)
    for i in range(n):
        s, e = lu_ptr[i], diag[i]
        if e > s:
            x[i] -= vals[s:e] @ x[lu_idx[s:e]]
    for i in range(n - 1, -1, -1):
        s, e = diag[i] + 1, lu_ptr[i + 1]
        if e > s:
            x[i] -= vals[s:e] @ x[lu_idx[s:e]]
        x[i] /= vals[diag[i]]
    return x
