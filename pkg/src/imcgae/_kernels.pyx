# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Each function mirrors one in ``imcgae._kernels_py``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def spmm_csr(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
             const double[::1] coef, const double[:, ::1] x,
             const double[::1] sender_scale):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t i, k, j, c
    cdef double w
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(n):
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                w = coef[k] * sender_scale[j]
                if w == 0.0:
                    continue
                for c in range(d):
                    out[i, c] += w * x[j, c]
    return out_arr


def scatter_add_rows(const cnp.int64_t[::1] index, const double[:, ::1] src,
                     Py_ssize_t n_rows):
    cdef Py_ssize_t m = index.shape[0]
    cdef Py_ssize_t d = src.shape[1]
    cdef Py_ssize_t k, c, r
    out_arr = np.zeros((n_rows, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for k in range(m):
            r = index[k]
            for c in range(d):
                out[r, c] += src[k, c]
    return out_arr


def scf_guiders(const cnp.int64_t[::1] users, const cnp.int64_t[::1] items,
                const cnp.int64_t[::1] item_ptr, const cnp.int64_t[::1] item_users,
                const cnp.int64_t[:, ::1] overlap, Py_ssize_t row_offset):
    """Guider per query, or -1 when nobody else rated the item.

    ``overlap[u - row_offset, v]`` is the co-rating count of users u and v.
    """
    cdef Py_ssize_t m = users.shape[0]
    cdef Py_ssize_t q, k, v, u, best
    cdef cnp.int64_t best_score, s
    out_arr = np.full(m, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    with nogil:
        for q in range(m):
            u = users[q]
            best = -1
            best_score = -1
            # item_users is sorted per item, so strict > keeps the smallest index on ties
            for k in range(item_ptr[items[q]], item_ptr[items[q] + 1]):
                v = item_users[k]
                if v == u:
                    continue
                s = overlap[u - row_offset, v]
                if s > best_score:
                    best_score = s
                    best = v
            out[q] = best
    return out_arr


def pair_dots(const double[:, :, ::1] a, const double[:, ::1] b,
              const cnp.int64_t[::1] rows_a, const cnp.int64_t[::1] rows_b):
    """out[k, t] = a[rows_a[k], t] . b[rows_b[k]]"""
    cdef Py_ssize_t m = rows_a.shape[0]
    cdef Py_ssize_t n_t = a.shape[1]
    cdef Py_ssize_t d = a.shape[2]
    cdef Py_ssize_t k, t, c, ra, rb
    cdef double s
    out_arr = np.empty((m, n_t), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for k in range(m):
            ra = rows_a[k]
            rb = rows_b[k]
            for t in range(n_t):
                s = 0.0
                for c in range(d):
                    s = s + a[ra, t, c] * b[rb, c]
                out[k, t] = s
    return out_arr


def pair_dots_backward(const double[:, ::1] g, const double[:, :, ::1] a,
                       const double[:, ::1] b, const cnp.int64_t[::1] rows_a,
                       const cnp.int64_t[::1] rows_b):
    cdef Py_ssize_t m = rows_a.shape[0]
    cdef Py_ssize_t n_t = a.shape[1]
    cdef Py_ssize_t d = a.shape[2]
    cdef Py_ssize_t k, t, c, ra, rb
    cdef double gk
    ga_arr = np.zeros((a.shape[0], n_t, d), dtype=np.float64)
    gb_arr = np.zeros((b.shape[0], d), dtype=np.float64)
    cdef double[:, :, ::1] ga = ga_arr
    cdef double[:, ::1] gb = gb_arr
    with nogil:
        for k in range(m):
            ra = rows_a[k]
            rb = rows_b[k]
            for t in range(n_t):
                gk = g[k, t]
                if gk == 0.0:
                    continue
                for c in range(d):
                    ga[ra, t, c] += gk * b[rb, c]
                    gb[rb, c] += gk * a[ra, t, c]
    return ga_arr, gb_arr
