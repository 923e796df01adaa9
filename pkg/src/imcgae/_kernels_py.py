"""Pure numpy/scipy versions of the compiled kernels."""

import numpy as np
import scipy.sparse as sp


def spmm_csr(indptr, indices, coef, x, sender_scale):
    n = len(indptr) - 1
    mat = sp.csr_matrix((coef * sender_scale[indices], indices, indptr), shape=(n, x.shape[0]))
    return np.ascontiguousarray(mat @ x)


def scatter_add_rows(index, src, n_rows):
    out = np.zeros((n_rows, src.shape[1]), dtype=np.float64)
    np.add.at(out, index, src)
    return out


def scf_guiders(users, items, item_ptr, item_users, overlap, row_offset):
    out = np.full(len(users), -1, dtype=np.int64)
    for q, (u, i) in enumerate(zip(users, items)):
        raters = item_users[item_ptr[i]:item_ptr[i + 1]]
        raters = raters[raters != u]
        if len(raters):
            out[q] = raters[np.argmax(overlap[u - row_offset, raters])]
    return out


def pair_dots(a, b, rows_a, rows_b):
    return np.einsum("ktc,kc->kt", a[rows_a], b[rows_b])


def pair_dots_backward(g, a, b, rows_a, rows_b):
    ga = np.zeros_like(a)
    np.add.at(ga, rows_a, g[:, :, None] * b[rows_b][:, None, :])
    gb = np.zeros_like(b)
    np.add.at(gb, rows_b, np.einsum("kt,ktc->kc", g, a[rows_a]))
    return ga, gb
