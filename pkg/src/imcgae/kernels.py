"""Hot kernels with backend selection.

The compiled extension is used when it imports cleanly; setting
``IMCGAE_PURE_PYTHON=1`` forces the numpy/scipy fallback.
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("IMCGAE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def spmm_csr(indptr, indices, coef, x, sender_scale, impl=None):
    """out[i] = sum_k coef[k] * sender_scale[j_k] * x[j_k] over row i's entries."""
    impl = impl or _impl
    return impl.spmm_csr(_i64(indptr), _i64(indices), _f64(coef), _f64(x), _f64(sender_scale))


def scatter_add_rows(index, src, n_rows, impl=None):
    impl = impl or _impl
    return impl.scatter_add_rows(_i64(index), _f64(src), int(n_rows))


def scf_guiders(users, items, item_ptr, item_users, overlap, row_offset=0, impl=None):
    """Per query (u, i): the user v != u who rated i with the largest overlap[u - row_offset, v],
    smallest v on ties; -1 if nobody else rated i. ``item_users`` must be sorted within each item."""
    impl = impl or _impl
    return impl.scf_guiders(_i64(users), _i64(items), _i64(item_ptr), _i64(item_users), _i64(overlap), int(row_offset))


def pair_dots(a, b, rows_a, rows_b, impl=None):
    """out[k, t] = a[rows_a[k], t, :] . b[rows_b[k], :] for a of shape (n_a, T, d)."""
    impl = impl or _impl
    return impl.pair_dots(_f64(a), _f64(b), _i64(rows_a), _i64(rows_b))


def pair_dots_backward(g, a, b, rows_a, rows_b, impl=None):
    impl = impl or _impl
    return impl.pair_dots_backward(_f64(g), _f64(a), _f64(b), _i64(rows_a), _i64(rows_b))
