"""A small tape-based reverse-mode autodiff over dense float64 arrays.

Only the primitives the graph autoencoder needs are provided. Every op is a
method of :class:`Tape`; calling it computes the forward value immediately and
appends a record with the matching backward rule. ``Tape.backward`` walks the
records once in reverse order.

    >>> tape = Tape()
    >>> w = tape.param("w", np.ones((2, 2)))
    >>> loss = tape.sum(tape.tanh(w))
    >>> grads = tape.backward(loss)
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"<Tensor{tag} shape={self.data.shape} grad={self.requires_grad}>"


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


class Tape:
    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.params: dict[str, Tensor] = {}

    # -- leaves --------------------------------------------------------------

    def param(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} registered twice")
        t = Tensor(np.asarray(value, dtype=np.float64), True, name)
        self.params[name] = t
        return t

    def const(self, value) -> Tensor:
        return Tensor(np.asarray(value, dtype=np.float64))

    def _emit(self, data, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
        out = Tensor(data, any(t.requires_grad for t in inputs))
        if out.requires_grad:
            self.records.append((out, inputs, backward))
        return out

    # -- backward ------------------------------------------------------------

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        for out, _, _ in self.records:
            out.grad = None
        for p in self.params.values():
            p.grad = None
        loss.grad = np.ones_like(loss.data)
        owned = set()  # ids of tensors whose grad buffer is private and may be updated in place
        for out, inputs, fn in reversed(self.records):
            if out.grad is None:
                continue
            for inp, g in zip(inputs, fn(out.grad)):
                if g is None or not inp.requires_grad:
                    continue
                if inp.grad is None:
                    inp.grad = g
                elif id(inp) in owned:
                    inp.grad += g
                else:
                    inp.grad = inp.grad + g
                    owned.add(id(inp))
            out.grad = None
        return {
            name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in self.params.items()
        }

    # -- primitives ----------------------------------------------------------

    def gather(self, table: Tensor, index) -> Tensor:
        index = np.asarray(index, dtype=np.int64)
        n = table.data.shape[0]
        if len(index) and (index.min() < 0 or index.max() >= n):
            raise IndexError(f"gather index out of range for table with {n} rows")
        return self._emit(
            table.data[index],
            (table,),
            lambda g: (kernels.scatter_add_rows(index, g, n),),
        )

    def concat_cols(self, *parts: Tensor) -> Tensor:
        rows = {p.data.shape[0] for p in parts}
        if len(rows) != 1:
            raise ValueError(f"concat_cols needs equal row counts, got {sorted(rows)}")
        bounds = np.cumsum([0] + [p.data.shape[1] for p in parts])

        def back(g):
            return tuple(g[:, a:b] for a, b in zip(bounds[:-1], bounds[1:]))

        return self._emit(np.concatenate([p.data for p in parts], axis=1), parts, back)

    def spmm(self, graph, level: int, x: Tensor, sender_scale=None) -> Tensor:
        """Propagation over one rating level; adjacency is symmetric so the
        backward pass reuses the forward kernel."""
        n = graph.n_nodes
        if x.data.ndim != 2 or x.data.shape[0] != n:
            raise ValueError(f"spmm input must have {n} rows, got {x.data.shape}")
        scale = np.ones(n) if sender_scale is None else np.asarray(sender_scale, dtype=np.float64)
        lv = graph.levels[level]
        ones = np.ones(n)
        out = kernels.spmm_csr(lv.indptr, lv.indices, lv.coef, x.data, scale)

        def back(g):
            return (kernels.spmm_csr(lv.indptr, lv.indices, lv.coef, g, ones) * scale[:, None],)

        return self._emit(out, (x,), back)

    def relu(self, x: Tensor) -> Tensor:
        pos = x.data > 0
        return self._emit(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))

    def tanh(self, x: Tensor) -> Tensor:
        y = np.tanh(x.data)
        return self._emit(y, (x,), lambda g: (g * (1.0 - y * y),))

    def linear(self, x: Tensor, w: Tensor) -> Tensor:
        """x @ w.T, i.e. applies w (out x in) to every row of x."""
        if x.data.shape[-1] != w.data.shape[1]:
            raise ValueError(f"linear: x has {x.data.shape[-1]} columns, w expects {w.data.shape[1]}")
        return self._emit(x.data @ w.data.T, (x, w), lambda g: (g @ w.data, g.T @ x.data))

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.shape != b.data.shape:
            raise ValueError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")
        return self._emit(a.data + b.data, (a, b), lambda g: (g, g))

    def scale(self, x: Tensor, alpha: float) -> Tensor:
        return self._emit(alpha * x.data, (x,), lambda g: (alpha * g,))

    def scale_add(self, xs: Sequence[Tensor], coeffs: Sequence[float] | None = None) -> Tensor:
        """sum_k coeffs[k] * xs[k]; coeffs default to ones."""
        xs = tuple(xs)
        if coeffs is None:
            coeffs = [1.0] * len(xs)
        if len(coeffs) != len(xs) or not xs:
            raise ValueError("scale_add needs one coefficient per input")
        shape = xs[0].data.shape
        if any(x.data.shape != shape for x in xs):
            raise ValueError("scale_add inputs must share a shape")
        out = coeffs[0] * xs[0].data
        for c, x in zip(coeffs[1:], xs[1:]):
            out = out + c * x.data
        return self._emit(out, xs, lambda g: tuple(c * g for c in coeffs))

    def bilinear(self, a: Tensor, w: Tensor, b: Tensor) -> Tensor:
        """Row-wise a[k] @ w @ b[k] -> vector of length rows."""
        if a.data.shape != b.data.shape or w.data.shape != (a.data.shape[1], b.data.shape[1]):
            raise ValueError("bilinear: shape mismatch")
        aw = a.data @ w.data

        def back(g):
            gc = g[:, None]
            return gc * (b.data @ w.data.T), a.data.T @ (gc * b.data), gc * aw

        return self._emit(np.einsum("ij,ij->i", aw, b.data), (a, w, b), back)

    def pair_bilinear(self, n: Tensor, ws: Sequence[Tensor], rows_a, rows_b) -> Tensor:
        """Logits (P x T) with entry [k, t] = n[rows_a[k]] @ ws[t] @ n[rows_b[k]].

        Same values as stacking :meth:`bilinear` over gathered rows, but the
        projection n @ ws[t] is done once per node instead of once per pair.
        """
        ws = tuple(ws)
        rows_a = np.asarray(rows_a, dtype=np.int64)
        rows_b = np.asarray(rows_b, dtype=np.int64)
        x = n.data
        proj = np.stack([x @ w.data for w in ws], axis=1)

        def back(g):
            ga, gb = kernels.pair_dots_backward(g, proj, x, rows_a, rows_b)
            gx = gb
            for t, w in enumerate(ws):
                gx += ga[:, t, :] @ w.data.T
            return (gx,) + tuple(x.T @ ga[:, t, :] for t in range(len(ws)))

        return self._emit(kernels.pair_dots(proj, x, rows_a, rows_b), (n,) + ws, back)

    def stack_cols(self, cols: Sequence[Tensor]) -> Tensor:
        cols = tuple(cols)
        return self._emit(
            np.stack([c.data for c in cols], axis=1),
            cols,
            lambda g: tuple(g[:, k] for k in range(g.shape[1])),
        )

    def softmax_rows(self, x: Tensor) -> Tensor:
        s = softmax(x.data)

        def back(g):
            return (s * (g - np.sum(g * s, axis=1, keepdims=True)),)

        return self._emit(s, (x,), back)

    def cross_entropy_rows(self, logits: Tensor, target) -> Tensor:
        """-log softmax(logits)[k, target[k]] per row."""
        target = np.asarray(target, dtype=np.int64)
        z = logits.data
        if target.shape != (z.shape[0],) or (len(target) and (target.min() < 0 or target.max() >= z.shape[1])):
            raise ValueError("cross_entropy_rows: bad targets")
        s = softmax(z)
        rows = np.arange(z.shape[0])
        lse = _logsumexp(z)
        out = lse - z[rows, target]

        def back(g):
            d = s.copy()
            d[rows, target] -= 1.0
            return (g[:, None] * d,)

        return self._emit(out, (logits,), back)

    def cosine_rows(self, a: Tensor, b: Tensor, eps: float = 1e-12) -> Tensor:
        """Row-wise cosine similarity, defined as 0 (zero gradient) when a row is zero."""
        if a.data.shape != b.data.shape:
            raise ValueError("cosine_rows: shape mismatch")
        na = np.linalg.norm(a.data, axis=1)
        nb = np.linalg.norm(b.data, axis=1)
        ok = (na > eps) & (nb > eps)
        na_s = np.where(ok, na, 1.0)
        nb_s = np.where(ok, nb, 1.0)
        dot = np.einsum("ij,ij->i", a.data, b.data)
        cos = np.where(ok, dot / (na_s * nb_s), 0.0)

        def back(g):
            gk = np.where(ok, g, 0.0)[:, None]
            ua = a.data / na_s[:, None]
            ub = b.data / nb_s[:, None]
            c = cos[:, None]
            da = gk * (ub - c * ua) / na_s[:, None]
            db = gk * (ua - c * ub) / nb_s[:, None]
            return da, db

        return self._emit(cos, (a, b), back)

    def sum(self, x: Tensor) -> Tensor:
        shape = x.data.shape
        return self._emit(np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))

    def weighted_sum(self, x: Tensor, weights) -> Tensor:
        """sum(x * weights) with constant weights; reduces any output to a scalar."""
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != x.data.shape:
            raise ValueError(f"weighted_sum: weights {w.shape} vs input {x.data.shape}")
        return self._emit(np.array(np.sum(x.data * w)), (x,), lambda g: (float(g) * w,))

    def mean(self, x: Tensor) -> Tensor:
        shape, n = x.data.shape, x.data.size
        if n == 0:
            raise ValueError("mean of an empty tensor")
        return self._emit(np.array(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),))


def _logsumexp(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True)))[:, 0]


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


class Adam:
    """Adam with bias correction, updating parameter arrays in place."""

    def __init__(self, lr: float = 0.01, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** t if b1 > 0 else 1.0
        c2 = 1.0 - b2 ** t if b2 > 0 else 1.0
        for name, g in grads.items():
            p = params[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- finite differences ------------------------------------------------------


def numeric_grad(f: Callable[[], float], x: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (mutated and restored)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + eps
        fp = f()
        flat[k] = old - eps
        fm = f()
        flat[k] = old
        gflat[k] = (fp - fm) / (2 * eps)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    num = np.linalg.norm(a - b)
    den = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if den < 1e-12 else float(num / den)
