"""Per-rating-level bipartite graphs and layer-wise node dropout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import RatingDataset


@dataclass(frozen=True)
class LevelAdjacency:
    """Symmetric CSR adjacency of one rating level over the unified node space."""

    indptr: np.ndarray
    indices: np.ndarray
    coef: np.ndarray
    degree: np.ndarray
    # one entry per rating edge (user node, item node)
    edge_users: np.ndarray
    edge_items: np.ndarray
    edge_coef: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.edge_users)


@dataclass(frozen=True)
class RatingGraph:
    n_users: int
    n_items: int
    levels: tuple[LevelAdjacency, ...]

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def degrees(self) -> np.ndarray:
        """(T, n_nodes) per-level degrees."""
        return np.stack([lv.degree for lv in self.levels])

    def total_degree(self) -> np.ndarray:
        return self.degrees().sum(axis=0)

    def node_roles(self) -> np.ndarray:
        roles = np.zeros(self.n_nodes, dtype=np.int64)
        roles[self.n_users:] = 1
        return roles

    def expand(self, n_users: int, n_items: int) -> "RatingGraph":
        """Embed into a larger id space; new nodes are isolated."""
        if n_users < self.n_users or n_items < self.n_items:
            raise ValueError("expand can only grow the node space")
        if (n_users, n_items) == (self.n_users, self.n_items):
            return self
        out = []
        for lv in self.levels:
            eu, ei = lv.edge_users, lv.edge_items - self.n_users + n_users
            out.append(_level_from_edges(eu, ei, n_users + n_items))
        return RatingGraph(n_users, n_items, tuple(out))


def _level_from_edges(eu: np.ndarray, ei: np.ndarray, n_nodes: int) -> LevelAdjacency:
    deg = np.bincount(eu, minlength=n_nodes) + np.bincount(ei, minlength=n_nodes)
    deg = deg.astype(np.int64)
    ec = 1.0 / np.sqrt(deg[eu] * deg[ei]) if len(eu) else np.zeros(0)
    rows = np.concatenate([eu, ei])
    cols = np.concatenate([ei, eu])
    vals = np.concatenate([ec, ec])
    # sort by (row, col) so per-destination accumulation order is fixed
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n_nodes), out=indptr[1:])
    return LevelAdjacency(
        indptr=indptr,
        indices=cols.astype(np.int64),
        coef=vals.astype(np.float64),
        degree=deg,
        edge_users=eu.astype(np.int64),
        edge_items=ei.astype(np.int64),
        edge_coef=np.asarray(ec, dtype=np.float64),
    )


def build_graph(train: RatingDataset) -> RatingGraph:
    n_nodes = train.n_users + train.n_items
    levels = []
    for t in range(train.n_levels):
        sel = train.level_idx == t
        levels.append(_level_from_edges(train.users[sel], train.items[sel] + train.n_users, n_nodes))
    return RatingGraph(train.n_users, train.n_items, tuple(levels))


def layer_probabilities(p0: float, theta: float, n_layers: int) -> np.ndarray:
    """p_l = max(p0 - (l - 1) * theta, 0) for l = 1..L."""
    if not (0.0 <= p0 < 1.0):
        raise ValueError(f"p0 must lie in [0, 1), got {p0}")
    if theta < 0:
        raise ValueError(f"theta must be >= 0, got {theta}")
    if n_layers < 1:
        raise ValueError("need at least one layer")
    return np.maximum(p0 - theta * np.arange(n_layers), 0.0)


@dataclass(frozen=True)
class DropoutPlan:
    """Per-layer sender scales: 0 for dropped nodes, 1/(1-p_l) for kept ones."""

    probs: np.ndarray
    keep: np.ndarray  # (L, n_nodes) bool

    @property
    def n_layers(self) -> int:
        return len(self.probs)

    def sender_scale(self, layer: int) -> np.ndarray:
        """Scale vector for layer ``layer`` (1-based)."""
        p = self.probs[layer - 1]
        return self.keep[layer - 1] * (1.0 / (1.0 - p))

    @classmethod
    def disabled(cls, n_layers: int, n_nodes: int) -> "DropoutPlan":
        return cls(np.zeros(n_layers), np.ones((n_layers, n_nodes), dtype=bool))


def sample_dropout(p0: float, theta: float, n_layers: int, n_nodes: int, rng) -> DropoutPlan:
    """One Bernoulli keep decision per (layer, node), shared by all rating levels."""
    probs = layer_probabilities(p0, theta, n_layers)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    keep = rng.random((n_layers, n_nodes)) >= probs[:, None]
    return DropoutPlan(probs, keep)


def propagate(x: np.ndarray, graph: RatingGraph, level: int, sender_scale: np.ndarray | None = None) -> np.ndarray:
    """out[i] = sum_{j in N_t(i)} c_t(i, j) * scale[j] * x[j]."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != graph.n_nodes:
        raise ValueError(f"features must be ({graph.n_nodes}, d), got {x.shape}")
    if sender_scale is None:
        sender_scale = np.ones(graph.n_nodes)
    elif len(sender_scale) != graph.n_nodes:
        raise ValueError("mask length must equal node count")
    lv = graph.levels[level]
    return kernels.spmm_csr(lv.indptr, lv.indices, lv.coef, x, np.asarray(sender_scale, dtype=np.float64))
