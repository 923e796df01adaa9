"""Local-graph heuristics (AUR, AIR, MCR, SCF) and their correlation with true ratings.

Point functions return ``None`` when a heuristic is undefined. :func:`analyze`
scores every training triple leave-one-out, i.e. with that triple removed from
the graph, and correlates the defined scores with the held-out rating.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .data import RatingDataset

HEURISTICS = ("aur", "air", "mcr", "scf")


def _values(ds: RatingDataset) -> np.ndarray:
    return ds.levels[ds.level_idx]


def aur(train: RatingDataset, u: int) -> float | None:
    r = _values(train)[train.users == u]
    return float(r.mean()) if len(r) else None


def air(train: RatingDataset, i: int) -> float | None:
    r = _values(train)[train.items == i]
    return float(r.mean()) if len(r) else None


def mcr(train: RatingDataset, u: int, i: int) -> float | None:
    vals = _values(train)
    pool = np.concatenate([vals[train.users == u], vals[train.items == i]])
    if not len(pool):
        return None
    counts = Counter(pool.tolist())
    top = max(counts.values())
    return float(min(v for v, c in counts.items() if c == top))


def scf(train: RatingDataset, u: int, i: int) -> float | None:
    vals = _values(train)
    mine = set(train.items[train.users == u].tolist())
    best, best_overlap = None, -1
    for k in np.flatnonzero(train.items == i):
        v = int(train.users[k])
        if v == u:
            continue
        overlap = len(mine & set(train.items[train.users == v].tolist()))
        if overlap > best_overlap or (overlap == best_overlap and v < best[0]):
            best, best_overlap = (v, float(vals[k])), overlap
    return None if best is None else best[1]


def pearson(xs, ys) -> float | None:
    """Sample Pearson correlation; None for mismatched/short input or zero variance."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        return None
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(dx @ dx), np.sqrt(dy @ dy)
    if sx <= 1e-12 * max(1.0, np.abs(x).max()) or sy <= 1e-12 * max(1.0, np.abs(y).max()):
        return None
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


@dataclass
class HeuristicReport:
    density: float
    n_pairs: int
    pcc: dict[str, float | None] = field(default_factory=dict)
    coverage: dict[str, float] = field(default_factory=dict)

    def rows(self) -> list[dict]:
        return [
            {"heuristic": h.upper(), "pcc": self.pcc[h], "coverage": self.coverage[h]}
            for h in HEURISTICS
        ]

    def summary(self) -> str:
        lines = [f"density {self.density:.4f}  pairs {self.n_pairs}"]
        for row in self.rows():
            p = "undefined" if row["pcc"] is None else f"{row['pcc']:.4f}"
            lines.append(f"{row['heuristic']:<4} pcc {p:>9}  coverage {row['coverage']:.4f}")
        return "\n".join(lines)


def loo_scores(train: RatingDataset, block: int = 1024) -> dict[str, np.ndarray]:
    """Leave-one-out score of every heuristic for every triple (NaN where undefined)."""
    u, i, t = train.users, train.items, train.level_idx
    vals = _values(train)
    nu, ni, nt = train.n_users, train.n_items, train.n_levels

    cu = np.bincount(u, minlength=nu)
    ci = np.bincount(i, minlength=ni)
    su = np.bincount(u, vals, minlength=nu)
    si = np.bincount(i, vals, minlength=ni)
    with np.errstate(invalid="ignore", divide="ignore"):
        aur_s = np.where(cu[u] > 1, (su[u] - vals) / (cu[u] - 1), np.nan)
        air_s = np.where(ci[i] > 1, (si[i] - vals) / (ci[i] - 1), np.nan)

    hist_u = np.zeros((nu, nt), dtype=np.int64)
    np.add.at(hist_u, (u, t), 1)
    hist_i = np.zeros((ni, nt), dtype=np.int64)
    np.add.at(hist_i, (i, t), 1)
    pooled = hist_u[u] + hist_i[i]
    pooled[np.arange(len(t)), t] -= 2
    # argmax returns the first maximum, i.e. the lowest rating on ties
    mcr_s = np.where(pooled.sum(axis=1) > 0, train.levels[np.argmax(pooled, axis=1)], np.nan)

    # Dropping (u, i) lowers u's overlap with every other rater of i by exactly one,
    # so the guider can be picked from full-graph overlaps.
    adj = sp.csr_matrix((np.ones(len(u)), (u, i)), shape=(nu, ni))
    by_item = adj.tocsc()
    by_item.sort_indices()
    rating_of = sp.csr_matrix((vals, (u, i)), shape=(nu, ni))
    scf_s = np.full(len(u), np.nan)
    order = np.argsort(u, kind="stable")
    for lo in range(0, nu, block):
        hi = min(lo + block, nu)
        q = order[np.searchsorted(u[order], lo):np.searchsorted(u[order], hi)]
        if not len(q):
            continue
        overlap = np.asarray((adj[lo:hi] @ adj.T).todense(), dtype=np.int64)
        guide = kernels.scf_guiders(u[q], i[q], by_item.indptr, by_item.indices, overlap, lo)
        ok = guide >= 0
        scf_s[q[ok]] = np.asarray(rating_of[guide[ok], i[q[ok]]]).ravel()
    return {"aur": aur_s, "air": air_s, "mcr": mcr_s, "scf": scf_s}


def analyze(train: RatingDataset) -> HeuristicReport:
    if len(train) < 2:
        raise ValueError("need at least two ratings")
    truth = _values(train)
    scores = loo_scores(train)
    report = HeuristicReport(density=train.density(), n_pairs=len(train))
    for name in HEURISTICS:
        ok = ~np.isnan(scores[name])
        report.coverage[name] = float(ok.mean())
        report.pcc[name] = pearson(scores[name][ok], truth[ok]) if ok.sum() >= 2 else None
    return report
