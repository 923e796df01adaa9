"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--epochs 3]

The kernel table uses synthetic inputs sized like ML-100K (2625 nodes, 80k
edges, 180 features). The epoch row trains the full model in a subprocess per
backend, so it needs the dataset (see scripts/prepare_ml100k.py).
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from imcgae import _kernels_py, kernels

try:
    from imcgae import _kernels as _compiled
except ImportError:
    _compiled = None

ROOT = Path(__file__).resolve().parents[1]


def _inputs(seed=0):
    rng = np.random.default_rng(seed)
    n_users, n_items, n_edges, dim = 943, 1682, 80_000, 180
    u = rng.integers(0, n_users, n_edges)
    i = rng.integers(0, n_items, n_edges) + n_users
    n = n_users + n_items
    a = sp.csr_matrix((np.ones(2 * n_edges), (np.r_[u, i], np.r_[i, u])), shape=(n, n))
    a.sum_duplicates()
    a.sort_indices()
    x = rng.normal(size=(n, dim))
    scale = (rng.random(n) > 0.2) / 0.8
    proj = rng.normal(size=(n, 5, 40))
    nodes = rng.normal(size=(n, 40))
    g = rng.normal(size=(n_edges, 5))
    adj = sp.csr_matrix((np.ones(n_edges), (u, i - n_users)), shape=(n_users, n_items))
    adj.data[:] = 1.0
    by_item = adj.tocsc()
    by_item.sort_indices()
    overlap = np.asarray((adj @ adj.T).todense(), dtype=np.int64)
    return {
        "spmm_csr": (a.indptr, a.indices, a.data, x, scale),
        "scatter_add_rows": (rng.integers(0, n, 200_000), rng.normal(size=(200_000, 60)), n),
        "pair_dots": (proj, nodes, u, i),
        "pair_dots_backward": (g, proj, nodes, u, i),
        "scf_guiders": (u, i - n_users, by_item.indptr, by_item.indices, overlap, 0),
    }


def bench_kernels(repeat: int) -> list[tuple[str, float, float | None]]:
    rows = []
    for name, args in _inputs().items():
        fn = getattr(kernels, name)
        py = min(timeit.repeat(lambda: fn(*args, impl=_kernels_py), number=1, repeat=repeat))
        cy = None
        if _compiled is not None:
            cy = min(timeit.repeat(lambda: fn(*args, impl=_compiled), number=1, repeat=repeat))
        rows.append((name, py, cy))
    return rows


EPOCH_SNIPPET = """
import time, sys
from imcgae.data import load_split
from imcgae.model import HyperParams, fit
tr, te, _ = load_split(sys.argv[1], sys.argv[2])
t = time.perf_counter()
fit(tr, HyperParams(epochs=int(sys.argv[3])), te)
print((time.perf_counter() - t) / int(sys.argv[3]))
"""


def bench_epoch(data_dir: Path, epochs: int) -> dict[str, float]:
    out = {}
    for backend, env in (("python", {"IMCGAE_PURE_PYTHON": "1"}), ("cython", {})):
        if backend == "cython" and _compiled is None:
            continue
        res = subprocess.run(
            [sys.executable, "-c", EPOCH_SNIPPET, str(data_dir / "u1.base"), str(data_dir / "u1.test"), str(epochs)],
            env={**os.environ, **env}, capture_output=True, text=True, check=True,
        )
        out[backend] = float(res.stdout.strip())
    return out


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--data", type=Path, default=Path(os.environ.get("IMCGAE_ML100K", ROOT / "data" / "ml-100k")))
    args = ap.parse_args(argv)

    print(f"{'kernel':<20} {'python (s)':>11} {'cython (s)':>11} {'speedup':>8}")
    for name, py, cy in bench_kernels(args.repeat):
        if cy is None:
            print(f"{name:<20} {py:>11.4f} {'n/a':>11} {'':>8}")
        else:
            print(f"{name:<20} {py:>11.4f} {cy:>11.4f} {py / cy:>7.1f}x")
    if (args.data / "u1.base").exists():
        per_epoch = bench_epoch(args.data, args.epochs)
        line = "  ".join(f"{k} {v:.3f}s" for k, v in per_epoch.items())
        print(f"\nfull training epoch incl. test evaluation (ML-100K u1): {line}")
    else:
        print(f"\n{args.data}/u1.base not found; skipping the epoch benchmark")


if __name__ == "__main__":
    main()
