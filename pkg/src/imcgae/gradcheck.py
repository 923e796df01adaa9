"""Finite-difference verification of every autodiff primitive and the full model loss.

Each check builds a tiny seeded instance, reduces the op output to a scalar
with fixed random weights, and compares the tape gradient of every input with
central differences. ``tape_factory`` lets a test swap in a deliberately broken
tape to confirm that the harness notices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Tape, numeric_grad, relative_error
from .data import build_dataset, ratings_from_arrays
from .graph import build_graph, sample_dropout

TOLERANCE = 1e-4
STEP = 1e-4


@dataclass
class CheckResult:
    name: str
    rel_err: float
    passed: bool

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<20} rel_err={self.rel_err:.3e}"


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


def toy_graph(seed: int = 0):
    """3 users x 3 items, levels 1..3, every level non-empty."""
    users = [0, 0, 1, 1, 2, 2, 0]
    items = [0, 1, 1, 2, 0, 2, 2]
    ratings = [1, 2, 3, 1, 2, 3, 3]
    ds = build_dataset(ratings_from_arrays(users, items, ratings))
    return ds, build_graph(ds)


def check_op(name: str, inputs: dict[str, np.ndarray], build: Callable, tape_factory=Tape, seed: int = 0) -> CheckResult:
    """``build(tape, leaves) -> Tensor``; every entry of ``inputs`` is differentiated."""
    arrays = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    probe = build(Tape(), {k: Tape().const(v) for k, v in arrays.items()})
    weights = np.random.default_rng([seed, 99]).normal(size=probe.data.shape)

    def forward(tape):
        leaves = {k: tape.param(k, v) for k, v in arrays.items()}
        out = build(tape, leaves)
        return out if out.data.ndim == 0 else tape.weighted_sum(out, weights)

    tape = tape_factory()
    grads = tape.backward(forward(tape))
    worst = 0.0
    for k, arr in arrays.items():
        num = numeric_grad(lambda: float(forward(Tape()).data), arr, STEP)
        worst = max(worst, relative_error(grads[k], num))
    return CheckResult(name, worst, bool(worst < TOLERANCE))


def primitive_checks(seed: int = 0, tape_factory=Tape) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    _, g = toy_graph()
    n = g.n_nodes
    scale = sample_dropout(0.4, 0.0, 1, n, rng).sender_scale(1)
    idx = np.array([2, 0, 2, 1])
    target = np.array([0, 2, 1, 2, 0])
    rows_a, rows_b = np.array([0, 1, 2, 0]), np.array([3, 4, 5, 5])

    cases = [
        ("gather", {"t": rng.normal(size=(3, 2))}, lambda tp, v: tp.gather(v["t"], idx)),
        ("concat_cols",
         {"a": rng.normal(size=(2, 1)), "b": rng.normal(size=(2, 2)), "c": rng.normal(size=(2, 1))},
         lambda tp, v: tp.concat_cols(v["a"], v["b"], v["c"])),
        ("spmm", {"x": rng.normal(size=(n, 3))}, lambda tp, v: tp.spmm(g, 1, v["x"], scale)),
        ("relu", {"x": _away_from_zero(rng, (4, 3))}, lambda tp, v: tp.relu(v["x"])),
        ("tanh", {"x": rng.normal(size=(4, 3))}, lambda tp, v: tp.tanh(v["x"])),
        ("linear", {"x": rng.normal(size=(4, 3)), "w": rng.normal(size=(2, 3))},
         lambda tp, v: tp.linear(v["x"], v["w"])),
        ("add", {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=(3, 2))},
         lambda tp, v: tp.add(v["a"], v["b"])),
        ("scale", {"x": rng.normal(size=(3, 2))}, lambda tp, v: tp.scale(v["x"], -1.7)),
        ("scale_add", {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=(3, 2)), "c": rng.normal(size=(3, 2))},
         lambda tp, v: tp.scale_add([v["a"], v["b"], v["c"]], [1.0, 0.5, 1.0 / 3.0])),
        ("bilinear", {"a": rng.normal(size=(4, 3)), "w": rng.normal(size=(3, 3)), "b": rng.normal(size=(4, 3))},
         lambda tp, v: tp.bilinear(v["a"], v["w"], v["b"])),
        ("pair_bilinear",
         {"n": rng.normal(size=(n, 3)), "w0": rng.normal(size=(3, 3)), "w1": rng.normal(size=(3, 3)),
          "w2": rng.normal(size=(3, 3))},
         lambda tp, v: tp.pair_bilinear(v["n"], [v["w0"], v["w1"], v["w2"]], rows_a, rows_b)),
        ("stack_cols", {"a": rng.normal(size=4), "b": rng.normal(size=4)},
         lambda tp, v: tp.stack_cols([v["a"], v["b"]])),
        ("softmax_rows", {"x": rng.normal(size=(4, 5))}, lambda tp, v: tp.softmax_rows(v["x"])),
        ("cross_entropy_rows", {"z": rng.normal(size=(5, 3))},
         lambda tp, v: tp.cross_entropy_rows(v["z"], target)),
        ("cosine_rows", {"a": rng.normal(size=(4, 3)), "b": rng.normal(size=(4, 3))},
         lambda tp, v: tp.cosine_rows(v["a"], v["b"])),
        ("sum", {"x": rng.normal(size=(3, 2))}, lambda tp, v: tp.sum(v["x"])),
        ("mean", {"x": rng.normal(size=(3, 2))}, lambda tp, v: tp.mean(v["x"])),
        ("weighted_sum", {"x": rng.normal(size=(3, 2))}, lambda tp, v: tp.weighted_sum(v["x"], [[1, -2], [0.5, 3], [0, 1]])),
    ]
    return [check_op(name, inputs, build, tape_factory, seed) for name, inputs, build in cases]


def end_to_end_check(seed: int = 0, tape_factory=Tape) -> CheckResult:
    """Total loss (CE + lambda * NRR) on 6 nodes, T=3, D=6, two layers, dropout active."""
    from . import model

    ds, g = toy_graph()
    hp = model.HyperParams(layers=2, dim_id=2, dim_role=2, dim_lat=2, dim_dec=3, p0=0.3, theta=0.1, lam=0.5, seed=seed)
    params = model.init_params(hp, ds.n_users, ds.n_items, ds.levels)
    rng = np.random.default_rng([seed, 2])
    for v in params.arrays.values():
        v += rng.normal(scale=0.5, size=v.shape)
    plan = sample_dropout(hp.p0, hp.theta, hp.layers, g.n_nodes, rng)
    users, items = model.pair_nodes(ds)

    def forward(tape):
        leaves = {k: tape.param(k, v) for k, v in params.arrays.items()}
        return model._loss_on_tape(tape, leaves, g, hp, plan, users, items, ds.level_idx)[0]

    tape = tape_factory()
    grads = tape.backward(forward(tape))
    worst = 0.0
    for k, arr in params.arrays.items():
        num = numeric_grad(lambda: float(forward(Tape()).data), arr, STEP)
        worst = max(worst, relative_error(grads[k], num))
    return CheckResult("end_to_end", worst, bool(worst < TOLERANCE))


def run_all(seed: int = 0, tape_factory=Tape) -> list[CheckResult]:
    return primitive_checks(seed, tape_factory) + [end_to_end_check(seed, tape_factory)]
