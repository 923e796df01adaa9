"""IMC-GAE encoder/decoder, losses, full-batch training and inductive evaluation."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import kernels
from .autodiff import Adam, Tape, Tensor, softmax
from .data import RatingDataset
from .graph import DropoutPlan, RatingGraph, build_graph, layer_probabilities, sample_dropout

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class HyperParams:
    layers: int = 2
    dim_id: int = 60
    dim_role: int = 60
    dim_lat: int = 60
    dim_dec: int = 40
    p0: float = 0.5
    theta: float = 0.1
    lam: float = 4e-3
    lr: float = 0.003
    epochs: int = 600
    seed: int = 0
    # L2 penalty on the per-level latent tables, added to their gradients
    weight_decay: float = 3e-3
    # multiply lr by lr_decay after lr_patience evaluations without a new best test RMSE (1.0 = constant lr)
    lr_decay: float = 1.0
    lr_patience: int = 50
    use_identical: bool = True
    use_role: bool = True

    def __post_init__(self):
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        for name in ("dim_id", "dim_role", "dim_lat", "dim_dec"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not (0.0 <= self.p0 < 1.0):
            raise ValueError("p0 must lie in [0, 1)")
        if self.theta < 0:
            raise ValueError("theta must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not (0.0 < self.lr_decay <= 1.0):
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.lr_patience < 1:
            raise ValueError("lr_patience must be >= 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")

    @property
    def input_dim(self) -> int:
        return (self.dim_id if self.use_identical else 0) + (self.dim_role if self.use_role else 0) + self.dim_lat

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelParams:
    """Named parameter arrays plus the node-space dimensions they were built for.

    Keys: ``identical`` (1 x d_id), ``role`` (2 x d_role), ``latent.{t}``
    ((n_users + n_items) x d_lat), ``W`` (d_dec x D), ``decoder.{t}`` (d_dec x d_dec).
    """

    n_users: int
    n_items: int
    levels: np.ndarray
    arrays: dict[str, np.ndarray]

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    def copy(self) -> "ModelParams":
        return ModelParams(self.n_users, self.n_items, self.levels.copy(), {k: v.copy() for k, v in self.arrays.items()})

    def latent(self, t: int) -> np.ndarray:
        return self.arrays[f"latent.{t}"]


def glorot_bound(rows: int, cols: int) -> float:
    return math.sqrt(6.0 / (rows + cols))


def init_params(hp: HyperParams, n_users: int, n_items: int, levels, seed: int | None = None) -> ModelParams:
    levels = np.asarray(levels, dtype=np.float64)
    if n_users < 1 or n_items < 1 or len(levels) < 1:
        raise ValueError("need at least one user, one item and one level")
    rng = np.random.default_rng(hp.seed if seed is None else seed)
    n = n_users + n_items

    def uniform(rows, cols):
        a = glorot_bound(rows, cols)
        return rng.uniform(-a, a, size=(rows, cols))

    arrays = {}
    if hp.use_identical:
        arrays["identical"] = uniform(1, hp.dim_id)
    if hp.use_role:
        arrays["role"] = uniform(2, hp.dim_role)
    for t in range(len(levels)):
        arrays[f"latent.{t}"] = uniform(n, hp.dim_lat)
    arrays["W"] = uniform(hp.dim_dec, hp.input_dim)
    for t in range(len(levels)):
        arrays[f"decoder.{t}"] = uniform(hp.dim_dec, hp.dim_dec)
    return ModelParams(n_users, n_items, levels, arrays)


def _leaves(tape: Tape, params: ModelParams, trainable: bool) -> dict[str, Tensor]:
    if trainable:
        return {k: tape.param(k, v) for k, v in params.arrays.items()}
    return {k: tape.const(v) for k, v in params.arrays.items()}


def encode(tape: Tape, leaves: dict[str, Tensor], graph: RatingGraph, hp: HyperParams,
           dropout: DropoutPlan | None = None) -> tuple[Tensor, list[Tensor]]:
    """Return node representations n (N x d_dec) and per-level h_t (N x D)."""
    n_nodes = graph.n_nodes
    if leaves["latent.0"].data.shape[0] != n_nodes:
        raise ValueError(f"latent tables have {leaves['latent.0'].data.shape[0]} rows, graph has {n_nodes} nodes")
    shared = []
    if "identical" in leaves:
        shared.append(tape.gather(leaves["identical"], np.zeros(n_nodes, dtype=np.int64)))
    if "role" in leaves:
        shared.append(tape.gather(leaves["role"], graph.node_roles()))
    weights = [1.0 / (l + 1) for l in range(hp.layers + 1)]
    hs = []
    for t in range(graph.n_levels):
        x = tape.concat_cols(*shared, leaves[f"latent.{t}"])
        outs = [x]
        for l in range(1, hp.layers + 1):
            inp = x if l == 1 else tape.relu(x)
            scale = None if dropout is None else dropout.sender_scale(l)
            x = tape.spmm(graph, t, inp, scale)
            outs.append(x)
        hs.append(tape.scale_add(outs, weights))
    h = hs[0] if len(hs) == 1 else tape.scale_add(hs)
    return tape.tanh(tape.linear(h, leaves["W"])), hs


def decode(tape: Tape, leaves: dict[str, Tensor], n: Tensor, user_nodes, item_nodes) -> Tensor:
    """Logits (P x T): e_t = n[u]^T W_t n[i]."""
    n_levels = sum(1 for k in leaves if k.startswith("decoder."))
    return tape.pair_bilinear(n, [leaves[f"decoder.{t}"] for t in range(n_levels)], user_nodes, item_nodes)


def expected_rating(logits: np.ndarray, levels: np.ndarray) -> np.ndarray:
    return softmax(logits) @ levels


def ce_loss(tape: Tape, logits: Tensor, targets) -> Tensor:
    if logits.data.shape[0] == 0:
        raise ValueError("cross entropy over an empty pair set")
    return tape.mean(tape.cross_entropy_rows(logits, targets))


def nrr_loss(tape: Tape, hs: list[Tensor]) -> Tensor:
    """-sum_t sum_i cos(h_t[i], h_{t+1}[i])."""
    if len(hs) < 2:
        return tape.const(0.0)
    terms = [tape.sum(tape.cosine_rows(a, b)) for a, b in zip(hs[:-1], hs[1:])]
    return tape.scale_add(terms, [-1.0] * len(terms))


def total_loss(tape: Tape, ce: Tensor, nrr: Tensor, lam: float) -> Tensor:
    if lam == 0.0:
        return ce
    return tape.scale_add([ce, nrr], [1.0, lam])


def pair_nodes(ds: RatingDataset) -> tuple[np.ndarray, np.ndarray]:
    """Unified node ids for the dataset's (user, item) pairs."""
    return ds.users, ds.items + ds.n_users


# -- inductive imputation ----------------------------------------------------


def expand_params(params: ModelParams, n_users: int, n_items: int) -> ModelParams:
    """Grow latent tables to a larger id space; new rows are zero until imputed."""
    if n_users < params.n_users or n_items < params.n_items:
        raise ValueError("expand_params can only grow the node space")
    if (n_users, n_items) == (params.n_users, params.n_items):
        return params.copy()
    arrays = {}
    for k, v in params.arrays.items():
        if k.startswith("latent."):
            out = np.zeros((n_users + n_items, v.shape[1]))
            out[:params.n_users] = v[:params.n_users]
            out[n_users:n_users + params.n_items] = v[params.n_users:]
            arrays[k] = out
        else:
            arrays[k] = v.copy()
    return ModelParams(n_users, n_items, params.levels.copy(), arrays)


def impute_unseen(params: ModelParams, seen: np.ndarray) -> ModelParams:
    """Replace latent rows of unseen nodes with the mean seen row of the same role, per level."""
    seen = np.asarray(seen, dtype=bool)
    if seen.shape != (params.n_nodes,):
        raise ValueError(f"seen mask must have {params.n_nodes} entries")
    out = params.copy()
    for lo, hi, role in ((0, params.n_users, "user"), (params.n_users, params.n_nodes, "item")):
        s = seen[lo:hi]
        if s.all():
            continue
        if not s.any():
            raise ValueError(f"no seen {role} nodes to impute from")
        unseen_rows = lo + np.flatnonzero(~s)
        seen_rows = lo + np.flatnonzero(s)
        for t in range(params.n_levels):
            lat = out.arrays[f"latent.{t}"]
            lat[unseen_rows] = lat[seen_rows].mean(axis=0)
    return out


def inductive_view(params: ModelParams, graph: RatingGraph, n_users: int, n_items: int) -> tuple[ModelParams, RatingGraph]:
    """Params and graph over a (possibly larger) id space with every node that has
    no training edge imputed."""
    big_graph = graph.expand(n_users, n_items)
    big = expand_params(params, n_users, n_items)
    return impute_unseen(big, big_graph.total_degree() > 0), big_graph


# -- prediction / evaluation -------------------------------------------------


def predict_logits(params: ModelParams, graph: RatingGraph, hp: HyperParams, user_nodes, item_nodes) -> np.ndarray:
    tape = Tape()
    leaves = _leaves(tape, params, trainable=False)
    n, _ = encode(tape, leaves, graph, hp, None)
    return decode(tape, leaves, n, user_nodes, item_nodes).data


def predict(params: ModelParams, graph: RatingGraph, hp: HyperParams, users, items) -> np.ndarray:
    """Expected rating for (user, item) index pairs, dropout disabled."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    if len(users) and (users.max() >= params.n_users or items.max() >= params.n_items or min(users.min(), items.min()) < 0):
        raise IndexError("pair index out of range")
    logits = predict_logits(params, graph, hp, users, items + params.n_users)
    return expected_rating(logits, params.levels)


def rmse(pred: np.ndarray, truth: np.ndarray) -> float:
    return float(np.sqrt(np.mean((np.asarray(pred) - np.asarray(truth)) ** 2)))


def evaluate_rmse(params: ModelParams, graph: RatingGraph, test: RatingDataset, hp: HyperParams) -> float:
    """RMSE on ``test`` against its true numeric ratings.

    ``params``/``graph`` must already cover the test id space with unseen rows
    imputed (see :func:`inductive_view`).
    """
    if len(test) == 0:
        raise ValueError("empty test set")
    if (params.n_users, params.n_items) != (test.n_users, test.n_items):
        raise ValueError("params do not cover the test id space; call inductive_view first")
    return rmse(predict(params, graph, hp, test.users, test.items), test.values)


def evaluate_inductive(params: ModelParams, graph: RatingGraph, test: RatingDataset, hp: HyperParams) -> float:
    p, g = inductive_view(params, graph, test.n_users, test.n_items)
    return evaluate_rmse(p, g, test, hp)


# -- training ----------------------------------------------------------------


@dataclass
class TrainReport:
    hyperparams: dict
    rows: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    best_test_rmse: float | None = None
    final_train_loss: float | None = None
    seconds: float = 0.0
    backend: str = kernels.BACKEND

    def to_dict(self) -> dict:
        return asdict(self)


def _loss_on_tape(tape, leaves, graph, hp, dropout, user_nodes, item_nodes, targets):
    n, hs = encode(tape, leaves, graph, hp, dropout)
    logits = decode(tape, leaves, n, user_nodes, item_nodes)
    ce = ce_loss(tape, logits, targets)
    nrr = nrr_loss(tape, hs)
    return total_loss(tape, ce, nrr, hp.lam), ce, nrr, logits


def loss_and_grads(params: ModelParams, graph: RatingGraph, hp: HyperParams, train: RatingDataset,
                   dropout: DropoutPlan | None = None):
    """(total, ce, nrr, grads) for one full-batch pass."""
    tape = Tape()
    leaves = _leaves(tape, params, trainable=True)
    un, inn = pair_nodes(train)
    loss, ce, nrr, _ = _loss_on_tape(tape, leaves, graph, hp, dropout, un, inn, train.level_idx)
    grads = tape.backward(loss)
    return float(loss.data), float(ce.data), float(nrr.data), grads


def fit(train: RatingDataset, hp: HyperParams, test: RatingDataset | None = None,
        params: ModelParams | None = None, log_every: int = 0,
        eval_every: int = 1) -> tuple[ModelParams, TrainReport]:
    """Full-batch Adam training.

    With a test set, the returned params are those of the epoch with the lowest
    test RMSE (nodes without training edges imputed at every evaluation);
    otherwise the final params.
    """
    start = time.perf_counter()
    graph = build_graph(train)
    if params is None:
        params = init_params(hp, train.n_users, train.n_items, train.levels)
    opt = Adam(lr=hp.lr)
    drop_rng = np.random.default_rng([hp.seed, 1])
    user_nodes, item_nodes = pair_nodes(train)
    probs = layer_probabilities(hp.p0, hp.theta, max(hp.layers, 1))[: hp.layers].round(12).tolist()
    report = TrainReport(hyperparams=hp.to_dict())
    best = params.copy()
    best_rmse = math.inf
    stale = 0
    if test is not None and hp.epochs == 0:
        report.best_test_rmse = evaluate_inductive(params, graph, test, hp)

    for epoch in range(1, hp.epochs + 1):
        dropout = None
        if hp.layers > 0 and hp.p0 > 0:
            dropout = sample_dropout(hp.p0, hp.theta, hp.layers, graph.n_nodes, drop_rng)
        tape = Tape()
        leaves = _leaves(tape, params, trainable=True)
        loss, ce, nrr, logits = _loss_on_tape(tape, leaves, graph, hp, dropout, user_nodes, item_nodes, train.level_idx)
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch} (ce={float(ce.data)}, nrr={float(nrr.data)})")
        grads = tape.backward(loss)
        step_lr = opt.lr
        if hp.weight_decay:
            for k in grads:
                if k.startswith("latent."):
                    grads[k] = grads[k] + hp.weight_decay * params.arrays[k]
        opt.step(params.arrays, grads)

        row = {
            "epoch": epoch,
            "train_loss": value,
            "ce": float(ce.data),
            "nrr": float(nrr.data),
            "train_rmse": rmse(expected_rating(logits.data, train.levels), train.values),
            "test_rmse": None,
            "lr": step_lr,
            "p_l": probs,
        }
        if test is not None and (epoch % eval_every == 0 or epoch == hp.epochs):
            r = evaluate_inductive(params, graph, test, hp)
            row["test_rmse"] = r
            if r < best_rmse:
                best_rmse, best = r, params.copy()
                report.best_epoch = epoch
                stale = 0
            else:
                stale += 1
                if stale >= hp.lr_patience and hp.lr_decay < 1.0:
                    opt.lr *= hp.lr_decay
                    stale = 0
        report.rows.append(row)
        if log_every and epoch % log_every == 0:
            log.info("epoch %d loss %.4f ce %.4f nrr %.2f train_rmse %.4f test_rmse %s", epoch, value, row["ce"],
                     row["nrr"], row["train_rmse"],
                     "-" if row["test_rmse"] is None else f"{row['test_rmse']:.4f}")

    report.seconds = time.perf_counter() - start
    if report.rows:
        report.final_train_loss = report.rows[-1]["train_loss"]
    if test is not None and report.rows:
        report.best_test_rmse = best_rmse
        return best, report
    return params, report
