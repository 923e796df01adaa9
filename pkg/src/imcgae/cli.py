"""Command-line entry point: ``imcgae <command> [options]``.

Every option can also come from a JSON file given with ``--config``; flags
override the file, which overrides the built-in defaults. Each run writes the
fully resolved settings to ``config.resolved`` in the output directory, and
that file is itself a valid ``--config``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint, gradcheck, kernels
from .data import DataError, load_dataset, load_split, node_holdout, subsample
from .graph import build_graph
from .heuristics import analyze
from .model import HyperParams, ModelParams, TrainingDiverged, evaluate_inductive, fit

log = logging.getLogger("imcgae")

COMMANDS = ("analyze", "train", "eval", "ablate-sparsity", "ablate-layers", "gradcheck")

DEFAULTS = {
    "train": None,
    "test": None,
    "delimiter": "\t",
    "out": "runs/latest",
    "ckpt": None,
    "node_holdout": None,
    "ratio_list": [1.0, 0.2, 0.1, 0.05, 0.01],
    "layer_list": [1, 2, 3, 4, 5],
    "eval_every": 1,
    "log_every": 0,
    **HyperParams().to_dict(),
}

# config-file spellings that differ from the internal key
ALIASES = {"lambda": "lam", "ratios": "ratio_list"}


def _csv_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _delimiter(text: str) -> str:
    text = {"\\t": "\t", "tab": "\t", "comma": ",", "space": " "}.get(text, text)
    if len(text) != 1:
        raise argparse.ArgumentTypeError("delimiter must be a single character")
    return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="imcgae", description="Inductive matrix completion with a graph autoencoder.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON file with option values")
    common.add_argument("--train", help="training ratings file")
    common.add_argument("--test", help="test ratings file")
    common.add_argument("--delimiter", type=_delimiter, help="field separator (default: tab)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)

    hyper = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    hyper.add_argument("--layers", type=int)
    hyper.add_argument("--dim-id", dest="dim_id", type=int)
    hyper.add_argument("--dim-role", dest="dim_role", type=int)
    hyper.add_argument("--dim-lat", dest="dim_lat", type=int)
    hyper.add_argument("--dim-dec", dest="dim_dec", type=int)
    hyper.add_argument("--p0", type=float)
    hyper.add_argument("--theta", type=float)
    hyper.add_argument("--lambda", dest="lam", type=float)
    hyper.add_argument("--lr", type=float)
    hyper.add_argument("--epochs", type=int)
    hyper.add_argument("--weight-decay", dest="weight_decay", type=float)
    hyper.add_argument("--lr-decay", dest="lr_decay", type=float, help="lr multiplier applied on a test-RMSE plateau")
    hyper.add_argument("--lr-patience", dest="lr_patience", type=int, help="evaluations without improvement before decaying")
    hyper.add_argument("--no-identical", dest="use_identical", action="store_false")
    hyper.add_argument("--no-role", dest="use_role", action="store_false")
    hyper.add_argument("--eval-every", dest="eval_every", type=int)
    hyper.add_argument("--log-every", dest="log_every", type=int)
    hyper.add_argument("--node-holdout", dest="node_holdout", type=float,
                       help="without --test: hold out this fraction of users as the test side")

    sub.add_parser("analyze", parents=[common], help="heuristic correlation report")
    sub.add_parser("train", parents=[common, hyper], help="train and checkpoint the best epoch")
    p_eval = sub.add_parser("eval", parents=[common, hyper], help="RMSE of a checkpoint on a test file")
    p_eval.add_argument("--ckpt", default=argparse.SUPPRESS, help="checkpoint path (default: OUT/ckpt.bin)")
    p_sp = sub.add_parser("ablate-sparsity", parents=[common, hyper], help="RMSE vs training-set ratio")
    p_sp.add_argument("--ratio-list", dest="ratio_list", type=_csv_floats, default=argparse.SUPPRESS)
    p_ly = sub.add_parser("ablate-layers", parents=[common, hyper], help="RMSE vs encoder depth")
    p_ly.add_argument("--layer-list", dest="layer_list", type=_csv_ints, default=argparse.SUPPRESS)
    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """defaults < config file < flags."""
    cfg = dict(DEFAULTS)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose", "config")}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise DataError(f"{args.config}: config must be a JSON object")
        for k, v in loaded.items():
            k = ALIASES.get(k.replace("-", "_"), k.replace("-", "_"))
            if k == "command":
                continue
            if k not in cfg:
                raise DataError(f"{args.config}: unknown option {k!r}")
            cfg[k] = v
    cfg.update(flags)
    cfg["command"] = args.command
    return cfg


def hyperparams(cfg: dict) -> HyperParams:
    return HyperParams.from_dict(cfg)


# -- output helpers ------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ";".join(_fmt(x) for x in v)
    return str(v)


def write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def write_text(path: Path, lines: list[str]) -> None:
    path.write_text("\n".join(lines) + "\n")


def write_resolved(out: Path, cfg: dict) -> None:
    (out / "config.resolved").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _need(cfg: dict, key: str) -> str:
    path = cfg.get(key)
    if not path:
        raise DataError(f"--{key} is required for {cfg['command']}")
    if not Path(path).exists():
        raise DataError(f"{key} file not found: {path}")
    return path


def load_train_test(cfg: dict):
    """(train, test) per the config: an explicit test file or a node holdout of the train file."""
    train_path = _need(cfg, "train")
    if cfg.get("test"):
        train, test, _ = load_split(train_path, _need(cfg, "test"), cfg["delimiter"])
        return train, test
    if cfg.get("node_holdout"):
        return node_holdout(load_dataset(train_path, cfg["delimiter"]), cfg["node_holdout"], cfg["seed"])
    raise DataError(f"{cfg['command']} needs --test or --node-holdout")


def _ckpt_meta(train, hp: HyperParams, report) -> dict:
    return {
        "format": "imcgae-ckpt-v1",
        "hyperparams": hp.to_dict(),
        "n_users": train.n_users,
        "n_items": train.n_items,
        "levels": train.levels.tolist(),
        "best_epoch": report.best_epoch,
        "best_test_rmse": report.best_test_rmse,
    }


# -- commands ------------------------------------------------------------------


def cmd_analyze(cfg: dict, out: Path) -> int:
    train = load_dataset(_need(cfg, "train"), cfg["delimiter"])
    rep = analyze(train)
    rows = [dict(r, density=rep.density, n_pairs=rep.n_pairs) for r in rep.rows()]
    write_csv(out / "report.csv", rows, ["heuristic", "pcc", "coverage", "density", "n_pairs"])
    write_text(out / "report.txt", [f"heuristic analysis of {cfg['train']}", rep.summary()])
    print(rep.summary())
    return 0


EPOCH_COLUMNS = ["epoch", "train_loss", "ce", "nrr", "train_rmse", "test_rmse", "lr", "p_l"]


def cmd_train(cfg: dict, out: Path) -> int:
    hp = hyperparams(cfg)
    train, test = load_train_test(cfg)
    params, report = fit(train, hp, test, log_every=cfg["log_every"], eval_every=cfg["eval_every"])
    checkpoint.save(out / "ckpt.bin", params.arrays, _ckpt_meta(train, hp, report))
    write_csv(out / "report.csv", report.rows, EPOCH_COLUMNS)
    lines = [
        f"train pairs {len(train)}  test pairs {len(test)}  epochs {hp.epochs}",
        f"best epoch {report.best_epoch}  best test RMSE {_fmt(report.best_test_rmse)}",
        f"final train loss {_fmt(report.final_train_loss)}",
    ]
    write_text(out / "report.txt", lines)
    log.info("trained in %.1fs (%s kernels)", report.seconds, report.backend)
    print("\n".join(lines))
    return 0


def load_checkpoint(path, train) -> tuple[ModelParams, HyperParams, dict]:
    arrays, meta = checkpoint.load(path)
    if meta.get("format") != "imcgae-ckpt-v1":
        raise checkpoint.CheckpointError(f"{path}: missing format tag")
    dims = (meta["n_users"], meta["n_items"], len(meta["levels"]))
    if dims != (train.n_users, train.n_items, train.n_levels) or not np.array_equal(meta["levels"], train.levels):
        raise DataError(
            f"checkpoint was trained on {dims[0]} users, {dims[1]} items, levels {meta['levels']}; "
            f"training data has {train.n_users}, {train.n_items}, {train.levels.tolist()}"
        )
    hp = HyperParams.from_dict(meta["hyperparams"])
    return ModelParams(train.n_users, train.n_items, np.asarray(meta["levels"], dtype=np.float64), arrays), hp, meta


def cmd_eval(cfg: dict, out: Path) -> int:
    train, test = load_train_test(cfg)
    ckpt = cfg.get("ckpt") or out / "ckpt.bin"
    params, hp, _ = load_checkpoint(ckpt, train)
    seen = build_graph(train).total_degree() > 0
    err = evaluate_inductive(params, build_graph(train), test, hp)
    n_unseen_users = int(np.sum(~seen[:train.n_users])) + (test.n_users - train.n_users)
    n_unseen_items = int(np.sum(~seen[train.n_users:])) + (test.n_items - train.n_items)
    row = {"rmse": err, "n_pairs": len(test), "unseen_users": n_unseen_users, "unseen_items": n_unseen_items}
    write_csv(out / "report.csv", [row], list(row))
    lines = [f"checkpoint {ckpt}", f"test pairs {len(test)}  RMSE {_fmt(err)}",
             f"imputed users {n_unseen_users}  imputed items {n_unseen_items}"]
    write_text(out / "report.txt", lines)
    print("\n".join(lines))
    return 0


def cmd_ablate_sparsity(cfg: dict, out: Path) -> int:
    base = hyperparams(cfg)
    train, test = load_train_test(cfg)
    rows = []
    for ratio in cfg["ratio_list"]:
        part = subsample(train, float(ratio), cfg["seed"])
        _, report = fit(part, base, test, log_every=cfg["log_every"], eval_every=cfg["eval_every"])
        rows.append({"ratio": float(ratio), "train_pairs": len(part), "rmse": report.best_test_rmse,
                     "best_epoch": report.best_epoch})
        log.info("ratio %s: RMSE %.4f", ratio, report.best_test_rmse)
    write_csv(out / "report.csv", rows, ["ratio", "train_pairs", "rmse", "best_epoch"])
    lines = ["ratio    pairs   RMSE"] + [f"{r['ratio']:<8} {r['train_pairs']:<7} {r['rmse']:.4f}" for r in rows]
    write_text(out / "report.txt", lines)
    print("\n".join(lines))
    return 0


def cmd_ablate_layers(cfg: dict, out: Path) -> int:
    base = hyperparams(cfg).to_dict()
    train, test = load_train_test(cfg)
    rows = []
    for L in cfg["layer_list"]:
        hp = HyperParams.from_dict(dict(base, layers=int(L)))
        _, report = fit(train, hp, test, log_every=cfg["log_every"], eval_every=cfg["eval_every"])
        rows.append({"layers": int(L), "rmse": report.best_test_rmse, "best_epoch": report.best_epoch})
        log.info("L=%d: RMSE %.4f", L, report.best_test_rmse)
    write_csv(out / "report.csv", rows, ["layers", "rmse", "best_epoch"])
    lines = ["layers  RMSE"] + [f"{r['layers']:<7} {r['rmse']:.4f}" for r in rows]
    write_text(out / "report.txt", lines)
    print("\n".join(lines))
    return 0


def cmd_gradcheck(cfg: dict, out: Path) -> int:
    results = gradcheck.run_all(seed=cfg["seed"])
    write_csv(out / "report.csv", [vars(r) for r in results], ["name", "rel_err", "passed"])
    lines = [r.line() for r in results]
    ok = all(r.passed for r in results)
    lines.append(f"{sum(r.passed for r in results)}/{len(results)} checks passed (tolerance {gradcheck.TOLERANCE:g})")
    write_text(out / "report.txt", lines)
    print("\n".join(lines))
    return 0 if ok else 1


HANDLERS = {
    "analyze": cmd_analyze,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate-sparsity": cmd_ablate_sparsity,
    "ablate-layers": cmd_ablate_layers,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        write_resolved(out, cfg)
        start = time.perf_counter()
        code = HANDLERS[args.command](cfg, out)
        log.info("%s finished in %.1fs (%s kernels)", args.command, time.perf_counter() - start, kernels.BACKEND)
        return code
    except (DataError, checkpoint.CheckpointError, TrainingDiverged, ValueError, OSError) as exc:
        print(f"imcgae {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
