import csv
import json

import numpy as np
import pytest

from imcgae.cli import main, resolve_config, build_parser
from imcgae.data import RawRating

from conftest import random_dataset

FAST = ["--dim-id", "3", "--dim-role", "3", "--dim-lat", "3", "--dim-dec", "3", "--epochs", "3"]


def _write(path, ds, rng=None, delimiter="\t"):
    lines = [delimiter.join((r.user, r.item, f"{r.rating:g}", "0")) for r in ds.to_raw()]
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def files(tmp_path):
    full = random_dataset(12, 9, 0.5, seed=1)
    rows = np.random.default_rng(0).permutation(len(full))
    cut = int(0.8 * len(full))
    train = _write(tmp_path / "train.tsv", full.take(np.sort(rows[:cut])))
    test = _write(tmp_path / "test.tsv", full.take(np.sort(rows[cut:])))
    return train, test


def _csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestConfig:
    def _resolve(self, argv):
        return resolve_config(build_parser().parse_args(argv))

    def test_defaults(self):
        cfg = self._resolve(["train"])
        assert cfg["layers"] == 2 and cfg["lam"] == 4e-3 and cfg["seed"] == 0

    def test_precedence(self, tmp_path):
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps({"layers": 3, "lambda": 0.5, "epochs": 7}))
        cfg = self._resolve(["train", "--config", str(conf), "--epochs", "9"])
        assert (cfg["layers"], cfg["lam"], cfg["epochs"]) == (3, 0.5, 9)
        assert cfg["p0"] == 0.5

    def test_unknown_config_key(self, tmp_path, capsys):
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps({"layerz": 3}))
        assert main(["gradcheck", "--config", str(conf), "--out", str(tmp_path)]) == 2
        assert "unknown option" in capsys.readouterr().err

    def test_ratio_list(self):
        cfg = self._resolve(["ablate-sparsity", "--ratio-list", "1,0.5,0.25"])
        assert cfg["ratio_list"] == [1.0, 0.5, 0.25]

    def test_delimiter_names(self):
        assert self._resolve(["analyze", "--delimiter", "comma"])["delimiter"] == ","
        assert self._resolve(["analyze", "--delimiter", "\\t"])["delimiter"] == "\t"


class TestCommands:
    def test_analyze(self, files, tmp_path):
        out = tmp_path / "a"
        assert main(["analyze", "--train", str(files[0]), "--out", str(out)]) == 0
        rows = _csv(out / "report.csv")
        assert [r["heuristic"] for r in rows] == ["AUR", "AIR", "MCR", "SCF"]
        assert (out / "report.txt").exists() and (out / "config.resolved").exists()

    def test_analyze_constant_undefined(self, tmp_path):
        p = tmp_path / "c.tsv"
        p.write_text("".join(f"{u}\t{i}\t4\t0\n" for u in range(3) for i in range(3)))
        assert main(["analyze", "--train", str(p), "--out", str(tmp_path / "o")]) == 0
        assert all(r["pcc"] == "" for r in _csv(tmp_path / "o" / "report.csv"))
        assert "undefined" in (tmp_path / "o" / "report.txt").read_text()

    def test_rerun_is_byte_identical(self, files, tmp_path):
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert main(["train", "--train", str(files[0]), "--test", str(files[1]), "--out", str(out), *FAST]) == 0
            outs.append(out)
        for f in ("report.csv", "report.txt", "ckpt.bin"):
            assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f

    def test_train_then_eval(self, files, tmp_path):
        out = tmp_path / "t"
        assert main(["train", "--train", str(files[0]), "--test", str(files[1]), "--out", str(out), *FAST]) == 0
        rows = _csv(out / "report.csv")
        assert len(rows) == 3
        best = min(float(r["test_rmse"]) for r in rows)
        ev = tmp_path / "e"
        assert main(["eval", "--train", str(files[0]), "--test", str(files[1]), "--ckpt", str(out / "ckpt.bin"),
                     "--out", str(ev)]) == 0
        assert float(_csv(ev / "report.csv")[0]["rmse"]) == best

    def test_resolved_config_reproduces(self, files, tmp_path):
        out = tmp_path / "t"
        main(["train", "--train", str(files[0]), "--test", str(files[1]), "--out", str(out), *FAST, "--seed", "4"])
        again = tmp_path / "t2"
        assert main(["train", "--config", str(out / "config.resolved"), "--out", str(again)]) == 0
        assert (out / "report.csv").read_bytes() == (again / "report.csv").read_bytes()

    def test_seed_changes_report(self, files, tmp_path):
        for s in ("0", "1"):
            main(["train", "--train", str(files[0]), "--test", str(files[1]), "--out", str(tmp_path / s), *FAST, "--seed", s])
        assert (tmp_path / "0" / "report.csv").read_bytes() != (tmp_path / "1" / "report.csv").read_bytes()

    def test_zero_epochs(self, files, tmp_path):
        out = tmp_path / "z"
        args = ["train", "--train", str(files[0]), "--test", str(files[1]), "--out", str(out), *FAST, "--epochs", "0"]
        assert main(args) == 0
        assert _csv(out / "report.csv") == []
        assert (out / "ckpt.bin").stat().st_size > 0

    def test_eval_node_holdout(self, files, tmp_path):
        out = tmp_path / "h"
        common = ["--train", str(files[0]), "--node-holdout", "0.25", "--out", str(out)]
        assert main(["train", *common, *FAST]) == 0
        assert main(["eval", *common]) == 0
        row = _csv(out / "report.csv")[0]
        assert np.isfinite(float(row["rmse"])) and int(row["unseen_users"]) == 3

    def test_corrupted_checkpoint(self, files, tmp_path, capsys):
        out = tmp_path / "t"
        main(["train", "--train", str(files[0]), "--test", str(files[1]), "--out", str(out), *FAST])
        blob = bytearray((out / "ckpt.bin").read_bytes())
        blob[100] ^= 1
        (out / "ckpt.bin").write_bytes(bytes(blob))
        assert main(["eval", "--train", str(files[0]), "--test", str(files[1]), "--out", str(out)]) == 2
        assert "checksum" in capsys.readouterr().err

    def test_eval_dimension_mismatch(self, files, tmp_path, capsys):
        out = tmp_path / "t"
        main(["train", "--train", str(files[0]), "--test", str(files[1]), "--out", str(out), *FAST])
        other = _write(tmp_path / "other.tsv", random_dataset(4, 3, 0.6, seed=9))
        assert main(["eval", "--train", str(other), "--test", str(files[1]), "--out", str(out)]) == 2
        assert "checkpoint was trained on" in capsys.readouterr().err

    def test_ablate_sparsity(self, files, tmp_path):
        out = tmp_path / "s"
        args = ["ablate-sparsity", "--train", str(files[0]), "--test", str(files[1]), "--out", str(out), *FAST,
                "--ratio-list", "1.0,0.5"]
        assert main(args) == 0
        rows = _csv(out / "report.csv")
        assert [r["ratio"] for r in rows] == ["1.0", "0.5"]
        first = (out / "report.csv").read_bytes()
        main(args)
        assert (out / "report.csv").read_bytes() == first

    def test_ablate_layers(self, files, tmp_path):
        out = tmp_path / "l"
        assert main(["ablate-layers", "--train", str(files[0]), "--test", str(files[1]), "--out", str(out), *FAST]) == 0
        rows = _csv(out / "report.csv")
        assert [int(r["layers"]) for r in rows] == [1, 2, 3, 4, 5]
        assert all(np.isfinite(float(r["rmse"])) for r in rows)

    def test_gradcheck(self, tmp_path, capsys):
        assert main(["gradcheck", "--out", str(tmp_path)]) == 0
        text = capsys.readouterr().out
        assert "end_to_end" in text and "FAIL" not in text
        assert len(_csv(tmp_path / "report.csv")) == 19

    def test_missing_file(self, tmp_path, capsys):
        assert main(["analyze", "--train", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 2
        assert "not found" in capsys.readouterr().err

    def test_missing_test_split(self, files, tmp_path):
        assert main(["train", "--train", str(files[0]), "--out", str(tmp_path), *FAST]) == 2

    def test_bad_hyperparameter(self, files, tmp_path, capsys):
        assert main(["train", "--train", str(files[0]), "--test", str(files[1]), "--out", str(tmp_path), "--p0", "1.5"]) == 2
        assert "p0" in capsys.readouterr().err
