"""Build u.data, u1.base and u1.test for ML-100K from whatever copy is at hand.

    python scripts/prepare_ml100k.py SOURCE [--out data/ml-100k]

SOURCE may be the GroupLens ``ml-100k.zip``, a directory or file holding
``u.data``, or a RecBole ``ml-100k.inter`` file (same rows, same order, one
header line). Nothing is downloaded.

The u1 split follows the distribution's own ``mku.sh``: the first 20000 lines
of u.data form the test side, the remaining 80000 the training side, and both
are sorted by (user, item).
"""

from __future__ import annotations

import argparse
import io
import sys
import zipfile
from pathlib import Path


def read_rows(source: Path) -> list[str]:
    if source.is_dir():
        for name in ("u.data", "ml-100k.inter"):
            if (source / name).exists():
                return read_rows(source / name)
        raise SystemExit(f"{source}: no u.data or ml-100k.inter inside")
    if zipfile.is_zipfile(source):
        with zipfile.ZipFile(source) as zf:
            name = next((n for n in zf.namelist() if n.endswith("/u.data") or n == "u.data"), None)
            if name is None:
                raise SystemExit(f"{source}: archive has no u.data")
            text = io.TextIOWrapper(zf.open(name), encoding="latin-1").read()
    else:
        text = source.read_text(encoding="latin-1")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if lines and lines[0].startswith("user_id"):
        lines = lines[1:]  # RecBole header
    rows = []
    for ln in lines:
        f = ln.split("\t")
        if len(f) != 4:
            raise SystemExit(f"{source}: expected 4 tab-separated fields, got {ln!r}")
        rows.append("\t".join(str(int(float(x))) for x in f))
    return rows


def _key(row: str) -> tuple[int, int]:
    u, i = row.split("\t")[:2]
    return int(u), int(i)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("source", type=Path)
    ap.add_argument("--out", type=Path, default=Path("data/ml-100k"))
    args = ap.parse_args(argv)

    rows = read_rows(args.source)
    if len(rows) != 100_000:
        print(f"warning: expected 100000 ratings, found {len(rows)}", file=sys.stderr)
    args.out.mkdir(parents=True, exist_ok=True)
    test, base = rows[:20_000], rows[20_000:]
    for name, part in (("u.data", rows), ("u1.base", sorted(base, key=_key)), ("u1.test", sorted(test, key=_key))):
        (args.out / name).write_text("\n".join(part) + "\n")
        print(f"wrote {args.out / name} ({len(part)} ratings)")


if __name__ == "__main__":
    main()
