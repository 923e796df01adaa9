import os
from pathlib import Path

import numpy as np
import pytest

from imcgae.data import build_dataset, ratings_from_arrays

ROOT = Path(__file__).resolve().parents[1]


def ml100k_dir() -> Path | None:
    for cand in (os.environ.get("IMCGAE_ML100K"), ROOT / "data" / "ml-100k"):
        if cand and (Path(cand) / "u1.base").exists():
            return Path(cand)
    return None


@pytest.fixture(scope="session")
def ml100k():
    d = ml100k_dir()
    if d is None:
        pytest.skip("ML-100K not found; run scripts/prepare_ml100k.py or set IMCGAE_ML100K")
    return d


def random_dataset(n_users, n_items, density, levels=(1, 2, 3, 4, 5), seed=0):
    rng = np.random.default_rng(seed)
    mask = rng.random((n_users, n_items)) < density
    mask[np.arange(n_users), rng.integers(0, n_items, n_users)] = True
    mask[rng.integers(0, n_users, n_items), np.arange(n_items)] = True
    u, i = np.nonzero(mask)
    r = rng.choice(levels, size=len(u))
    return build_dataset(ratings_from_arrays(u, i, r))


@pytest.fixture
def toy():
    """6 users x 5 items, every rating level used."""
    return random_dataset(6, 5, 0.5, seed=3)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
