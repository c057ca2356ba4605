from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from cfkit.core import RatingsMatrix

ROOT = Path(__file__).resolve().parents[1]
ML100K = ROOT / "data" / "ml-100k"


def random_matrix(rng, m, n, density=0.5, scale=(1, 5), integer=True, ensure_rows=True):
    """Random ratings matrix; with ``ensure_rows`` every user has a rating."""
    mask = rng.random((m, n)) < density
    if ensure_rows:
        empty = ~mask.any(axis=1)
        mask[empty, rng.integers(0, n, empty.sum())] = True
    u, i = np.nonzero(mask)
    if integer:
        r = rng.integers(scale[0], scale[1] + 1, len(u)).astype(float)
    else:
        r = rng.uniform(scale[0], scale[1], len(u))
    return RatingsMatrix(u, i, r, m, n, scale)


@lru_cache(maxsize=1)
def _load_ml100k():
    from cfkit.ingest import load_dataset
    return load_dataset(ML100K / "u.data", "u_data_100k", ML100K / "movies.dat")


@pytest.fixture(scope="session")
def ml100k():
    if not (ML100K / "u.data").exists():
        pytest.skip("MovieLens-100K not found; run scripts/fetch_movielens.py")
    return _load_ml100k()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = (bool(ok), detail)
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n:>2}: {detail}")
