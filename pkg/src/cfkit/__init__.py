"""Collaborative filtering toolkit: neighborhood CF, regularized matrix
factorization (SGD/ALS), random-hyperplane LSH, block-partitioned ALS, a
content+CF hybrid, and an RMSE/MAE evaluation harness."""

import os as _os

import numba as _numba

# numba's default TBB probe warns on this platform; prefer OpenMP when present
if "NUMBA_THREADING_LAYER" not in _os.environ:
    try:
        from numba.np.ufunc import omppool  # noqa: F401
        _numba.config.THREADING_LAYER = "omp"
    except ImportError:
        pass

from .core import (
    DuplicateEntry,
    EmptyMatrix,
    NonFiniteRating,
    RatingsMatrix,
    SparsityLevel,
    SplitSpec,
    build_ratings,
    mask,
    split,
)

__version__ = "0.1.0"
