"""Sparse ratings store, train/test splitting and sparsity masking.

Everything random in here is a pure function of ``(input, seed)``; numpy's
PCG64 generator is bit-stable across platforms, so identical seeds give
identical partitions everywhere.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

_logger = logging.getLogger(__name__)


class RatingsError(ValueError):
    """Base class for invalid ratings input."""


class DuplicateEntry(RatingsError):
    def __init__(self, user: int, item: int):
        super().__init__(f"duplicate rating for (user={user}, item={item})")
        self.user = user
        self.item = item


class NonFiniteRating(RatingsError):
    pass


class EmptyMatrix(RatingsError):
    pass


class RatingsMatrix:
    """Immutable sparse user-item rating matrix.

    Entries are stored in canonical (user, item) order.  Two adjacency views
    are kept: ``user_indptr`` slices the canonical arrays by user, and
    ``item_order``/``item_indptr`` give the entries of each item sorted by
    user id.

    Parameters
    ----------
    users, items, ratings
        Parallel arrays of equal length.
    num_users, num_items
        Shape of the matrix; defaults to ``max(id) + 1``.
    rating_scale
        ``(low, high)`` used to clamp predictions.  Defaults to the observed
        min/max and is inherited by every split or mask of this matrix.
    """

    __slots__ = (
        "num_users", "num_items", "users", "items", "ratings", "rating_scale",
        "user_indptr", "item_order", "item_indptr",
    )

    def __init__(self, users, items, ratings, num_users=None, num_items=None,
                 rating_scale=None):
        users = np.asarray(users, dtype=np.int64).ravel()
        items = np.asarray(items, dtype=np.int64).ravel()
        ratings = np.asarray(ratings, dtype=np.float64).ravel()
        if not (len(users) == len(items) == len(ratings)):
            raise RatingsError("users, items and ratings must have equal length")
        if len(users) and (users.min() < 0 or items.min() < 0):
            raise RatingsError("ids must be non-negative")
        if not np.all(np.isfinite(ratings)):
            bad = int(np.flatnonzero(~np.isfinite(ratings))[0])
            raise NonFiniteRating(
                f"non-finite rating at (user={users[bad]}, item={items[bad]})")

        m = int(users.max()) + 1 if len(users) else 0
        n = int(items.max()) + 1 if len(items) else 0
        num_users = m if num_users is None else int(num_users)
        num_items = n if num_items is None else int(num_items)
        if num_users < m or num_items < n:
            raise RatingsError("ids exceed the declared matrix shape")

        order = np.lexsort((items, users))
        users, items, ratings = users[order], items[order], ratings[order]
        dup = (users[1:] == users[:-1]) & (items[1:] == items[:-1])
        if dup.any():
            k = int(np.flatnonzero(dup)[0])
            raise DuplicateEntry(int(users[k]), int(items[k]))

        if rating_scale is None:
            rating_scale = ((float(ratings.min()), float(ratings.max()))
                            if len(ratings) else (0.0, 0.0))

        self.num_users = num_users
        self.num_items = num_items
        self.users = users
        self.items = items
        self.ratings = ratings
        self.rating_scale = (float(rating_scale[0]), float(rating_scale[1]))
        self.user_indptr = _indptr(users, num_users)
        self.item_order = np.lexsort((users, items))
        self.item_indptr = _indptr(items[self.item_order], num_items)
        for arr in (self.users, self.items, self.ratings, self.user_indptr,
                    self.item_order, self.item_indptr):
            arr.flags.writeable = False

    # -- size & stats -----------------------------------------------------
    @property
    def nnz(self) -> int:
        return len(self.ratings)

    def __len__(self):
        return self.nnz

    @property
    def shape(self):
        return (self.num_users, self.num_items)

    @property
    def density(self) -> float:
        cells = self.num_users * self.num_items
        return self.nnz / cells if cells else 0.0

    @property
    def global_mean(self) -> float:
        return float(self.ratings.mean()) if self.nnz else 0.0

    def user_counts(self) -> np.ndarray:
        return np.diff(self.user_indptr)

    def item_counts(self) -> np.ndarray:
        return np.diff(self.item_indptr)

    def user_means(self, fill=None) -> np.ndarray:
        """Per-user mean rating; users without ratings get ``fill``
        (the global mean by default)."""
        counts = self.user_counts()
        sums = np.bincount(self.users, weights=self.ratings, minlength=self.num_users)
        fill = self.global_mean if fill is None else fill
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(counts > 0, sums / np.maximum(counts, 1), fill)

    # -- adjacency ----------------------------------------------------------
    def user_row(self, u: int):
        """``(items, ratings)`` rated by user ``u``, items ascending."""
        lo, hi = self.user_indptr[u], self.user_indptr[u + 1]
        return self.items[lo:hi], self.ratings[lo:hi]

    def item_column(self, i: int):
        """``(users, ratings)`` for item ``i``, users ascending."""
        sel = self.item_order[self.item_indptr[i]:self.item_indptr[i + 1]]
        return self.users[sel], self.ratings[sel]

    def get(self, u: int, i: int, default=None):
        if not (0 <= u < self.num_users):
            return default
        items, ratings = self.user_row(u)
        k = np.searchsorted(items, i)
        if k < len(items) and items[k] == i:
            return float(ratings[k])
        return default

    def __contains__(self, key):
        return self.get(*key) is not None

    def triples(self):
        return list(zip(self.users.tolist(), self.items.tolist(),
                        self.ratings.tolist()))

    def entry_set(self) -> set:
        return set(self.triples())

    # -- conversions --------------------------------------------------------
    def to_csr(self):
        import scipy.sparse as sp
        return sp.csr_matrix((self.ratings, self.items, self.user_indptr),
                             shape=self.shape)

    def to_dense(self, fill=np.nan) -> np.ndarray:
        out = np.full(self.shape, fill, dtype=np.float64)
        out[self.users, self.items] = self.ratings
        return out

    def subset(self, mask_or_index) -> "RatingsMatrix":
        """Matrix built from a selection of this matrix's canonical entries;
        shape and rating scale are kept."""
        sel = np.asarray(mask_or_index)
        return RatingsMatrix(self.users[sel], self.items[sel], self.ratings[sel],
                             self.num_users, self.num_items, self.rating_scale)

    def clamp(self, values):
        lo, hi = self.rating_scale
        return np.clip(values, lo, hi)

    def __repr__(self):
        return (f"RatingsMatrix(num_users={self.num_users}, "
                f"num_items={self.num_items}, nnz={self.nnz})")

    def __eq__(self, other):
        if not isinstance(other, RatingsMatrix):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self.users, other.users)
                and np.array_equal(self.items, other.items)
                and np.array_equal(self.ratings, other.ratings))

    __hash__ = None


def _indptr(sorted_ids: np.ndarray, size: int) -> np.ndarray:
    counts = np.bincount(sorted_ids, minlength=size) if len(sorted_ids) else \
        np.zeros(size, dtype=np.int64)
    indptr = np.zeros(size + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr


def build_ratings(triples: Iterable[Sequence], num_users=None, num_items=None,
                  rating_scale=None) -> RatingsMatrix:
    """Build a :class:`RatingsMatrix` from ``(user, item, rating)`` triples.

    >>> build_ratings([(0, 0, 5.0), (1, 1, 3.0)]).nnz
    2
    """
    triples = list(triples)
    if not triples:
        return RatingsMatrix([], [], [], num_users or 0, num_items or 0, rating_scale)
    users, items, ratings = zip(*triples)
    return RatingsMatrix(users, items, ratings, num_users, num_items, rating_scale)


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    seed: int = 0
    stratify_by_user: bool = True

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class SparsityLevel:
    """Fraction of training entries kept.  A paper-style "sparsity" ``s``
    corresponds to ``retained_fraction = 1 - s``."""

    retained_fraction: float

    def __post_init__(self):
        if not 0.0 < self.retained_fraction <= 1.0:
            raise ValueError("retained_fraction must lie in (0, 1]")

    @classmethod
    def from_sparsity(cls, sparsity: float) -> "SparsityLevel":
        return cls(round(1.0 - sparsity, 12))

    @property
    def sparsity(self) -> float:
        return round(1.0 - self.retained_fraction, 12)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split(matrix: RatingsMatrix, spec: SplitSpec):
    """Random train/test partition of ``matrix``.

    Stratified: each user with ``n >= 2`` ratings sends
    ``clip(round(f * n), 1, n - 1)`` of them to test; single-rating users keep
    theirs in train.  Otherwise the first ``round(f * nnz)`` entries of a
    seeded permutation form the test set.
    """
    if matrix.nnz == 0:
        raise EmptyMatrix("cannot split an empty matrix")
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(matrix.nnz)
    is_test = np.zeros(matrix.nnz, dtype=bool)
    if spec.stratify_by_user:
        counts = matrix.user_counts()
        n_test = np.floor(spec.test_fraction * counts + 0.5).astype(np.int64)
        n_test = np.where(counts >= 2, np.clip(n_test, 1, counts - 1), 0)
        # rank of each entry within its user, in permutation order
        pu = matrix.users[perm]
        order = np.argsort(pu, kind="stable")
        grouped = perm[order]
        starts = matrix.user_indptr[pu[order]]
        rank = np.arange(matrix.nnz) - starts
        is_test[grouped] = rank < n_test[matrix.users[grouped]]
    else:
        is_test[perm[:_round_half_up(spec.test_fraction * matrix.nnz)]] = True
    return matrix.subset(~is_test), matrix.subset(is_test)


def retention_order(train: RatingsMatrix, seed: int) -> np.ndarray:
    """Priority order over ``train``'s entries used by :func:`mask`.

    One seeded permutation is drawn.  Walking it, an entry is *protected* when
    it is the first one seen for its user or its item; protected entries come
    first, the rest follow in permutation order.  Prefixes of this order give
    nested masks.
    """
    perm = np.random.default_rng(seed).permutation(train.nnz)
    seen_u = np.zeros(train.num_users, dtype=bool)
    seen_i = np.zeros(train.num_items, dtype=bool)
    protected = np.zeros(train.nnz, dtype=bool)
    users, items = train.users, train.items
    for pos, e in enumerate(perm):
        u, i = users[e], items[e]
        if not seen_u[u] or not seen_i[i]:
            protected[pos] = True
            seen_u[u] = True
            seen_i[i] = True
    return np.concatenate([perm[protected], perm[~protected]])


def mask(train: RatingsMatrix, level: SparsityLevel | float, seed: int,
         order: np.ndarray | None = None) -> RatingsMatrix:
    """Keep ``round(retained_fraction * nnz)`` entries of ``train``.

    Masks for different levels under the same seed are nested.  ``order`` may
    be passed to reuse a precomputed :func:`retention_order`.
    """
    if not isinstance(level, SparsityLevel):
        level = SparsityLevel(level)
    if level.retained_fraction == 1.0:
        return train
    if order is None:
        order = retention_order(train, seed)
    keep = _round_half_up(level.retained_fraction * train.nnz)
    sel = np.sort(order[:keep])
    return train.subset(sel)
