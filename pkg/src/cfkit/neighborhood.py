"""Memory-based collaborative filtering: similarities, top-N neighbor
indexes and weighted-average rating prediction.

Cosine similarity is taken over the full sparse vectors (missing = 0);
Pearson correlation is computed over the co-rated overlap only, centered by
the overlap means.  Both are damped by ``overlap / (overlap + shrinkage)``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Literal

import numba
import numpy as np

from .core import RatingsMatrix

_logger = logging.getLogger(__name__)

Axis = Literal["user", "item"]
KINDS = ("cosine", "pearson", "semantic_cosine")
_KIND_CODE = {"cosine": 0, "pearson": 1}
_CHUNK = 256


class MissingEmbeddings(ValueError):
    pass


class InsufficientOverlap(ValueError):
    pass


class ConstantVector(ValueError):
    pass


@dataclass(frozen=True)
class SimilarityMetric:
    kind: str = "cosine"
    shrinkage: float = 0.0
    min_overlap: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown similarity kind {self.kind!r}")
        if self.shrinkage < 0:
            raise ValueError("shrinkage must be >= 0")
        if self.min_overlap < 1:
            raise ValueError("min_overlap must be >= 1")


def _as_sparse(vec):
    """Accept a dict ``{index: value}``, an ``(indices, values)`` pair or a
    dense array (zeros treated as missing)."""
    if isinstance(vec, dict):
        idx = np.array(sorted(vec), dtype=np.int64)
        return idx, np.array([vec[i] for i in idx.tolist()], dtype=np.float64)
    if isinstance(vec, tuple) and len(vec) == 2:
        idx = np.asarray(vec[0], dtype=np.int64)
        val = np.asarray(vec[1], dtype=np.float64)
        order = np.argsort(idx, kind="stable")
        return idx[order], val[order]
    dense = np.asarray(vec, dtype=np.float64)
    idx = np.flatnonzero(dense)
    return idx, dense[idx]


def similarity(a, b, metric: SimilarityMetric | str = "cosine") -> float:
    """Similarity of two sparse rating vectors.

    Raises :class:`InsufficientOverlap` when fewer than ``min_overlap``
    positions are shared and :class:`ConstantVector` when Pearson is
    undefined.  Cosine of two non-empty vectors with disjoint supports is
    0.  ``semantic_cosine`` treats the inputs as dense embeddings.
    """
    if isinstance(metric, str):
        metric = SimilarityMetric(metric)
    if metric.kind == "semantic_cosine":
        x = np.asarray(a, dtype=np.float64)
        y = np.asarray(b, dtype=np.float64)
        nx, ny = np.linalg.norm(x), np.linalg.norm(y)
        if nx == 0 or ny == 0:
            raise ConstantVector("zero embedding")
        return float(np.clip(x @ y / (nx * ny), -1.0, 1.0))

    ia, va = _as_sparse(a)
    ib, vb = _as_sparse(b)
    common, pa, pb = np.intersect1d(ia, ib, assume_unique=True, return_indices=True)
    overlap = len(common)
    if overlap == 0 and metric.kind == "cosine" and len(va) and len(vb):
        # disjoint supports are exactly orthogonal
        return 0.0
    if overlap < metric.min_overlap:
        raise InsufficientOverlap(f"overlap {overlap} < {metric.min_overlap}")
    x, y = va[pa], vb[pb]
    if metric.kind == "cosine":
        na, nb = np.sqrt(np.sum(va * va)), np.sqrt(np.sum(vb * vb))
        if na == 0 or nb == 0:
            raise ConstantVector("zero vector")
        s = np.sum(x * y) / (na * nb)
    else:
        if x.min() == x.max() or y.min() == y.max():
            raise ConstantVector("pearson undefined for a constant vector")
        dx, dy = x - x.mean(), y - y.mean()
        s = np.sum(dx * dy) / np.sqrt(np.sum(dx * dx) * np.sum(dy * dy))
    s *= overlap / (overlap + metric.shrinkage)
    return float(min(1.0, max(-1.0, s)))


# ---------------------------------------------------------------------------
# kernels

@numba.njit(nogil=True, parallel=True, cache=True)
def _similarity_block(rows, indptr, indices, data, col_indptr, col_indices, col_data,
                      norms, kind, shrinkage, min_overlap, out):
    """Fill ``out[r, v]`` with sim(rows[r], v), NaN where undefined.

    Rows are entities (users or items) stored CSR-wise in
    (indptr, indices, data); the transposed layout (col_*) lists, for each
    coordinate, the entities holding it.  Candidates are reached through the
    inverted lists, so only entities sharing a coordinate are touched.
    """
    n_ent = out.shape[1]
    for r in numba.prange(len(rows)):
        u = rows[r]
        overlap = np.zeros(n_ent, np.int64)
        sa = np.zeros(n_ent)
        sb = np.zeros(n_ent)
        mina = np.full(n_ent, np.inf)
        maxa = np.full(n_ent, -np.inf)
        minb = np.full(n_ent, np.inf)
        maxb = np.full(n_ent, -np.inf)
        dot = np.zeros(n_ent)
        touched = np.empty(n_ent, np.int64)
        nt = 0
        for p in range(indptr[u], indptr[u + 1]):
            j = indices[p]
            a = data[p]
            for q in range(col_indptr[j], col_indptr[j + 1]):
                v = col_indices[q]
                b = col_data[q]
                if overlap[v] == 0:
                    touched[nt] = v
                    nt += 1
                overlap[v] += 1
                sa[v] += a
                sb[v] += b
                dot[v] += a * b
                if a < mina[v]:
                    mina[v] = a
                if a > maxa[v]:
                    maxa[v] = a
                if b < minb[v]:
                    minb[v] = b
                if b > maxb[v]:
                    maxb[v] = b
        for v in range(n_ent):
            out[r, v] = np.nan
        if kind == 0:
            for t in range(nt):
                v = touched[t]
                if v == u or overlap[v] < min_overlap:
                    continue
                if norms[u] == 0.0 or norms[v] == 0.0:
                    continue
                s = dot[v] / (norms[u] * norms[v])
                s *= overlap[v] / (overlap[v] + shrinkage)
                out[r, v] = min(1.0, max(-1.0, s))
        else:
            ma = np.zeros(n_ent)
            mb = np.zeros(n_ent)
            cov = np.zeros(n_ent)
            va = np.zeros(n_ent)
            vb = np.zeros(n_ent)
            for t in range(nt):
                v = touched[t]
                ma[v] = sa[v] / overlap[v]
                mb[v] = sb[v] / overlap[v]
            for p in range(indptr[u], indptr[u + 1]):
                j = indices[p]
                a = data[p]
                for q in range(col_indptr[j], col_indptr[j + 1]):
                    v = col_indices[q]
                    da = a - ma[v]
                    db = col_data[q] - mb[v]
                    cov[v] += da * db
                    va[v] += da * da
                    vb[v] += db * db
            for t in range(nt):
                v = touched[t]
                if v == u or overlap[v] < min_overlap:
                    continue
                if mina[v] == maxa[v] or minb[v] == maxb[v]:
                    continue
                s = cov[v] / np.sqrt(va[v] * vb[v])
                s *= overlap[v] / (overlap[v] + shrinkage)
                out[r, v] = min(1.0, max(-1.0, s))


def _layouts(matrix: RatingsMatrix, axis: str):
    """CSR layout of the entities along ``axis`` and its transpose."""
    user_csr = (matrix.user_indptr, matrix.items, matrix.ratings)
    item_csr = (matrix.item_indptr, matrix.users[matrix.item_order],
                matrix.ratings[matrix.item_order])
    if axis == "user":
        return user_csr, item_csr
    if axis == "item":
        return item_csr, user_csr
    raise ValueError(f"axis must be 'user' or 'item', not {axis!r}")


def _entity_norms(csr, n_ent):
    indptr, _, data = csr
    sq = np.zeros(n_ent)
    counts = np.diff(indptr)
    owners = np.repeat(np.arange(n_ent), counts)
    np.add.at(sq, owners, data * data)
    return np.sqrt(sq)


def _iter_similarity_blocks(matrix, axis, metric, embeddings=None, item_map=None,
                            user_map=None):
    n_ent = matrix.num_users if axis == "user" else matrix.num_items
    if metric.kind == "semantic_cosine":
        if embeddings is None:
            raise MissingEmbeddings("semantic_cosine requires an embedding table")
        id_map = user_map if axis == "user" else item_map
        if isinstance(embeddings, np.ndarray):
            X = np.asarray(embeddings, dtype=np.float64)
            norms = np.linalg.norm(X, axis=1)
            present = norms > 0
            X = np.where(present[:, None], X / np.where(present, norms, 1.0)[:, None], 0.0)
        else:
            X, present = embeddings.aligned(id_map, n_ent)
        for start in range(0, n_ent, _CHUNK):
            rows = np.arange(start, min(n_ent, start + _CHUNK))
            block = np.clip(X[rows] @ X.T, -1.0, 1.0)
            block[~present[rows]] = np.nan
            block[:, ~present] = np.nan
            block[np.arange(len(rows)), rows] = np.nan
            yield rows, block
        return
    elif embeddings is not None:
        raise ValueError("embeddings are only used by semantic_cosine")

    csr, csc = _layouts(matrix, axis)
    norms = _entity_norms(csr, n_ent)
    kind = _KIND_CODE[metric.kind]
    for start in range(0, n_ent, _CHUNK):
        rows = np.arange(start, min(n_ent, start + _CHUNK), dtype=np.int64)
        out = np.empty((len(rows), n_ent))
        _similarity_block(rows, *csr, *csc, norms, kind, float(metric.shrinkage),
                          int(metric.min_overlap), out)
        yield rows, out


def similarity_matrix(matrix: RatingsMatrix, axis: Axis = "user",
                      metric: SimilarityMetric | str = "cosine", embeddings=None,
                      item_map=None, user_map=None) -> np.ndarray:
    """Dense all-pairs similarity; undefined pairs and the diagonal are NaN."""
    if isinstance(metric, str):
        metric = SimilarityMetric(metric)
    n_ent = matrix.num_users if axis == "user" else matrix.num_items
    out = np.empty((n_ent, n_ent))
    for rows, block in _iter_similarity_blocks(matrix, axis, metric, embeddings,
                                               item_map, user_map):
        out[rows] = block
    return out


def top_n(scores: np.ndarray, n: int):
    """Indices of the ``n`` largest finite scores, ties by ascending index."""
    idx = np.flatnonzero(~np.isnan(scores))
    if len(idx) == 0:
        return idx
    order = np.lexsort((idx, -scores[idx]))
    return idx[order[:n]]


# ---------------------------------------------------------------------------
# index

class SimilarityIndex:
    """Top-N neighbor lists for every user or item.

    Stored as padded arrays: ``neighbor_ids[e, :lengths[e]]`` and the matching
    ``scores``, sorted by score descending then id ascending.
    """

    def __init__(self, axis, neighbor_ids, scores, lengths, metric=None, extra=None):
        self.axis = axis
        self.neighbor_ids = np.asarray(neighbor_ids, dtype=np.int64)
        self.scores = np.asarray(scores, dtype=np.float64)
        self.lengths = np.asarray(lengths, dtype=np.int64)
        self.metric = metric
        self.extra = dict(extra or {})

    @property
    def num_entities(self):
        return len(self.lengths)

    @property
    def n_max(self):
        return self.neighbor_ids.shape[1]

    def neighbors(self, e: int):
        n = self.lengths[e]
        return list(zip(self.neighbor_ids[e, :n].tolist(), self.scores[e, :n].tolist()))

    def __eq__(self, other):
        if not isinstance(other, SimilarityIndex):
            return NotImplemented
        return (self.axis == other.axis
                and np.array_equal(self.lengths, other.lengths)
                and all(self.neighbors(e) == other.neighbors(e)
                        for e in range(self.num_entities)))

    __hash__ = None

    @classmethod
    def from_lists(cls, axis, lists, n_max, metric=None, extra=None):
        n_ent = len(lists)
        ids = np.full((n_ent, max(n_max, 1)), -1, dtype=np.int64)
        scores = np.zeros((n_ent, max(n_max, 1)))
        lengths = np.zeros(n_ent, dtype=np.int64)
        for e, lst in enumerate(lists):
            lst = lst[:n_max]
            lengths[e] = len(lst)
            if lst:
                nb, sc = zip(*lst)
                ids[e, :len(lst)] = nb
                scores[e, :len(lst)] = sc
        return cls(axis, ids, scores, lengths, metric, extra)

    def to_csv(self, path):
        """Write ``entity_id,neighbor_id,score`` rows (scores in repr form,
        so a reload is exact).  The first line is a comment with the axis."""
        with open(path, "w", newline="") as fh:
            fh.write(f"# axis={self.axis} n_max={self.n_max} entities={self.num_entities}\n")
            w = csv.writer(fh)
            w.writerow(["entity_id", "neighbor_id", "score"])
            for e in range(self.num_entities):
                for nb, sc in self.neighbors(e):
                    w.writerow([e, nb, repr(sc)])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            meta = dict(kv.split("=") for kv in fh.readline()[1:].split())
            reader = csv.reader(fh)
            next(reader)
            lists = [[] for _ in range(int(meta["entities"]))]
            for e, nb, sc in reader:
                lists[int(e)].append((int(nb), float(sc)))
        return cls.from_lists(meta["axis"], lists, int(meta["n_max"]))


def build_index(matrix: RatingsMatrix, axis: Axis = "user",
                metric: SimilarityMetric | str = "cosine", n_max: int = 50,
                embeddings=None, item_map=None, user_map=None) -> SimilarityIndex:
    """Exact top-``n_max`` neighbors of every entity along ``axis``.

    Candidates are the entities sharing at least one co-rating (or every
    entity with an embedding for ``semantic_cosine``).  Pairs whose similarity
    is undefined are skipped.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if isinstance(metric, str):
        metric = SimilarityMetric(metric)
    if metric.kind == "semantic_cosine" and embeddings is None:
        raise MissingEmbeddings("semantic_cosine requires an embedding table")
    n_ent = matrix.num_users if axis == "user" else matrix.num_items
    ids = np.full((n_ent, n_max), -1, dtype=np.int64)
    scores = np.zeros((n_ent, n_max))
    lengths = np.zeros(n_ent, dtype=np.int64)
    for rows, block in _iter_similarity_blocks(matrix, axis, metric, embeddings,
                                               item_map, user_map):
        for r, e in enumerate(rows):
            sel = top_n(block[r], n_max)
            lengths[e] = len(sel)
            ids[e, :len(sel)] = sel
            scores[e, :len(sel)] = block[r, sel]
    return SimilarityIndex(axis, ids, scores, lengths, metric)


# ---------------------------------------------------------------------------
# prediction

@numba.njit(nogil=True, cache=True)
def _lookup(indptr, indices, data, row, col):
    lo = indptr[row]
    hi = indptr[row + 1]
    k = lo + np.searchsorted(indices[lo:hi], col)
    if k < hi and indices[k] == col:
        return data[k], True
    return 0.0, False


@numba.njit(nogil=True, cache=True)
def _predict_batch(users, items, axis_user, nbr_ids, nbr_scores, nbr_len,
                   indptr, indices, data, means, k_budget, lo, hi, out):
    n_users = len(indptr) - 1
    for t in range(len(users)):
        u = users[t]
        i = items[t]
        out[t] = np.nan
        if u < 0 or i < 0 or u >= n_users:
            continue
        num = 0.0
        den = 0.0
        used = 0
        if axis_user:
            for p in range(nbr_len[u]):
                if used >= k_budget:
                    break
                v = nbr_ids[u, p]
                s = nbr_scores[u, p]
                if s <= 0.0:
                    continue
                r, ok = _lookup(indptr, indices, data, v, i)
                if not ok:
                    continue
                num += s * (r - means[v])
                den += abs(s)
                used += 1
            if used > 0:
                out[t] = min(hi, max(lo, means[u] + num / den))
        else:
            for p in range(nbr_len[i]):
                if used >= k_budget:
                    break
                j = nbr_ids[i, p]
                s = nbr_scores[i, p]
                if s <= 0.0:
                    continue
                r, ok = _lookup(indptr, indices, data, u, j)
                if not ok:
                    continue
                num += s * r
                den += abs(s)
                used += 1
            if used > 0:
                out[t] = min(hi, max(lo, num / den))


def predict_many(matrix: RatingsMatrix, index: SimilarityIndex, users, items,
                 k: int = 40) -> np.ndarray:
    """Vectorized :func:`predict`; abstentions come back as NaN."""
    if k < 1:
        raise ValueError("neighbor budget k must be >= 1")
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    out = np.empty(len(users))
    means = matrix.user_means()
    if index.axis == "user" and index.num_entities != matrix.num_users:
        raise ValueError("index does not match the matrix's user count")
    # users outside the matrix abstain
    users = np.where(users < matrix.num_users, users, -1)
    items = np.where(items < matrix.num_items, items, -1)
    lo, hi = matrix.rating_scale
    _predict_batch(users, items, index.axis == "user", index.neighbor_ids,
                   index.scores, index.lengths, matrix.user_indptr, matrix.items,
                   matrix.ratings, means, int(k), lo, hi, out)
    return out


def predict(matrix: RatingsMatrix, index: SimilarityIndex, user: int, item: int,
            k: int = 40):
    """Weighted-average prediction, or ``None`` (abstain) when no positively
    similar neighbor has a usable rating."""
    value = predict_many(matrix, index, [user], [item], k)[0]
    return None if np.isnan(value) else float(value)


class NeighborhoodCF:
    """Memory-based CF estimator: ``fit`` builds the index, ``predict`` scores
    (user, item) pairs and falls back to the training mean on abstention."""

    def __init__(self, axis: Axis = "user", metric="cosine", n_max: int = 50,
                 k: int = 40, shrinkage: float = 0.0, min_overlap: int = 1,
                 embeddings=None, item_map=None):
        self.axis = axis
        self.metric = metric if isinstance(metric, SimilarityMetric) else \
            SimilarityMetric(metric, shrinkage, min_overlap)
        self.n_max = n_max
        self.k = k
        self.embeddings = embeddings
        self.item_map = item_map
        self.index = None
        self.train = None

    def fit(self, train: RatingsMatrix, index: SimilarityIndex | None = None):
        self.train = train
        self.index = index if index is not None else build_index(
            train, self.axis, self.metric, self.n_max, self.embeddings, self.item_map)
        return self

    def predict_raw(self, users, items) -> np.ndarray:
        return predict_many(self.train, self.index, users, items, self.k)

    def predict(self, users, items) -> np.ndarray:
        raw = self.predict_raw(users, items)
        return np.where(np.isnan(raw), self.train.global_mean, raw)
