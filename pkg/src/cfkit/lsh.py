"""Sign-random-projection LSH for cosine similarity.

Each of ``num_tables`` tables draws ``bits_per_table`` random unit
hyperplanes; a vector's key in a table is the bit pattern of the signs of
its projections (a zero projection counts as positive).  Two vectors at
angle ``theta`` agree on a single bit with probability ``1 - theta/pi``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .neighborhood import SimilarityIndex


class DimensionMismatch(ValueError):
    pass


class ZeroVector(ValueError):
    pass


@dataclass(frozen=True)
class LshConfig:
    num_tables: int = 16
    bits_per_table: int = 8
    seed: int = 0
    rerank: bool = True

    def __post_init__(self):
        if self.num_tables < 1:
            raise ValueError("num_tables must be >= 1")
        if not 1 <= self.bits_per_table <= 62:
            raise ValueError("bits_per_table must lie in [1, 62]")


def random_hyperplanes(count: int, dim: int, seed) -> np.ndarray:
    """``count`` unit normals drawn uniformly from the sphere."""
    rng = np.random.default_rng(seed)
    H = rng.standard_normal((count, dim))
    return H / np.linalg.norm(H, axis=1, keepdims=True)


def sign_bits(X: np.ndarray, hyperplanes: np.ndarray) -> np.ndarray:
    """Boolean matrix of ``<x, h> >= 0``; shape ``(len(X), len(hyperplanes))``."""
    return (np.atleast_2d(X) @ hyperplanes.T) >= 0.0


def collision_rate(theta: float, num_hyperplanes: int = 10_000, seed=0, dim: int = 2) -> float:
    """Fraction of random hyperplanes that put two unit vectors at angle
    ``theta`` on the same side."""
    x = np.zeros(dim)
    y = np.zeros(dim)
    x[0] = 1.0
    y[0], y[1] = np.cos(theta), np.sin(theta)
    H = random_hyperplanes(num_hyperplanes, dim, seed)
    bx, by = sign_bits(x, H)[0], sign_bits(y, H)[0]
    return float(np.mean(bx == by))


class QueryResult(NamedTuple):
    neighbors: list
    num_candidates: int


class LshIndex:
    """Multi-table hash index over a set of vectors.

    ``hyperplanes`` has shape ``(num_tables, bits_per_table, dim)``;
    ``tables[t]`` maps an integer key to the ids hashed there, in insertion
    order.
    """

    def __init__(self, config: LshConfig, dimension: int):
        self.config = config
        self.dimension = dimension
        L, b = config.num_tables, config.bits_per_table
        self.hyperplanes = random_hyperplanes(L * b, dimension, config.seed).reshape(L, b, dimension)
        self._weights = (1 << np.arange(b, dtype=np.int64))[::-1]
        self.tables: list[dict[int, list]] = [{} for _ in range(L)]
        self.ids: list = []
        self.vectors = np.zeros((0, dimension))
        self._row: dict = {}

    def keys(self, X: np.ndarray) -> np.ndarray:
        """Integer keys, shape ``(n, num_tables)``; bit 0 of the key is the
        last hyperplane of the table."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dimension:
            raise DimensionMismatch(f"expected dimension {self.dimension}, got {X.shape[1]}")
        bits = np.einsum("nd,tbd->ntb", X, self.hyperplanes) >= 0.0
        return bits.astype(np.int64) @ self._weights

    def add(self, ids, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        _check_vectors(X, self.dimension)
        ids = list(ids)
        keys = self.keys(X)
        for t, table in enumerate(self.tables):
            for ident, key in zip(ids, keys[:, t].tolist()):
                table.setdefault(key, []).append(ident)
        base = len(self.ids)
        for n, ident in enumerate(ids):
            self._row[ident] = base + n
        self.ids.extend(ids)
        self.vectors = np.vstack([self.vectors, X])

    def __len__(self):
        return len(self.ids)

    def candidates(self, v, exclude=None) -> list:
        """Deduplicated union of ``v``'s buckets, in table-then-bucket order."""
        if len(self.ids) == 0:
            return []
        key = self.keys(v)[0]
        seen = set()
        out = []
        for t, table in enumerate(self.tables):
            for ident in table.get(int(key[t]), ()):
                if ident not in seen and ident != exclude:
                    seen.add(ident)
                    out.append(ident)
        return out

    def query(self, v, k: int = 10, exclude=None) -> QueryResult:
        """Approximate top-``k`` cosine neighbors of ``v``.

        With ``rerank`` the candidates are scored by exact cosine and the
        best ``k`` returned (ties by ascending id); otherwise candidates are
        returned in bucket order with their exact scores.
        """
        v = np.asarray(v, dtype=np.float64)
        cands = self.candidates(v, exclude)
        if not cands:
            return QueryResult([], 0)
        rows = np.fromiter((self._row[c] for c in cands), dtype=np.int64, count=len(cands))
        scores = _cosine(self.vectors[rows], v)
        if self.config.rerank:
            order = np.lexsort((np.asarray(cands), -scores))[:k]
        else:
            order = np.arange(min(k, len(cands)))
        return QueryResult([(cands[o], float(scores[o])) for o in order], len(cands))


def _cosine(X, v):
    nv = np.linalg.norm(v)
    return np.clip((X @ v) / (np.linalg.norm(X, axis=1) * nv), -1.0, 1.0)


def _check_vectors(X, dim):
    if X.shape[1] != dim:
        raise DimensionMismatch(f"expected dimension {dim}, got {X.shape[1]}")
    zero = np.flatnonzero(~np.any(X != 0.0, axis=1))
    if len(zero):
        raise ZeroVector(f"row {int(zero[0])} is a zero vector")


def build_lsh(vectors, config: LshConfig) -> LshIndex:
    """Index a ``{id: vector}`` mapping or a 2-D array (ids = row numbers)."""
    if isinstance(vectors, dict):
        ids = list(vectors)
        dims = {len(np.ravel(vectors[i])) for i in ids}
        if len(dims) > 1:
            raise DimensionMismatch(f"vectors have mixed dimensions {sorted(dims)}")
        X = np.array([np.ravel(vectors[i]).astype(np.float64) for i in ids]) if ids else None
    else:
        X = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        ids = list(range(len(X)))
    if not ids:
        raise ValueError("cannot infer dimension from an empty vector set; use LshIndex(config, dim)")
    index = LshIndex(config, X.shape[1])
    index.add(ids, X)
    return index


def query(index: LshIndex, v, k: int = 10, exclude=None) -> QueryResult:
    return index.query(v, k, exclude)


def lsh_neighborhood_index(vectors: np.ndarray, config: LshConfig, n_max: int = 50,
                           axis: str = "item", present=None) -> SimilarityIndex:
    """Approximate top-``n_max`` cosine neighbor lists for every row of
    ``vectors``, built from LSH candidates and exact reranking.

    Rows that are all zero (or ``present == False``) are not indexed and get
    empty lists.  ``index.extra`` records ``mean_candidates``,
    ``candidate_fraction`` (of all ``n*(n-1)`` ordered pairs) and build time.
    """
    X = np.asarray(vectors, dtype=np.float64)
    n = len(X)
    norms = np.linalg.norm(X, axis=1)
    if present is None:
        present = norms > 0
    ids = np.flatnonzero(present)
    t0 = time.perf_counter()
    lists = [[] for _ in range(n)]
    total_candidates = 0
    if len(ids):
        index = LshIndex(config, X.shape[1])
        keys = index.keys(X[ids])
        # bucket membership per table as sorted id arrays
        buckets = []
        for t in range(config.num_tables):
            order = np.lexsort((ids, keys[:, t]))
            kt = keys[order, t]
            starts = np.flatnonzero(np.r_[True, kt[1:] != kt[:-1]])
            ends = np.r_[starts[1:], len(kt)]
            groups = {int(kt[s]): ids[order[s:e]] for s, e in zip(starts, ends)}
            buckets.append(groups)
        Xn = np.zeros_like(X)
        Xn[ids] = X[ids] / norms[ids, None]
        for row, e in enumerate(ids):
            cand = np.unique(np.concatenate(
                [buckets[t][int(keys[row, t])] for t in range(config.num_tables)]))
            cand = cand[cand != e]
            total_candidates += len(cand)
            if len(cand) == 0:
                continue
            scores = np.clip(Xn[cand] @ Xn[e], -1.0, 1.0)
            order = np.lexsort((cand, -scores))[:n_max]
            lists[e] = list(zip(cand[order].tolist(), scores[order].tolist()))
    elapsed = time.perf_counter() - t0
    pairs = n * (n - 1)
    extra = {
        "mean_candidates": total_candidates / max(len(ids), 1),
        "candidate_fraction": total_candidates / pairs if pairs else 0.0,
        "build_seconds": elapsed,
    }
    return SimilarityIndex.from_lists(axis, lists, n_max, "lsh_cosine", extra)


def exact_cosine_index(vectors: np.ndarray, n_max: int = 50, axis: str = "item") -> SimilarityIndex:
    """Brute-force counterpart of :func:`lsh_neighborhood_index`."""
    X = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    present = norms > 0
    Xn = np.where(present[:, None], X / np.where(present, norms, 1.0)[:, None], 0.0)
    S = np.clip(Xn @ Xn.T, -1.0, 1.0)
    S[:, ~present] = np.nan
    np.fill_diagonal(S, np.nan)
    lists = []
    for e in range(len(X)):
        if not present[e]:
            lists.append([])
            continue
        idx = np.flatnonzero(~np.isnan(S[e]))
        order = np.lexsort((idx, -S[e, idx]))[:n_max]
        lists.append(list(zip(idx[order].tolist(), S[e, idx[order]].tolist())))
    return SimilarityIndex.from_lists(axis, lists, n_max, "cosine")


def recall_at_k(approx: SimilarityIndex, exact: SimilarityIndex, k: int = 10) -> float:
    """Mean fraction of each entity's exact top-``k`` found in the
    approximate top-``k`` (entities with empty exact lists are skipped)."""
    hits = total = 0
    for e in range(exact.num_entities):
        truth = {nb for nb, _ in exact.neighbors(e)[:k]}
        if not truth:
            continue
        got = {nb for nb, _ in approx.neighbors(e)[:k]}
        hits += len(truth & got)
        total += len(truth)
    return hits / total if total else 1.0
