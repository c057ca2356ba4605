"""Regularized matrix factorization ``R ~ P Q^T``.

The loss minimized by both trainers is

    L(P, Q) = sum_{(i,j) observed} (R_ij - P_i . Q_j)^2 + lam * (||P||_F^2 + ||Q||_F^2)

There are no bias terms.  SGD visits entries in a freshly shuffled order
each epoch; ALS alternates exact ridge solves for every user row and then
every item row.
"""
from __future__ import annotations

import logging
import struct
import time
from dataclasses import dataclass, field
from typing import Literal

import numba
import numpy as np

from .core import RatingsMatrix

_logger = logging.getLogger(__name__)

ALS_JITTER = 1e-10


class Diverged(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    optimizer: Literal["sgd", "als"] = "als"
    epochs: int = 20
    learning_rate: float = 0.005
    lam: float = 0.05
    k: int = 32
    init_scale: float = 0.1
    seed: int = 0
    convergence_tol: float = 1e-5

    def __post_init__(self):
        if self.optimizer not in ("sgd", "als"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.init_scale <= 0:
            raise ValueError("init_scale must be > 0")
        if self.convergence_tol < 0:
            raise ValueError("convergence_tol must be >= 0")


@dataclass
class FactorModel:
    P: np.ndarray
    Q: np.ndarray
    lam: float
    global_mean: float
    rating_scale: tuple = (-np.inf, np.inf)
    seed: int = 0
    user_seen: np.ndarray | None = None
    item_seen: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.P.shape[1]

    @property
    def num_users(self) -> int:
        return self.P.shape[0]

    @property
    def num_items(self) -> int:
        return self.Q.shape[0]

    def predict(self, users, items) -> np.ndarray:
        """Clamped ``P_u . Q_i``.  Ids outside the model, or users/items that
        had no training ratings, get the global mean."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        known = (users >= 0) & (users < self.num_users) & (items >= 0) & (items < self.num_items)
        if self.user_seen is not None:
            known[known] &= self.user_seen[users[known]]
        if self.item_seen is not None:
            known[known] &= self.item_seen[items[known]]
        out = np.full(users.shape, self.global_mean, dtype=np.float64)
        u, i = users[known], items[known]
        out[known] = np.einsum("ij,ij->i", self.P[u], self.Q[i])
        lo, hi = self.rating_scale
        return np.clip(out, lo, hi)

    def save(self, path):
        save_model(self, path)


@dataclass
class TrainResult:
    model: FactorModel
    trace: list = field(default_factory=list)
    """Objective after initialization and after every epoch (SGD) or
    half-step (ALS)."""
    epochs_run: int = 0
    jitter_count: int = 0
    timings: list = field(default_factory=list)


def init_factors(num_users, num_items, k, init_scale, seed):
    """Uniform in ``[-init_scale, init_scale] / sqrt(k)``; P drawn before Q."""
    rng = np.random.default_rng(seed)
    scale = init_scale / np.sqrt(k)
    P = rng.uniform(-scale, scale, size=(num_users, k))
    Q = rng.uniform(-scale, scale, size=(num_items, k))
    return P, Q


def _check_dims(model_or_P, Q, train):
    if Q.shape[0] != train.num_items or model_or_P.shape[0] != train.num_users:
        raise DimensionMismatch(
            f"factors are {model_or_P.shape[0]}x{Q.shape[0]}, matrix is {train.shape}")


def objective(model_or_P, train: RatingsMatrix, Q=None, lam=None) -> float:
    """Squared error over observed entries plus the Frobenius penalty."""
    if Q is None:
        P, Q, lam = model_or_P.P, model_or_P.Q, model_or_P.lam
    else:
        P = model_or_P
    _check_dims(P, Q, train)
    resid = train.ratings - np.einsum("ij,ij->i", P[train.users], Q[train.items])
    return float(resid @ resid + lam * (np.sum(P * P) + np.sum(Q * Q)))


def gradients(P, Q, lam, user, item, rating):
    """Gradient of the single-entry loss
    ``(r - P_u.Q_i)^2 + lam (||P_u||^2 + ||Q_i||^2)`` w.r.t. ``P_u`` and ``Q_i``.

    The SGD step ``P_u += lr * (e Q_i - lam P_u)`` is ``-lr/2`` times this.
    """
    p, q = P[user], Q[item]
    e = rating - p @ q
    return -2.0 * e * q + 2.0 * lam * p, -2.0 * e * p + 2.0 * lam * q


# ---------------------------------------------------------------------------
# SGD

@numba.njit(nogil=True, cache=True)
def _sgd_epoch(order, users, items, ratings, P, Q, lr, lam):
    k = P.shape[1]
    for t in range(len(order)):
        e_idx = order[t]
        u = users[e_idx]
        i = items[e_idx]
        pred = 0.0
        for f in range(k):
            pred += P[u, f] * Q[i, f]
        err = ratings[e_idx] - pred
        for f in range(k):
            pu = P[u, f]
            qi = Q[i, f]
            P[u, f] = pu + lr * (err * qi - lam * pu)
            Q[i, f] = qi + lr * (err * pu - lam * qi)


def train_sgd(train: RatingsMatrix, config: TrainConfig) -> TrainResult:
    """Stochastic gradient descent on the regularized squared loss.

    Raises :class:`Diverged` (carrying the trace so far) if the objective
    stops being finite.
    """
    if train.nnz == 0:
        raise ValueError("cannot train on an empty matrix")
    P, Q = init_factors(train.num_users, train.num_items, config.k,
                        config.init_scale, config.seed)
    rng = np.random.default_rng([config.seed, 1])
    users, items, ratings = train.users, train.items, train.ratings
    trace = [objective(P, train, Q, config.lam)]
    timings = []
    epochs = 0
    for _ in range(config.epochs):
        t0 = time.perf_counter()
        _sgd_epoch(rng.permutation(train.nnz), users, items, ratings, P, Q,
                   config.learning_rate, config.lam)
        timings.append(time.perf_counter() - t0)
        epochs += 1
        obj = objective(P, train, Q, config.lam)
        trace.append(obj)
        if not np.isfinite(obj):
            raise Diverged(f"SGD diverged at epoch {epochs}", trace)
        if _converged(trace, config.convergence_tol):
            break
    model = _make_model(P, Q, config, train)
    return TrainResult(model, trace, epochs, 0, timings)


def _make_model(P, Q, config, train):
    return FactorModel(P, Q, config.lam, train.global_mean, train.rating_scale,
                       config.seed, train.user_counts() > 0, train.item_counts() > 0)


def _converged(trace, tol) -> bool:
    if tol <= 0 or len(trace) < 2:
        return False
    prev, cur = trace[-2], trace[-1]
    if prev == 0:
        return True
    return (prev - cur) / abs(prev) < tol


# ---------------------------------------------------------------------------
# ALS

@numba.njit(nogil=True, cache=True)
def _normal_equations(rows, indptr, indices, data, other, A, b):
    """For each row r in ``rows`` accumulate ``A[r] = X^T X`` and
    ``b[r] = X^T y`` where X are the ``other`` factors of r's observed
    columns and y the ratings.  A and b are added to, not overwritten."""
    k = other.shape[1]
    for t in range(len(rows)):
        r = rows[t]
        for p in range(indptr[r], indptr[r + 1]):
            x = other[indices[p]]
            y = data[p]
            for f in range(k):
                xf = x[f]
                b[t, f] += xf * y
                for g in range(k):
                    A[t, f, g] += xf * x[g]


def ridge_solve(A, b, lam, counts=None):
    """Solve ``(A_t + lam I) x_t = b_t`` for a stack of systems.

    When ``lam == 0`` a singular system is regularized with
    ``ALS_JITTER * I``.  Returns the solutions and the number of jittered
    systems.
    """
    n, k, _ = A.shape
    if n == 0:
        return np.zeros((0, k)), 0
    M = A + lam * np.eye(k)
    jitter = 0
    if lam == 0:
        singular = np.zeros(n, dtype=bool)
        if counts is not None:
            singular |= counts < k
        cand = np.flatnonzero(~singular)
        if len(cand):
            singular[cand] = np.linalg.cond(M[cand]) > 1e12
        if singular.any():
            M[singular] += ALS_JITTER * np.eye(k)
            jitter = int(singular.sum())
    return np.linalg.solve(M, b[..., None])[..., 0], jitter


def _user_csr(train):
    return train.user_indptr, train.items, train.ratings


def _item_csr(train):
    return train.item_indptr, train.users[train.item_order], train.ratings[train.item_order]


def als_half_step(rows, csr, other, lam, counts):
    """Exact ridge update for ``rows`` given fixed ``other`` factors."""
    k = other.shape[1]
    A = np.zeros((len(rows), k, k))
    b = np.zeros((len(rows), k))
    _normal_equations(rows, *csr, other, A, b)
    return ridge_solve(A, b, lam, counts[rows])


def train_als(train: RatingsMatrix, config: TrainConfig, threads: int = 1) -> TrainResult:
    """Alternating least squares.  ``config.epochs`` counts full sweeps
    (user half-step then item half-step).  The objective is recorded after
    every half-step and never increases.

    ``threads`` splits each half-step's row solves across a thread pool;
    rows are independent, so the result does not depend on it.
    """
    if train.nnz == 0:
        raise ValueError("cannot train on an empty matrix")
    P, Q = init_factors(train.num_users, train.num_items, config.k,
                        config.init_scale, config.seed)
    ucsr, icsr = _user_csr(train), _item_csr(train)
    ucounts, icounts = train.user_counts(), train.item_counts()
    all_users = np.arange(train.num_users, dtype=np.int64)
    all_items = np.arange(train.num_items, dtype=np.int64)
    trace = [objective(P, train, Q, config.lam)]
    timings = []
    jitter = 0
    sweeps = 0
    pool = _pool(threads)
    try:
        for _ in range(config.epochs):
            t0 = time.perf_counter()
            P, j1 = _solve_rows(pool, threads, all_users, ucsr, Q, config.lam, ucounts)
            trace.append(objective(P, train, Q, config.lam))
            Q, j2 = _solve_rows(pool, threads, all_items, icsr, P, config.lam, icounts)
            trace.append(objective(P, train, Q, config.lam))
            timings.append(time.perf_counter() - t0)
            jitter += j1 + j2
            sweeps += 1
            if not np.isfinite(trace[-1]):
                raise Diverged(f"ALS produced a non-finite objective at sweep {sweeps}", trace)
            if _converged(trace[0::2], config.convergence_tol):
                break
    finally:
        if pool is not None:
            pool.shutdown()
    if jitter:
        _logger.info("ALS: %d singular systems regularized with %g*I", jitter, ALS_JITTER)
    model = _make_model(P, Q, config, train)
    return TrainResult(model, trace, sweeps, jitter, timings)


def _pool(threads):
    if threads and threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        return ThreadPoolExecutor(max_workers=threads)
    return None


def _solve_rows(pool, threads, rows, csr, other, lam, counts):
    if pool is None:
        return als_half_step(rows, csr, other, lam, counts)
    chunks = np.array_split(rows, threads)
    parts = list(pool.map(lambda c: als_half_step(c, csr, other, lam, counts), chunks))
    return np.concatenate([p[0] for p in parts]), sum(p[1] for p in parts)


def train(train: RatingsMatrix, config: TrainConfig, threads: int = 1) -> TrainResult:
    if config.optimizer == "sgd":
        return train_sgd(train, config)
    return train_als(train, config, threads)


# ---------------------------------------------------------------------------
# prediction & completion

def predict(model: FactorModel, user: int, item: int) -> float:
    return float(model.predict([user], [item])[0])


class CompletedMatrix:
    """Read-only view of ``train`` with the gaps filled by ``model``."""

    def __init__(self, model: FactorModel, train: RatingsMatrix):
        self.model = model
        self.train = train

    @property
    def shape(self):
        return self.train.shape

    def __getitem__(self, key):
        u, i = key
        r = self.train.get(u, i)
        return r if r is not None else predict(self.model, u, i)

    def dense(self) -> np.ndarray:
        m, n = self.train.shape
        users = np.repeat(np.arange(m), n)
        items = np.tile(np.arange(n), m)
        out = self.model.predict(users, items).reshape(m, n)
        out[self.train.users, self.train.items] = self.train.ratings
        return out


def complete(model: FactorModel, train: RatingsMatrix) -> CompletedMatrix:
    return CompletedMatrix(model, train)


class MatrixFactorization:
    """Estimator wrapper around :func:`train_sgd` / :func:`train_als`."""

    def __init__(self, config: TrainConfig | None = None, threads: int = 1, **kwargs):
        self.config = config if config is not None else TrainConfig(**kwargs)
        self.threads = threads
        self.model = None
        self.result = None

    def fit(self, train_matrix: RatingsMatrix):
        self.result = train(train_matrix, self.config, self.threads)
        self.model = self.result.model
        return self

    def predict(self, users, items) -> np.ndarray:
        return self.model.predict(users, items)


# ---------------------------------------------------------------------------
# persistence
#
# Layout (little-endian):
#   8s   magic b"CFKITMF1"
#   q q q  num_users, num_items, k
#   d d  lam, global_mean
#   d d  rating_min, rating_max
#   q    seed
#   P    num_users*k float64, row-major
#   Q    num_items*k float64, row-major
#   u8   num_users user-seen flags, then num_items item-seen flags
#        (all ones when the model carries no flags)

_MAGIC = b"CFKITMF1"
_HEADER = struct.Struct("<8sqqqddddq")


def save_model(model: FactorModel, path):
    header = _HEADER.pack(_MAGIC, model.num_users, model.num_items, model.k,
                          float(model.lam), float(model.global_mean),
                          float(model.rating_scale[0]), float(model.rating_scale[1]),
                          int(model.seed))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(model.P, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.Q, dtype="<f8").tobytes())
        for seen, count in ((model.user_seen, model.num_users),
                            (model.item_seen, model.num_items)):
            flags = np.ones(count, np.uint8) if seen is None else seen.astype(np.uint8)
            fh.write(flags.tobytes())


def load_model(path) -> FactorModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, m, n, k, lam, gmean, lo, hi, seed = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a factor model file")
    off = _HEADER.size
    P = np.frombuffer(raw, "<f8", m * k, off).reshape(m, k).astype(np.float64)
    off += 8 * m * k
    Q = np.frombuffer(raw, "<f8", n * k, off).reshape(n, k).astype(np.float64)
    off += 8 * n * k
    user_seen = np.frombuffer(raw, np.uint8, m, off).astype(bool)
    item_seen = np.frombuffer(raw, np.uint8, n, off + m).astype(bool)
    return FactorModel(P, Q, lam, gmean, (lo, hi), seed, user_seen, item_seen)
