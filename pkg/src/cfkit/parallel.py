"""Block-partitioned ALS.

The rating matrix is cut into row blocks ``R_1..R_N`` (contiguous user
ranges balanced by rating count).  Each sync round:

1. the current item factors ``Q`` are broadcast to every partition;
2. each partition solves its own users' rows of ``P`` exactly;
3. each partition accumulates, from its local ratings only, the per-item
   Gram matrices ``sum P_u P_u^T`` and right-hand sides ``sum r_ui P_u``
   (optionally also solving them into a local ``Q_i``);
4. the partial normal equations are summed and solved once per item.

Because step 4 rebuilds the global normal equations, the merged ``Q`` is the
exact serial ALS item step, so the result does not depend on ``N``.
"""
from __future__ import annotations

import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import RatingsMatrix
from .factorization import (
    Diverged,
    TrainConfig,
    TrainResult,
    _converged,
    _make_model,
    _normal_equations,
    als_half_step,
    init_factors,
    objective,
    ridge_solve,
)

_logger = logging.getLogger(__name__)


@dataclass
class PartitionPlan:
    num_partitions: int
    bounds: np.ndarray
    """``bounds[p]:bounds[p+1]`` is partition p's user range."""

    def assignment(self) -> np.ndarray:
        """Partition number of every user."""
        out = np.empty(self.bounds[-1], dtype=np.int64)
        for p in range(self.num_partitions):
            out[self.bounds[p]:self.bounds[p + 1]] = p
        return out

    def users(self, p: int) -> np.ndarray:
        return np.arange(self.bounds[p], self.bounds[p + 1], dtype=np.int64)


def plan_partitions(train: RatingsMatrix, n: int) -> PartitionPlan:
    """Contiguous user ranges with roughly equal rating counts.

    Cut points are placed where the cumulative rating count crosses
    ``p/N`` of the total; every partition gets at least one user.
    """
    if n < 1:
        raise ValueError("number of partitions must be >= 1")
    m = train.num_users
    if n > m:
        warnings.warn(f"{n} partitions requested for {m} users; using {m}")
        n = max(m, 1)
    cum = train.user_indptr[1:]
    total = train.nnz
    bounds = [0]
    for p in range(1, n):
        target = total * p / n
        cut = int(np.searchsorted(cum, target, side="left")) + 1
        # keep at least one user per remaining partition
        cut = min(max(cut, bounds[-1] + 1), m - (n - p))
        bounds.append(cut)
    bounds.append(m)
    return PartitionPlan(n, np.asarray(bounds, dtype=np.int64))


def partition(train: RatingsMatrix, n: int):
    """``(plan, submatrices)``; submatrix p holds exactly the ratings of
    partition p's users, over all items, in the original id space."""
    plan = plan_partitions(train, n)
    subs = []
    for p in range(plan.num_partitions):
        lo, hi = train.user_indptr[plan.bounds[p]], train.user_indptr[plan.bounds[p + 1]]
        subs.append(train.subset(np.arange(lo, hi)))
    return plan, subs


@dataclass
class PartitionedResult(TrainResult):
    plan: PartitionPlan | None = None
    round_timings: list = field(default_factory=list)
    local_item_factors: list | None = None


def _local_item_terms(sub: RatingsMatrix, P, k):
    """Per-item Gram matrices and right-hand sides from one partition."""
    items = np.arange(sub.num_items, dtype=np.int64)
    A = np.zeros((sub.num_items, k, k))
    b = np.zeros((sub.num_items, k))
    csr = (sub.item_indptr, sub.users[sub.item_order], sub.ratings[sub.item_order])
    _normal_equations(items, *csr, P, A, b)
    return A, b


def train_partitioned(train: RatingsMatrix, n: int, config: TrainConfig,
                      sync_rounds: int | None = None, threads: int | None = None,
                      keep_local: bool = False) -> PartitionedResult:
    """Block-synchronous ALS over ``n`` user partitions.

    ``sync_rounds`` defaults to ``config.epochs``.  ``threads`` bounds the
    worker pool (default: one worker per partition).  With ``keep_local``
    the per-partition item solves ``Q_i`` of the last round are kept.
    """
    if config.optimizer != "als":
        raise ValueError("partitioned training supports the ALS optimizer only")
    if train.nnz == 0:
        raise ValueError("cannot train on an empty matrix")
    rounds = config.epochs if sync_rounds is None else sync_rounds
    plan, subs = partition(train, n)
    k, lam = config.k, config.lam
    P, Q = init_factors(train.num_users, train.num_items, k, config.init_scale, config.seed)
    ucounts, icounts = train.user_counts(), train.item_counts()
    trace = [objective(P, train, Q, lam)]
    round_timings = []
    jitter = 0
    done = 0
    local_q = None
    workers = threads or plan.num_partitions
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    run = pool.map if pool is not None else map
    try:
        for _ in range(rounds):
            t0 = time.perf_counter()

            def user_task(p, Q=Q):
                sub = subs[p]
                csr = (sub.user_indptr, sub.items, sub.ratings)
                return als_half_step(plan.users(p), csr, Q, lam, ucounts)

            parts = list(run(user_task, range(plan.num_partitions)))
            P = np.concatenate([x for x, _ in parts])
            jitter += sum(j for _, j in parts)
            trace.append(objective(P, train, Q, lam))

            def item_task(p, P=P):
                A, b = _local_item_terms(subs[p], P, k)
                if keep_local:
                    return A, b, ridge_solve(A, b, lam, subs[p].item_counts())[0]
                return A, b, None

            parts = list(run(item_task, range(plan.num_partitions)))
            # barrier: reduce partial normal equations in partition order
            A = np.zeros((train.num_items, k, k))
            b = np.zeros((train.num_items, k))
            for Ap, bp, _ in parts:
                A += Ap
                b += bp
            Q, j = ridge_solve(A, b, lam, icounts)
            jitter += j
            if keep_local:
                local_q = [q for _, _, q in parts]
            trace.append(objective(P, train, Q, lam))
            round_timings.append(time.perf_counter() - t0)
            done += 1
            if not np.isfinite(trace[-1]):
                raise Diverged(f"partitioned ALS diverged at round {done}", trace)
            if _converged(trace[0::2], config.convergence_tol):
                break
    finally:
        if pool is not None:
            pool.shutdown()
    model = _make_model(P, Q, config, train)
    return PartitionedResult(model, trace, done, jitter, list(round_timings), plan,
                             round_timings, local_q)


class PartitionedALS:
    """Estimator wrapper around :func:`train_partitioned`."""

    def __init__(self, config: TrainConfig, partitions: int = 4, sync_rounds=None,
                 threads=None):
        self.config = config
        self.partitions = partitions
        self.sync_rounds = sync_rounds
        self.threads = threads
        self.model = None
        self.result = None

    def fit(self, train: RatingsMatrix):
        self.result = train_partitioned(train, self.partitions, self.config,
                                        self.sync_rounds, self.threads)
        self.model = self.result.model
        return self

    def predict(self, users, items):
        return self.model.predict(users, items)
