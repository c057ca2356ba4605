"""Content + collaborative hybrid with a content-only cold-start path.

For a warm (user, item) pair the prediction is

    alpha * cf_score + (1 - alpha) * content_score

and for a pair where either side has fewer than ``cold_threshold`` training
ratings it is ``content_score`` alone.  The content score is the cosine
between the user's attribute profile and the item's attribute vector,
mapped linearly from [-1, 1] onto the rating scale.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import RatingsMatrix
from .ingest import FeatureTable


@dataclass(frozen=True)
class HybridConfig:
    alpha: float = 0.8
    cf_backend: str = "factorization"
    cold_threshold: int = 1

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.cf_backend not in ("factorization", "neighborhood"):
            raise ValueError(f"unknown cf_backend {self.cf_backend!r}")
        if self.cold_threshold < 0:
            raise ValueError("cold_threshold must be >= 0")


def user_profiles(train: RatingsMatrix, features: FeatureTable) -> np.ndarray:
    """Row ``u`` is ``mean_j (r_uj - mean_u) * x_j`` over u's rated items.

    Users without ratings, and users whose ratings are all equal, get a
    zero profile.
    """
    X = features.with_items(train.num_items).matrix
    means = train.user_means()
    centered = train.ratings - means[train.users]
    prof = np.zeros((train.num_users, X.shape[1]))
    np.add.at(prof, train.users, centered[:, None] * X[train.items])
    counts = train.user_counts()
    prof[counts > 0] /= counts[counts > 0, None]
    return prof


def content_score(profile, item_vector, rating_scale, global_mean) -> float:
    """Cosine of profile and item attributes mapped onto ``rating_scale``;
    ``global_mean`` if either vector is zero."""
    return float(content_scores(np.atleast_2d(profile), np.atleast_2d(item_vector),
                                rating_scale, global_mean)[0])


def content_scores(profiles, item_vectors, rating_scale, global_mean) -> np.ndarray:
    """Row-wise :func:`content_score`."""
    profiles = np.asarray(profiles, dtype=np.float64)
    item_vectors = np.asarray(item_vectors, dtype=np.float64)
    np_ = np.linalg.norm(profiles, axis=1)
    ni = np.linalg.norm(item_vectors, axis=1)
    ok = (np_ > 0) & (ni > 0)
    cos = np.zeros(len(profiles))
    cos[ok] = np.einsum("ij,ij->i", profiles[ok], item_vectors[ok]) / (np_[ok] * ni[ok])
    cos = np.clip(cos, -1.0, 1.0)
    lo, hi = rating_scale
    return np.where(ok, lo + (cos + 1.0) * 0.5 * (hi - lo), global_mean)


class HybridModel:
    """α-blend of a CF estimator and the content score.

    ``cf`` is any object with ``fit(train)`` and ``predict(users, items)``;
    when omitted it is built from ``config.cf_backend``.
    """

    def __init__(self, features: FeatureTable, config: HybridConfig | None = None,
                 cf=None):
        self.features = features
        self.config = config or HybridConfig()
        self.cf = cf if cf is not None else _default_backend(self.config.cf_backend)
        self.train = None
        self.profiles = None
        self.last_cold_count = 0

    def fit(self, train: RatingsMatrix, fit_cf: bool = True):
        self.train = train
        if fit_cf:
            self.cf.fit(train)
        self.profiles = user_profiles(train, self.features)
        self._item_vectors = self.features.with_items(train.num_items).matrix
        self._ucount = train.user_counts()
        self._icount = train.item_counts()
        return self

    def content(self, users, items) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        k = self._item_vectors.shape[1]
        prof = np.zeros((len(users), k))
        vec = np.zeros((len(items), k))
        uk = (users >= 0) & (users < self.train.num_users)
        ik = (items >= 0) & (items < len(self._item_vectors))
        prof[uk] = self.profiles[users[uk]]
        vec[ik] = self._item_vectors[items[ik]]
        return content_scores(prof, vec, self.train.rating_scale, self.train.global_mean)

    def warm(self, users, items) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        thr = self.config.cold_threshold
        uc = np.zeros(len(users), dtype=np.int64)
        ic = np.zeros(len(items), dtype=np.int64)
        uk = (users >= 0) & (users < self.train.num_users)
        ik = (items >= 0) & (items < self.train.num_items)
        uc[uk] = self._ucount[users[uk]]
        ic[ik] = self._icount[items[ik]]
        return (uc >= thr) & (ic >= thr)

    def blend(self, cf_scores, content_scores_, warm, alpha=None) -> np.ndarray:
        alpha = self.config.alpha if alpha is None else alpha
        mixed = np.where(warm, alpha * cf_scores + (1.0 - alpha) * content_scores_,
                         content_scores_)
        return self.train.clamp(mixed)

    def predict(self, users, items) -> np.ndarray:
        warm = self.warm(users, items)
        self.last_cold_count = int((~warm).sum())
        cf_scores = np.asarray(self.cf.predict(users, items), dtype=np.float64)
        return self.blend(cf_scores, self.content(users, items), warm)


def _default_backend(name):
    if name == "neighborhood":
        from .neighborhood import NeighborhoodCF
        return NeighborhoodCF("user", "cosine")
    from .factorization import MatrixFactorization
    return MatrixFactorization()


def predict_hybrid(user, item, model: HybridModel) -> float:
    return float(model.predict([user], [item])[0])


def tune_alpha(train: RatingsMatrix, validation: RatingsMatrix, grid,
               features: FeatureTable, cf=None, cf_backend="factorization",
               cold_threshold=1):
    """Pick the α in ``grid`` with the lowest validation RMSE.

    The CF backend is fitted once on ``train``.  Returns ``(best_alpha,
    table)`` where ``table`` lists ``(alpha, rmse)`` in grid order; ties go
    to the larger α.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("alpha grid is empty")
    model = HybridModel(features, HybridConfig(grid[0], cf_backend, cold_threshold), cf)
    model.fit(train)
    u, i, r = validation.users, validation.items, validation.ratings
    cf_scores = np.asarray(model.cf.predict(u, i), dtype=np.float64)
    cs = model.content(u, i)
    warm = model.warm(u, i)
    table = []
    for a in grid:
        pred = model.blend(cf_scores, cs, warm, a)
        table.append((float(a), float(np.sqrt(np.mean((pred - r) ** 2)))))
    best = min(table, key=lambda t: (t[1], -t[0]))
    return best[0], table
