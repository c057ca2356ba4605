# %% [markdown]
# # Content + CF hybrid and cold start
#
# A user's profile is the average of the attribute vectors of the items
# they rated, each weighted by how far the rating sits from their own mean.
# The content score maps the profile/item cosine onto the rating scale.
# Warm pairs blend it with a CF score; pairs involving a user or item with
# no training ratings use the content score alone.

# %%
import numpy as np

from cfkit import SplitSpec, split
from cfkit.core import RatingsMatrix
from cfkit.evaluation import rmse
from cfkit.factorization import MatrixFactorization
from cfkit.hybrid import HybridConfig, HybridModel, tune_alpha
from cfkit.ingest import FeatureTable
from cfkit.neighborhood import NeighborhoodCF

rng = np.random.default_rng(5)
n_users, n_items, n_genres = 300, 250, 8
G = (rng.random((n_items, n_genres)) < 0.25).astype(float)
G[~G.any(axis=1), 0] = 1
taste = rng.normal(size=(n_users, n_genres))
full = np.clip(np.rint(3 + 0.8 * np.tanh(taste @ G.T) + rng.normal(0, 0.6, (n_users, n_items))), 1, 5)
u, i = np.nonzero(rng.random(full.shape) < 0.1)
R = RatingsMatrix(u, i, full[u, i], n_users, n_items, (1, 5))
features = FeatureTable(G, [f"genre{j}" for j in range(n_genres)])
train, test = split(R, SplitSpec(0.2, 0))

# %% Pick alpha on a validation slice of the training data.
fit, val = split(train, SplitSpec(0.1, 1))
alpha, table = tune_alpha(fit, val, [0, 0.25, 0.5, 0.75, 1.0], features,
                          cf=MatrixFactorization(optimizer="als", k=8, lam=5.0, epochs=10))
print("alpha table:", [(a, round(s, 4)) for a, s in table], "-> alpha", alpha)

model = HybridModel(features, HybridConfig(alpha),
                    MatrixFactorization(optimizer="als", k=8, lam=5.0, epochs=10)).fit(train)
print("hybrid test rmse", round(rmse(model.predict(test.users, test.items), test.ratings), 4))

# %% Make 20 items brand new: drop all their training ratings.
cold = rng.choice(n_items, 20, replace=False)
warm_train = train.subset(~np.isin(train.items, cold))
sel = np.isin(test.items, cold)
model.fit(warm_train)
pred = model.predict(test.users[sel], test.items[sel])
base = NeighborhoodCF("user").fit(warm_train).predict_raw(test.users[sel], test.items[sel])
print(f"{sel.sum()} pairs on new items: hybrid answers {np.isfinite(pred).mean():.0%} "
      f"(rmse {rmse(pred, test.ratings[sel]):.3f}); user CF abstains on {np.isnan(base).mean():.0%}")
