# %% [markdown]
# # Regularized matrix factorization
#
# The model is R ~ P Q^T, fit by minimizing squared error on observed
# cells plus a Frobenius penalty.  SGD visits ratings in a fresh seeded
# order each epoch.  ALS alternates exact ridge solves, and its objective
# never goes up.

# %%
import numpy as np

from cfkit import SplitSpec, split
from cfkit.core import RatingsMatrix
from cfkit.evaluation import rmse
from cfkit.factorization import (
    TrainConfig, complete, load_model, objective, save_model, train_als, train_sgd,
)

rng = np.random.default_rng(2)
U, V = rng.normal(size=(400, 4)), rng.normal(size=(300, 4))
full = np.clip(3 + 0.6 * U @ V.T + rng.normal(0, 0.3, (400, 300)), 1, 5)
u, i = np.nonzero(rng.random(full.shape) < 0.08)
R = RatingsMatrix(u, i, full[u, i], 400, 300, (1, 5))
train, test = split(R, SplitSpec(0.2, 0))

# %% SGD
sgd = train_sgd(train, TrainConfig("sgd", epochs=60, learning_rate=0.01, lam=0.05, k=8,
                                   init_scale=1.0))
print(f"SGD: {sgd.epochs_run} epochs, objective {sgd.trace[0]:.0f} -> {sgd.trace[-1]:.0f}, "
      f"test rmse {rmse(sgd.model.predict(test.users, test.items), test.ratings):.4f}")

# %% ALS: one trace entry per half-step, monotone.
als = train_als(train, TrainConfig("als", epochs=15, lam=3.0, k=8, init_scale=1.0))
steps = np.diff(als.trace)
print(f"ALS: {als.epochs_run} sweeps, largest increase {steps.max():.2e}, "
      f"test rmse {rmse(als.model.predict(test.users, test.items), test.ratings):.4f}")

# %% The regularization path: stronger lambda, higher optimum.
for lam in (0.1, 1.0, 10.0, 100.0):
    res = train_als(train, TrainConfig("als", epochs=30, lam=lam, k=8, init_scale=1.0))
    print(f"lambda {lam:>6}: objective {res.trace[-1]:.1f}")

# %% Completion fills gaps with predictions and keeps observed ratings.
view = complete(als.model, train)
uu, ii = int(train.users[0]), int(train.items[0])
print("observed", train.get(uu, ii), "->", view[uu, ii], "| gap (0, 299) ->", view[0, 299])

# %% Save/load round-trips bit for bit.
save_model(als.model, "/tmp/als.bin")
back = load_model("/tmp/als.bin")
print("bit-exact:", back.P.tobytes() == als.model.P.tobytes(),
      "objective", objective(back, train) == objective(als.model, train))
