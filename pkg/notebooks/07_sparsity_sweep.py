# %% [markdown]
# # Sparsity sweep and cross-validated tuning
#
# The harness splits 8:2 per seed, masks training to each sparsity level,
# and fits every algorithm on the same realization.  It then scores the
# full test set.  Memory-based CF falls back to the training mean when it
# has nothing to say.  Run `scripts/fetch_movielens.py` first to use
# MovieLens-100K; otherwise a synthetic matrix stands in.

# %%
from pathlib import Path

import numpy as np

from cfkit.core import RatingsMatrix, SplitSpec, split
from cfkit.evaluation import AlgorithmSpec, run_experiment, tune
from cfkit.ingest import FeatureTable, load_dataset

data = Path(__file__).resolve().parents[1] / "data" / "ml-100k"
if (data / "u.data").exists():
    ds, features = load_dataset(data / "u.data", "u_data_100k", data / "movies.dat")
    R, name = ds.ratings, "ml-100k"
else:
    rng = np.random.default_rng(6)
    U, V = rng.normal(size=(500, 4)), rng.normal(size=(400, 4))
    full = np.clip(np.rint(3.5 + 0.7 * U @ V.T), 1, 5)
    u, i = np.nonzero(rng.random(full.shape) < 0.08)
    R = RatingsMatrix(u, i, full[u, i], 500, 400, (1, 5))
    features = FeatureTable((rng.random((400, 6)) < 0.3).astype(float), list("abcdef"))
    name = "synthetic"

# %% Tune MF rank and lambda by 3-fold CV on the training split only.
train, _ = split(R, SplitSpec(0.2, 0))
res = tune(train, AlgorithmSpec("mf", {"epochs": 40}), {"k": [16, 32], "lam": [0.05, 0.12]})
for params, score, _ in res.table:
    print(params, round(score, 4))
best = res.best

# %% Sweep.
algos = [AlgorithmSpec("baseline_cf"), AlgorithmSpec("mf", best),
         AlgorithmSpec("hybrid", {f"mf_{k}": v for k, v in best.items()}),
         AlgorithmSpec("ann", {f"mf_{k}": v for k, v in best.items()})]
report = run_experiment(R, algos, sparsities=(0.2, 0.5, 0.8), seeds=(0, 1), features=features,
                        dataset=name)
print(report.table())
report.to_csv("/tmp/sweep.csv")
