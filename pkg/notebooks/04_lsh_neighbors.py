# %% [markdown]
# # Random-hyperplane LSH for cosine neighbors
#
# Each table hashes a vector to the sign pattern of b random projections.
# Two vectors at angle theta agree on one bit with probability
# 1 - theta/pi, so close vectors tend to share buckets.  Candidates from L
# tables are reranked by exact cosine.

# %%
import numpy as np

from cfkit.lsh import (
    LshConfig, build_lsh, collision_rate, exact_cosine_index, lsh_neighborhood_index,
    recall_at_k,
)

for theta in np.linspace(0, np.pi, 5):
    print(f"theta {theta / np.pi:.2f}pi: measured {collision_rate(theta):.3f}, "
          f"law {1 - theta / np.pi:.3f}")

# %% Query one vector against an index of 2000 clustered vectors.
rng = np.random.default_rng(3)
centers = rng.normal(size=(40, 16))
X = centers[rng.integers(0, 40, 2000)] + 0.4 * rng.normal(size=(2000, 16))
index = build_lsh(X, LshConfig(num_tables=16, bits_per_table=10, seed=0))
res = index.query(X[0], k=5, exclude=0)
print(f"{res.num_candidates} candidates scored instead of 1999")
print(res.neighbors)

# %% Recall against brute force, and the share of pairs actually scored.
exact = exact_cosine_index(X, 10)
for L, b in [(4, 8), (16, 10), (32, 14), (64, 16)]:
    approx = lsh_neighborhood_index(X, LshConfig(L, b, seed=0), 10)
    print(f"L={L:>2} b={b:>2}: recall@10 {recall_at_k(approx, exact, 10):.3f}, "
          f"candidate fraction {approx.extra['candidate_fraction']:.1%}")
