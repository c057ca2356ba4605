# %% [markdown]
# # Ratings, splits and sparsity masks
#
# Every experiment starts from a `RatingsMatrix`, an immutable sparse store
# with row and column adjacency.  A seeded, per-user stratified split holds
# out test ratings, and `mask` then thins the training part to a target
# density.  Masks drawn with one seed are nested, so a sweep compares the
# same ratings at every level.

# %%
import numpy as np

from cfkit import RatingsMatrix, SplitSpec, mask, split
from cfkit.core import retention_order

rng = np.random.default_rng(0)
m, n = 200, 120
keep = rng.random((m, n)) < 0.15
users, items = np.nonzero(keep)
ratings = rng.integers(1, 6, len(users)).astype(float)
R = RatingsMatrix(users, items, ratings, m, n)
print(R, f"density {R.density:.3f}, mean {R.global_mean:.3f}")

# %% Row and column views enumerate the same entries.
its, rs = R.user_row(0)
print("user 0 rated", its.tolist()[:8], "...")

# %% An 8:2 split, stratified by user.
train, test = split(R, SplitSpec(test_fraction=0.2, seed=42))
print(f"train {train.nnz}, test {test.nnz}, overlap "
      f"{len(train.entry_set() & test.entry_set())}")

# %% Sparsity s keeps a (1 - s) share of training ratings.
order = retention_order(train, seed=42)
for s in (0.2, 0.5, 0.8):
    sub = mask(train, 1 - s, seed=42, order=order)
    cold_users = int(np.sum((sub.user_counts() == 0) & (train.user_counts() > 0)))
    print(f"sparsity {s:.0%}: {sub.nnz} ratings kept, users left without ratings: {cold_users}")

# %% Nested: the 80%-sparse set is inside the 20%-sparse one.
a = mask(train, 0.2, 42, order).entry_set()
b = mask(train, 0.8, 42, order).entry_set()
print("nested:", a <= b)
