"""Straight-from-formula reference implementations used as test oracles.

Written with plain loops over dense matrices (NaN = missing) and kept free
of any cfkit import so they cannot share bugs with the library.
"""
import math

import numpy as np


def dense(matrix):
    out = np.full(matrix.shape, np.nan)
    for u, i, r in matrix.triples():
        out[u, i] = r
    return out


def cosine(a, b, shrinkage=0.0, min_overlap=1):
    """Full-vector cosine (missing = 0) of two dense NaN-padded rows."""
    x = np.nan_to_num(a)
    y = np.nan_to_num(b)
    overlap = int(np.sum(~np.isnan(a) & ~np.isnan(b)))
    if overlap < min_overlap:
        return None
    nx = math.sqrt(sum(v * v for v in x))
    ny = math.sqrt(sum(v * v for v in y))
    if nx == 0 or ny == 0:
        return None
    s = sum(p * q for p, q in zip(x, y)) / (nx * ny)
    s *= overlap / (overlap + shrinkage)
    return max(-1.0, min(1.0, s))


def pearson(a, b, shrinkage=0.0, min_overlap=1):
    both = ~np.isnan(a) & ~np.isnan(b)
    x, y = list(a[both]), list(b[both])
    n = len(x)
    if n < min_overlap or n == 0:
        return None
    if len(set(x)) == 1 or len(set(y)) == 1:
        return None
    mx, my = sum(x) / n, sum(y) / n
    cov = sum((p - mx) * (q - my) for p, q in zip(x, y))
    vx = sum((p - mx) ** 2 for p in x)
    vy = sum((q - my) ** 2 for q in y)
    s = cov / math.sqrt(vx * vy)
    s *= n / (n + shrinkage)
    return max(-1.0, min(1.0, s))


def similarity_table(R, axis, kind, shrinkage=0.0, min_overlap=1):
    """All-pairs similarity; None where undefined or on the diagonal."""
    M = R if axis == "user" else R.T
    fn = cosine if kind == "cosine" else pearson
    n = M.shape[0]
    table = [[None] * n for _ in range(n)]
    for e in range(n):
        for f in range(n):
            if e == f:
                continue
            if not np.any(~np.isnan(M[e]) & ~np.isnan(M[f])):
                continue
            table[e][f] = fn(M[e], M[f], shrinkage, min_overlap)
    return table


def top_neighbors(table, n_max):
    out = []
    for row in table:
        pairs = [(f, s) for f, s in enumerate(row) if s is not None]
        pairs.sort(key=lambda t: (-t[1], t[0]))
        out.append(pairs[:n_max])
    return out


def predict(R, neighbors, axis, user, item, k, lo, hi):
    """Neighborhood prediction from the formulas; None means abstain."""
    if axis == "user":
        means = [np.nanmean(row) if np.any(~np.isnan(row)) else np.nan for row in R]
        num = den = 0.0
        used = 0
        for v, s in neighbors[user]:
            if used >= k:
                break
            if s <= 0 or np.isnan(R[v, item]):
                continue
            num += s * (R[v, item] - means[v])
            den += abs(s)
            used += 1
        if used == 0:
            return None
        return min(hi, max(lo, means[user] + num / den))
    num = den = 0.0
    used = 0
    for j, s in neighbors[item]:
        if used >= k:
            break
        if s <= 0 or np.isnan(R[user, j]):
            continue
        num += s * R[user, j]
        den += abs(s)
        used += 1
    if used == 0:
        return None
    return min(hi, max(lo, num / den))


def rmse(pairs):
    return math.sqrt(sum((p - a) ** 2 for p, a in pairs) / len(pairs))


def mae(pairs):
    return sum(abs(p - a) for p, a in pairs) / len(pairs)
