import numpy as np
import pytest

from cfkit.lsh import (
    DimensionMismatch,
    LshConfig,
    LshIndex,
    ZeroVector,
    build_lsh,
    collision_rate,
    exact_cosine_index,
    lsh_neighborhood_index,
    query,
    recall_at_k,
)


def unit_vectors(n, d, seed):
    X = np.random.default_rng(seed).standard_normal((n, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def brute_top_k(X, q, k, exclude):
    Xn = X / np.linalg.norm(X, axis=1, keepdims=True)
    s = Xn @ (q / np.linalg.norm(q))
    ids = [j for j in range(len(X)) if j != exclude]
    ids.sort(key=lambda j: (-s[j], j))
    return ids[:k]


def test_identical_vectors_share_keys():
    idx = LshIndex(LshConfig(8, 12, seed=3), 5)
    v = np.random.default_rng(0).standard_normal(5)
    assert np.array_equal(idx.keys(v), idx.keys(v.copy()))


def test_negation_flips_every_bit():
    cfg = LshConfig(6, 10, seed=1)
    idx = LshIndex(cfg, 7)
    v = np.random.default_rng(2).standard_normal(7)
    full = (1 << cfg.bits_per_table) - 1
    assert np.array_equal(idx.keys(-v), idx.keys(v) ^ full)


def test_zero_projection_counts_as_positive():
    idx = LshIndex(LshConfig(1, 3, seed=0), 2)
    idx.hyperplanes = np.array([[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]]) / np.array([1, 1, np.sqrt(2)])[:, None]
    # projections 0, -1, -0.707 -> bits 1, 0, 0
    assert idx.keys(np.array([0.0, -1.0]))[0, 0] == 0b100
    assert idx.keys(np.array([0.0, 0.0]))[0, 0] == 0b111


def test_keys_are_sign_patterns():
    cfg = LshConfig(4, 5, seed=7)
    idx = LshIndex(cfg, 3)
    X = unit_vectors(20, 3, 1)
    keys = idx.keys(X)
    for n, x in enumerate(X):
        for t in range(4):
            bits = [1 if x @ h >= 0 else 0 for h in idx.hyperplanes[t]]
            assert keys[n, t] == int("".join(map(str, bits)), 2)


def test_every_id_once_per_table():
    X = unit_vectors(100, 6, 4)
    idx = build_lsh(X, LshConfig(5, 4))
    for table in idx.tables:
        ids = [i for bucket in table.values() for i in bucket]
        assert sorted(ids) == list(range(100))


@pytest.mark.parametrize("theta", [0, np.pi / 4, np.pi / 2, 3 * np.pi / 4, np.pi])
def test_collision_law(theta):
    assert abs(collision_rate(theta, 10_000, seed=0) - (1 - theta / np.pi)) <= 0.02


def test_collision_monotone_in_angle():
    thetas = [0, np.pi / 4, np.pi / 2, 3 * np.pi / 4, np.pi]
    rates = [collision_rate(t, 10_000, seed=11, dim=8) for t in thetas]
    assert all(b <= a + 0.02 for a, b in zip(rates, rates[1:]))


def test_single_identical_neighbor():
    idx = build_lsh({"a": [1.0, 2.0, 3.0], "b": [1.0, 2.0, 3.0]}, LshConfig(4, 6))
    res = query(idx, np.array([1.0, 2.0, 3.0]), 5, exclude="a")
    assert res.neighbors == [("b", pytest.approx(1.0))]


def test_empty_index_query():
    idx = LshIndex(LshConfig(), 3)
    assert query(idx, np.ones(3), 10).neighbors == []


def test_recall_on_random_vectors():
    X = unit_vectors(500, 8, 0)
    idx = build_lsh(X, LshConfig(16, 8, seed=0))
    hits = 0
    for e in range(500):
        got = {nb for nb, _ in query(idx, X[e], 10, exclude=e).neighbors}
        hits += len(got & set(brute_top_k(X, X[e], 10, e)))
    assert hits / 5000 >= 0.8


def test_rerank_exact_when_candidates_cover_population():
    X = unit_vectors(60, 3, 5)
    idx = build_lsh(X, LshConfig(64, 1, seed=2))
    checked = 0
    for e in range(60):
        res = query(idx, X[e], 10, exclude=e)
        if res.num_candidates != 59:
            continue
        checked += 1
        assert [nb for nb, _ in res.neighbors] == brute_top_k(X, X[e], 10, e)
    assert checked > 40


def test_candidate_count_is_true_union():
    X = unit_vectors(200, 5, 9)
    cfg = LshConfig(6, 6, seed=1)
    idx = build_lsh(X, cfg)
    keys = idx.keys(X)
    for e in (0, 17, 123):
        union = {j for j in range(200) if j != e and np.any(keys[j] == keys[e])}
        assert query(idx, X[e], 10, exclude=e).num_candidates == len(union)


def test_limit_few_bits():
    X = unit_vectors(500, 8, 3)
    approx = lsh_neighborhood_index(X, LshConfig(32, 1, seed=0), 10)
    exact = exact_cosine_index(X, 10)
    assert recall_at_k(approx, exact, 10) >= 0.99
    assert approx.extra["mean_candidates"] >= 0.99 * 499


def test_limit_many_bits():
    X = unit_vectors(500, 8, 3)
    approx = lsh_neighborhood_index(X, LshConfig(1, 24, seed=0), 10)
    assert approx.extra["mean_candidates"] < 0.05 * 500


def test_neighborhood_index_matches_query_path():
    X = unit_vectors(150, 6, 8)
    cfg = LshConfig(8, 6, seed=4)
    fast = lsh_neighborhood_index(X, cfg, 10)
    idx = build_lsh(X, cfg)
    total = 0
    for e in range(150):
        res = idx.query(X[e], 10, exclude=e)
        total += res.num_candidates
        assert [nb for nb, _ in fast.neighbors(e)] == [nb for nb, _ in res.neighbors]
    assert fast.extra["mean_candidates"] == pytest.approx(total / 150)
    assert fast.extra["candidate_fraction"] == pytest.approx(total / (150 * 149))


def test_deterministic_under_seed():
    X = unit_vectors(100, 4, 1)
    a = lsh_neighborhood_index(X, LshConfig(8, 8, seed=5), 10)
    b = lsh_neighborhood_index(X, LshConfig(8, 8, seed=5), 10)
    assert a == b
    assert build_lsh(X, LshConfig(3, 4, seed=5)).tables == build_lsh(X, LshConfig(3, 4, seed=5)).tables


def test_errors():
    with pytest.raises(ZeroVector):
        build_lsh(np.array([[1.0, 0.0], [0.0, 0.0]]), LshConfig())
    with pytest.raises(DimensionMismatch):
        build_lsh({1: [1.0, 2.0], 2: [1.0, 2.0, 3.0]}, LshConfig())
    idx = build_lsh(np.eye(3), LshConfig())
    with pytest.raises(DimensionMismatch):
        idx.query(np.ones(4))
    with pytest.raises(ValueError):
        LshConfig(num_tables=0)


def test_no_rerank_returns_bucket_order():
    X = unit_vectors(50, 4, 2)
    idx = build_lsh(X, LshConfig(4, 3, seed=1, rerank=False))
    res = idx.query(X[0], 5, exclude=0)
    assert [nb for nb, _ in res.neighbors] == idx.candidates(X[0], exclude=0)[:5]


def test_tuner_finds_cheap_config_on_ml100k_item_factors(ml100k):
    from cfkit.core import SplitSpec, mask, split
    from cfkit.evaluation import tune_lsh
    from cfkit.factorization import TrainConfig, train_sgd
    ds, _ = ml100k
    train, _ = split(ds.ratings, SplitSpec(0.2, 0))
    model = train_sgd(mask(train, 0.8, 0), TrainConfig("sgd", epochs=100, lam=0.12, k=32,
                                                       init_scale=1.0)).model
    Q = model.Q.copy()
    Q[~model.item_seen] = 0.0
    res = tune_lsh(Q, {"num_tables": [320, 768], "bits_per_table": [32, 36]}, 0.8, k=10)
    assert res.recall >= 0.8 and res.candidate_fraction < 0.20
