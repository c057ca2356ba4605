import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfkit.core import RatingsMatrix, build_ratings
from cfkit.neighborhood import (
    ConstantVector,
    InsufficientOverlap,
    MissingEmbeddings,
    NeighborhoodCF,
    SimilarityIndex,
    SimilarityMetric,
    build_index,
    predict,
    predict_many,
    similarity,
    similarity_matrix,
)

import oracles
from conftest import random_matrix


def test_identical_cosine():
    assert similarity({0: 5, 1: 3, 2: 4}, {0: 5, 1: 3, 2: 4}) == pytest.approx(1.0, abs=1e-15)


def test_orthogonal_cosine():
    assert similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0


def test_pearson_anticorrelated():
    assert similarity([1, 2, 3], [3, 2, 1], "pearson") == pytest.approx(-1.0, abs=1e-15)


def test_pearson_constant():
    with pytest.raises(ConstantVector):
        similarity([2, 2, 2], [1, 2, 3], "pearson")


def test_min_overlap():
    with pytest.raises(InsufficientOverlap):
        similarity({0: 1.0, 1: 2.0}, {1: 2.0, 2: 3.0}, SimilarityMetric("cosine", 0, 2))


def test_metric_validation():
    with pytest.raises(ValueError):
        SimilarityMetric("cosine", shrinkage=-1)
    with pytest.raises(ValueError):
        SimilarityMetric("cosine", min_overlap=0)


@pytest.mark.parametrize("kind", ["cosine", "pearson"])
@pytest.mark.parametrize("axis", ["user", "item"])
def test_similarity_matrix_matches_oracle(kind, axis):
    rng = np.random.default_rng(7)
    for trial in range(50):
        shrink = [0.0, 2.5][trial % 2]
        m = random_matrix(rng, 20, 20, rng.uniform(0.15, 0.6))
        S = similarity_matrix(m, axis, SimilarityMetric(kind, shrink))
        table = oracles.similarity_table(oracles.dense(m), axis, kind, shrink)
        for e in range(20):
            for f in range(20):
                want = table[e][f]
                if want is None:
                    assert np.isnan(S[e, f])
                else:
                    assert abs(S[e, f] - want) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), kind=st.sampled_from(["cosine", "pearson"]))
def test_symmetry(seed, kind):
    rng = np.random.default_rng(seed)
    a = {int(j): float(rng.integers(1, 6)) for j in rng.choice(30, 12, replace=False)}
    b = {int(j): float(rng.integers(1, 6)) for j in rng.choice(30, 12, replace=False)}
    try:
        s1 = similarity(a, b, kind)
    except (ConstantVector, InsufficientOverlap):
        with pytest.raises((ConstantVector, InsufficientOverlap)):
            similarity(b, a, kind)
        return
    assert s1 == similarity(b, a, kind)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(0.1, 10.0))
def test_cosine_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    m = random_matrix(rng, 15, 12, 0.5)
    D = oracles.dense(m)
    D[0] *= c
    u, i = np.nonzero(~np.isnan(D))
    scaled = RatingsMatrix(u, i, D[u, i], 15, 12)
    metric = SimilarityMetric("cosine", 3.0)
    a = build_index(m, "user", metric, 14)
    b = build_index(scaled, "user", metric, 14)
    assert [nb for nb, _ in a.neighbors(0)] == [nb for nb, _ in b.neighbors(0)]
    assert np.allclose([s for _, s in a.neighbors(0)], [s for _, s in b.neighbors(0)],
                       atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shift=st.floats(-50, 50))
def test_pearson_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    idx = rng.choice(20, 10, replace=False)
    a = rng.uniform(1, 5, 10)
    b = rng.uniform(1, 5, 10)
    s = similarity((idx, a), (idx, b), "pearson")
    assert abs(similarity((idx, a + shift), (idx, b), "pearson") - s) <= 1e-12


def test_twin_users_index():
    m = build_ratings([(0, 0, 4.0), (0, 1, 2.0), (1, 0, 4.0), (1, 1, 2.0)])
    idx = build_index(m, "user", "cosine", 5)
    assert idx.neighbors(0) == [(1, pytest.approx(1.0))]
    assert idx.neighbors(1) == [(0, pytest.approx(1.0))]


def test_isolated_user_has_no_neighbors():
    m = build_ratings([(0, 0, 4.0), (1, 0, 3.0), (2, 1, 5.0)])
    idx = build_index(m, "user", "cosine", 5)
    assert idx.neighbors(2) == []
    assert predict(m, idx, 2, 0) is None


def test_perfect_twin_prediction():
    # B rated everything A rated except item 2; A gave item 2 a 4
    m = build_ratings([(0, 0, 5.0), (0, 1, 3.0), (0, 2, 4.0),
                       (1, 0, 5.0), (1, 1, 3.0)], rating_scale=(1, 5))
    idx = build_index(m, "user", "pearson", 5)
    assert predict(m, idx, 1, 2) == pytest.approx(4.0, abs=1e-12)


@pytest.mark.parametrize("kind", ["cosine", "pearson"])
@pytest.mark.parametrize("axis", ["user", "item"])
def test_index_matches_brute_force(kind, axis):
    rng = np.random.default_rng(11)
    for n_max in (3, 10, 60):
        m = random_matrix(rng, 50, 40, 0.2)
        got = build_index(m, axis, kind, n_max)
        want = oracles.top_neighbors(
            oracles.similarity_table(oracles.dense(m), axis, kind), n_max)
        for e, lst in enumerate(want):
            nbrs = got.neighbors(e)
            assert [nb for nb, _ in nbrs] == [nb for nb, _ in lst]
            assert np.allclose([s for _, s in nbrs], [s for _, s in lst], atol=1e-12, rtol=0)
            assert all(nb != e for nb, _ in nbrs)
            assert all(-1 - 1e-9 <= s <= 1 + 1e-9 for _, s in nbrs)


@pytest.mark.parametrize("kind", ["cosine", "pearson"])
@pytest.mark.parametrize("axis", ["user", "item"])
def test_predictions_match_oracle(kind, axis):
    rng = np.random.default_rng(99)
    for trial in range(50):
        m = random_matrix(rng, 20, 20, rng.uniform(0.2, 0.6))
        k = int(rng.integers(1, 8))
        idx = build_index(m, axis, kind, 10)
        D = oracles.dense(m)
        table = oracles.similarity_table(D, axis, kind)
        nbrs = oracles.top_neighbors(table, 10)
        users = np.repeat(np.arange(20), 20)
        items = np.tile(np.arange(20), 20)
        got = predict_many(m, idx, users, items, k)
        for u, i, g in zip(users, items, got):
            want = oracles.predict(D, nbrs, axis, u, i, k, 1.0, 5.0)
            if want is None:
                assert np.isnan(g)
            else:
                assert abs(g - want) <= 1e-12


def test_predictions_in_range_or_abstain(rng):
    m = random_matrix(rng, 40, 30, 0.3)
    for axis in ("user", "item"):
        model = NeighborhoodCF(axis, "pearson", 20, 5).fit(m)
        raw = model.predict_raw(np.repeat(np.arange(41), 31), np.tile(np.arange(31), 41))
        ok = ~np.isnan(raw)
        assert np.all((raw[ok] >= 1.0) & (raw[ok] <= 5.0))
        full = model.predict([40, 0], [0, 30])
        assert np.all(full == m.global_mean)


def test_index_csv_round_trip(tmp_path, rng):
    m = random_matrix(rng, 25, 20, 0.3)
    idx = build_index(m, "item", "pearson", 7)
    idx.to_csv(tmp_path / "idx.csv")
    assert SimilarityIndex.from_csv(tmp_path / "idx.csv") == idx


def test_semantic_cosine_requires_embeddings(rng):
    m = random_matrix(rng, 5, 4, 0.5)
    with pytest.raises(MissingEmbeddings):
        build_index(m, "item", "semantic_cosine", 3)


def test_semantic_cosine_index(rng):
    m = random_matrix(rng, 10, 6, 0.6)
    E = rng.standard_normal((6, 4))
    idx = build_index(m, "item", "semantic_cosine", 5, embeddings=E)
    En = E / np.linalg.norm(E, axis=1, keepdims=True)
    S = En @ En.T
    for e in range(6):
        order = sorted((f for f in range(6) if f != e), key=lambda f: (-S[e, f], f))
        assert [nb for nb, _ in idx.neighbors(e)] == order[:5]
        assert np.allclose([s for _, s in idx.neighbors(e)], S[e, order[:5]], atol=1e-12)
