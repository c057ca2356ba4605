import numpy as np
import pytest

from cfkit.core import RatingsMatrix, build_ratings
from cfkit.factorization import (
    DimensionMismatch,
    Diverged,
    FactorModel,
    TrainConfig,
    complete,
    gradients,
    load_model,
    objective,
    predict,
    save_model,
    train,
    train_als,
    train_sgd,
)

from conftest import random_matrix


def full_matrix(R):
    m, n = R.shape
    u, i = np.divmod(np.arange(m * n), n)
    return RatingsMatrix(u, i, R.ravel(), m, n)


def train_rmse(model, m):
    pred = np.einsum("ij,ij->i", model.P[m.users], model.Q[m.items])
    return float(np.sqrt(np.mean((pred - m.ratings) ** 2)))


def test_objective_examples():
    one = build_ratings([(0, 0, 3.0)])
    assert objective(np.zeros((1, 1)), one, np.zeros((1, 1)), 0.0) == 9.0
    assert objective(np.ones((1, 1)), one, np.ones((1, 1)), 0.5) == 5.0
    u, v = np.array([[1.0], [2.0]]), np.array([[3.0], [0.5]])
    assert objective(u, full_matrix(u @ v.T), v, 0.0) == 0.0


def test_objective_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        objective(np.zeros((2, 1)), build_ratings([(0, 0, 1.0)]), np.zeros((1, 1)), 0.0)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    h = 1e-6
    worst = 0.0
    for _ in range(100):
        m, n, k = rng.integers(1, 6), rng.integers(1, 6), int(rng.integers(1, 9))
        P = rng.normal(size=(m, k))
        Q = rng.normal(size=(n, k))
        u, i = int(rng.integers(m)), int(rng.integers(n))
        r = float(rng.uniform(1, 5))
        lam = float(rng.uniform(0, 2))
        single = RatingsMatrix([u], [i], [r], m, n)
        gp, gq = gradients(P, Q, lam, u, i, r)
        for X, g, row in ((P, gp, u), (Q, gq, i)):
            fd = np.empty(k)
            for f in range(k):
                old = X[row, f]
                X[row, f] = old + h
                up = objective(P, single, Q, lam)
                X[row, f] = old - h
                down = objective(P, single, Q, lam)
                X[row, f] = old
                fd[f] = (up - down) / (2 * h)
            rel = np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd), 1e-12)
            worst = max(worst, rel)
    assert worst < 1e-5


def test_als_objective_monotone():
    rng = np.random.default_rng(17)
    for trial in range(20):
        m = random_matrix(rng, int(rng.integers(5, 40)), int(rng.integers(5, 40)),
                          rng.uniform(0.1, 0.7), integer=False)
        lam = [0.0, 0.01, 0.5, 3.0][trial % 4]
        cfg = TrainConfig("als", epochs=15, lam=lam, k=int(rng.integers(1, 6)),
                          init_scale=1.0, seed=trial, convergence_tol=0.0)
        trace = train_als(m, cfg).trace
        assert len(trace) == 31
        assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))


def rank2_instance():
    rng = np.random.default_rng(2)
    U = rng.uniform(0.5, 1.5, (50, 2))
    V = rng.uniform(0.5, 1.5, (40, 2))
    return full_matrix(U @ V.T)


def test_rank_recovery_sgd():
    m = rank2_instance()
    cfg = TrainConfig("sgd", epochs=200, learning_rate=0.02, lam=0.0, k=2, init_scale=1.0,
                      seed=0, convergence_tol=0.0)
    assert train_rmse(train_sgd(m, cfg).model, m) < 1e-2


def test_rank_recovery_als():
    m = rank2_instance()
    cfg = TrainConfig("als", epochs=30, lam=0.0, k=2, init_scale=1.0, seed=0,
                      convergence_tol=0.0)
    assert train_rmse(train_als(m, cfg).model, m) < 1e-2


def test_rank1_sgd_objective():
    rng = np.random.default_rng(3)
    m = full_matrix(np.outer(rng.uniform(0.5, 1.5, 20), rng.uniform(0.5, 1.5, 15)))
    cfg = TrainConfig("sgd", epochs=200, learning_rate=0.02, lam=0.0, k=1, init_scale=1.0,
                      seed=1, convergence_tol=0.0)
    res = train_sgd(m, cfg)
    assert objective(res.model, m) < 1e-4
    assert res.trace[-1] == pytest.approx(objective(res.model, m))
    # observed cells are reproduced
    got = res.model.predict(m.users, m.items)
    assert np.max(np.abs(got - m.ratings)) < 1e-3


def test_huge_lambda_shrinks_to_zero():
    rng = np.random.default_rng(4)
    m = random_matrix(rng, 20, 15, 0.5)
    cfg = TrainConfig("sgd", epochs=20, learning_rate=5e-7, lam=1e6, k=4, init_scale=1.0)
    res = train_sgd(m, cfg)
    assert np.abs(res.model.P).max() < 1e-4
    assert objective(res.model, m) == pytest.approx(float(m.ratings @ m.ratings), rel=0.01)


def test_sgd_diverges_loudly():
    rng = np.random.default_rng(4)
    m = random_matrix(rng, 20, 15, 0.5)
    cfg = TrainConfig("sgd", epochs=50, learning_rate=5.0, lam=0.0, k=4, init_scale=1.0)
    with np.errstate(all="ignore"), pytest.raises(Diverged) as exc:
        train_sgd(m, cfg)
    assert exc.value.trace


def test_one_sweep_full_rank_exact():
    rng = np.random.default_rng(8)
    R = rng.uniform(1, 5, (7, 5))
    m = full_matrix(R)
    cfg = TrainConfig("als", epochs=1, lam=0.0, k=5, init_scale=1.0, seed=0)
    res = train_als(m, cfg)
    # direct least-squares oracle: rank-5 fit of a 7x5 matrix is exact
    assert res.trace[-1] < 1e-16 * float(R.ravel() @ R.ravel())


def test_user_without_ratings_gets_zero_row():
    m = RatingsMatrix([0, 0, 2], [0, 1, 1], [4.0, 2.0, 5.0], 3, 2)
    res = train_als(m, TrainConfig("als", epochs=3, lam=0.1, k=2))
    assert np.all(res.model.P[1] == 0.0)


def test_prediction_fallbacks():
    m = RatingsMatrix([0, 0, 2], [0, 1, 1], [4.0, 2.0, 5.0], 4, 3, (1.0, 5.0))
    res = train_als(m, TrainConfig("als", epochs=3, lam=0.1, k=2))
    model = res.model
    assert predict(model, 99, 0) == m.global_mean
    assert predict(model, 1, 0) == m.global_mean
    assert predict(model, 0, 2) == m.global_mean
    # a seen user whose factor row is zero predicts the clamped dot product
    z = FactorModel(np.zeros((1, 2)), np.ones((1, 2)), 0.0, 3.0, (1.0, 5.0))
    assert predict(z, 0, 0) == 1.0


def test_lambda_path_non_decreasing():
    rng = np.random.default_rng(21)
    m = random_matrix(rng, 30, 25, 0.4, integer=False)
    values = []
    for lam in (0.0, 0.01, 0.1, 1.0, 10.0):
        cfg = TrainConfig("als", epochs=200, lam=lam, k=3, init_scale=1.0, seed=0,
                          convergence_tol=1e-12)
        values.append(train_als(m, cfg).trace[-1])
    assert all(b >= a for a, b in zip(values, values[1:]))


@pytest.mark.parametrize("opt", ["sgd", "als"])
def test_deterministic(opt, tmp_path):
    rng = np.random.default_rng(6)
    m = random_matrix(rng, 30, 20, 0.4)
    cfg = TrainConfig(opt, epochs=10, k=4, seed=9)
    a, b = train(m, cfg).model, train(m, cfg).model
    assert np.array_equal(a.P, b.P) and np.array_equal(a.Q, b.Q)
    save_model(a, tmp_path / "a.bin")
    save_model(b, tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_als_thread_independent():
    rng = np.random.default_rng(6)
    m = random_matrix(rng, 40, 30, 0.4)
    cfg = TrainConfig("als", epochs=5, k=4, seed=1)
    a, b = train_als(m, cfg, 1).model, train_als(m, cfg, 3).model
    assert np.array_equal(a.P, b.P) and np.array_equal(a.Q, b.Q)


def test_save_load_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    m = random_matrix(rng, 12, 9, 0.4, ensure_rows=False)
    model = train(m, TrainConfig("sgd", epochs=5, k=3, seed=4, lam=0.07)).model
    save_model(model, tmp_path / "m.bin")
    back = load_model(tmp_path / "m.bin")
    assert back.P.tobytes() == model.P.tobytes() and back.Q.tobytes() == model.Q.tobytes()
    assert (back.lam, back.global_mean, back.seed) == (model.lam, model.global_mean, 4)
    assert back.rating_scale == model.rating_scale
    assert np.array_equal(back.user_seen, model.user_seen)
    assert np.array_equal(back.item_seen, model.item_seen)


def test_load_rejects_garbage(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"\0" * 128)
    with pytest.raises(ValueError):
        load_model(tmp_path / "x.bin")


def test_complete_matches_dense_oracle():
    rng = np.random.default_rng(13)
    m = random_matrix(rng, 5, 5, 0.5)
    model = train(m, TrainConfig("als", epochs=10, k=2, seed=0)).model
    view = complete(model, m)
    D = view.dense()
    for u in range(5):
        for i in range(5):
            r = m.get(u, i)
            if r is not None:
                assert view[u, i] == r == D[u, i]
            else:
                if m.user_counts()[u] == 0 or m.item_counts()[i] == 0:
                    want = m.global_mean
                else:
                    want = min(5.0, max(1.0, float(sum(model.P[u, f] * model.Q[i, f]
                                                      for f in range(2)))))
                assert abs(view[u, i] - want) <= 1e-12
                assert abs(D[u, i] - want) <= 1e-12


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(optimizer="adam")
    with pytest.raises(ValueError):
        TrainConfig(k=0)
    with pytest.raises(ValueError):
        TrainConfig(lam=-1)
