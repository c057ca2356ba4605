import numpy as np
import pytest

from cfkit.core import RatingsMatrix
from cfkit.factorization import TrainConfig, train_als
from cfkit.parallel import PartitionedALS, partition, plan_partitions, train_partitioned

from conftest import random_matrix


def sample_2000(rng):
    m = random_matrix(rng, 150, 120, 0.12)
    sel = np.sort(rng.choice(m.nnz, 2000, replace=False))
    return m.subset(sel)


CFG = TrainConfig("als", epochs=5, lam=0.1, k=6, init_scale=1.0, seed=3, convergence_tol=0.0)


def test_single_partition_is_serial_bitwise(rng):
    m = sample_2000(rng)
    serial = train_als(m, CFG)
    part = train_partitioned(m, 1, CFG)
    assert np.array_equal(part.model.P, serial.model.P)
    assert np.array_equal(part.model.Q, serial.model.Q)
    assert part.trace == serial.trace


@pytest.mark.parametrize("n", [2, 4, 8])
def test_partition_count_invariance(rng, n):
    m = sample_2000(rng)
    serial = train_als(m, CFG).model
    part = train_partitioned(m, n, CFG).model
    assert np.max(np.abs(part.P - serial.P)) < 1e-9
    assert np.max(np.abs(part.Q - serial.Q)) < 1e-9


def test_thread_cap_does_not_change_result(rng):
    m = sample_2000(rng)
    a = train_partitioned(m, 4, CFG, threads=1).model
    b = train_partitioned(m, 4, CFG, threads=4).model
    assert np.array_equal(a.P, b.P) and np.array_equal(a.Q, b.Q)


def test_ml100k_sample_invariance(ml100k):
    ds, _ = ml100k
    rng = np.random.default_rng(0)
    m = ds.ratings.subset(np.sort(rng.choice(ds.ratings.nnz, 2000, replace=False)))
    serial = train_als(m, CFG).model
    part = train_partitioned(m, 4, CFG).model
    assert max(np.max(np.abs(part.P - serial.P)), np.max(np.abs(part.Q - serial.Q))) < 1e-9


def test_partition_identity():
    rng = np.random.default_rng(1)
    m = random_matrix(rng, 30, 20, 0.3)
    plan, subs = partition(m, 1)
    assert len(subs) == 1 and subs[0] == m


def test_equal_users_split_evenly():
    m = RatingsMatrix(np.repeat(np.arange(4), 3), np.tile(np.arange(3), 4), np.ones(12))
    plan, subs = partition(m, 2)
    assert [len(plan.users(p)) for p in range(2)] == [2, 2]
    assert [s.nnz for s in subs] == [6, 6]


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8])
def test_coverage(n):
    rng = np.random.default_rng(n)
    m = random_matrix(rng, 60, 40, 0.2)
    plan, subs = partition(m, n)
    assign = plan.assignment()
    assert sorted(assign.tolist()) == assign.tolist() and len(assign) == 60
    entries = [e for s in subs for e in s.triples()]
    assert len(entries) == m.nnz and set(entries) == m.entry_set()
    for p, s in enumerate(subs):
        assert np.all(assign[s.users] == p)


def test_balance_when_users_permit():
    rng = np.random.default_rng(3)
    m = random_matrix(rng, 400, 100, 0.3)
    _, subs = partition(m, 4)
    counts = [s.nnz for s in subs]
    assert (max(counts) - min(counts)) / max(counts) <= 0.10


def test_too_many_partitions_clamps():
    m = RatingsMatrix([0, 1, 2], [0, 1, 0], [1.0, 2.0, 3.0])
    with pytest.warns(UserWarning):
        plan = plan_partitions(m, 10)
    assert plan.num_partitions == 3


def test_monotone_objective_and_round_timings(rng):
    m = sample_2000(rng)
    res = train_partitioned(m, 3, CFG)
    assert all(b <= a + 1e-9 for a, b in zip(res.trace, res.trace[1:]))
    assert len(res.round_timings) == res.epochs_run == 5
    assert all(t >= 0 for t in res.round_timings)


def test_local_item_factors_kept(rng):
    m = sample_2000(rng)
    res = train_partitioned(m, 3, CFG, keep_local=True)
    assert len(res.local_item_factors) == 3
    assert all(q.shape == res.model.Q.shape for q in res.local_item_factors)


def test_sgd_rejected(rng):
    with pytest.raises(ValueError):
        train_partitioned(random_matrix(rng, 5, 5), 2, TrainConfig("sgd"))


def test_estimator_wrapper(rng):
    m = sample_2000(rng)
    est = PartitionedALS(CFG, partitions=2).fit(m)
    assert est.predict([0], [0]).shape == (1,)
