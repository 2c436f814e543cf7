import itertools

import numpy as np
import pytest

from batchot.assignment import (AssignmentResult, assignment_1d,
                                solve_assignment, solve_batch,
                                squared_cost_matrix, w2sq_quantile_1d)
from batchot.measures import AtomCloud, PairBatch, ValidationError


def brute_force_cost(c: np.ndarray) -> float:
    """Exhaustive minimum of the mean assignment cost over all permutations."""
    k = c.shape[0]
    best = np.inf
    for perm in itertools.permutations(range(k)):
        best = min(best, sum(c[i, perm[i]] for i in range(k)) / k)
    return best


def test_k1_trivial():
    res = solve_assignment(np.array([[3.5]]))
    assert res.perm.tolist() == [0]
    assert res.total_cost == 3.5


def test_zero_diagonal():
    res = solve_assignment(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert res.perm.tolist() == [0, 1]
    assert res.total_cost == 0.0


def test_validation_errors():
    with pytest.raises(ValidationError):
        solve_assignment(np.zeros((2, 3)))
    with pytest.raises(ValidationError):
        solve_assignment(np.array([[np.nan]]))


def test_random_instances_match_brute_force(rng):
    for _ in range(300):
        k = int(rng.integers(2, 7))
        c = rng.random((k, k))
        res = solve_assignment(c)
        assert sorted(res.perm.tolist()) == list(range(k))  # bijection
        assert res.total_cost == pytest.approx(brute_force_cost(c), abs=1e-12)


def test_transpose_symmetry(rng):
    c = rng.random((6, 6))
    res = solve_assignment(c)
    res_t = solve_assignment(c.T)
    inv = np.empty(6, dtype=int)
    inv[res.perm] = np.arange(6)
    assert res_t.total_cost == pytest.approx(res.total_cost, rel=1e-12)
    # inverse permutation is optimal for the transpose
    assert c.T[np.arange(6), inv].sum() / 6 == pytest.approx(res.total_cost, rel=1e-12)


def test_determinism(rng):
    c = rng.random((8, 8))
    r1 = solve_assignment(c)
    r2 = solve_assignment(c.copy())
    assert np.array_equal(r1.perm, r2.perm)


def test_solve_batch_k1(rng):
    cloud = AtomCloud(rng.normal(size=(3, 2)))
    x = rng.normal(size=(1, 2))
    batch = PairBatch(x, np.array([2]))
    res = solve_batch(batch, cloud)
    assert res.total_cost == pytest.approx(np.sum((x[0] - cloud.atoms[2]) ** 2))


def test_solve_batch_brute_force(rng):
    cloud = AtomCloud(rng.normal(size=(4, 3)))
    for _ in range(50):
        xs = rng.normal(size=(5, 3))
        ys = rng.integers(0, 4, size=5)
        res = solve_batch(PairBatch(xs, ys), cloud)
        c = squared_cost_matrix(xs, cloud.atoms[ys])
        assert res.total_cost == pytest.approx(brute_force_cost(c), abs=1e-12)


def test_solve_batch_1d_monotone(rng):
    cloud = AtomCloud(np.sort(rng.normal(size=4))[:, None])
    xs = np.sort(rng.normal(size=6))[:, None]
    ys = np.sort(rng.integers(0, 4, size=6))
    res = solve_batch(PairBatch(xs, ys), cloud)
    ref = assignment_1d(xs.ravel(), cloud.atoms[ys].ravel())
    assert res.total_cost == pytest.approx(ref.total_cost, abs=1e-12)


def test_assignment_1d_identical_multisets(rng):
    xs = rng.normal(size=10)
    res = assignment_1d(xs, rng.permutation(xs))
    assert res.total_cost == pytest.approx(0.0, abs=1e-15)


def test_assignment_1d_two_points():
    res = assignment_1d([0.0, 1.0], [1.0, 0.0])
    assert res.total_cost == 0.0


def test_assignment_1d_vs_generic_solver(rng):
    for _ in range(200):
        k = int(rng.integers(1, 51))
        xs = rng.normal(size=k)
        ys = rng.normal(size=k)
        res_1d = assignment_1d(xs, ys)
        res = solve_assignment(squared_cost_matrix(xs[:, None], ys[:, None]))
        assert res_1d.total_cost == pytest.approx(res.total_cost, abs=1e-12)


def test_quantile_w2_equal_laws():
    assert w2sq_quantile_1d(lambda u: u, lambda u: u) == 0.0


def test_quantile_w2_uniform_pair():
    # Unif[0,1] vs Unif[-1,1]: integral of (1-u)^2 du = 1/3
    val = w2sq_quantile_1d(lambda u: u, lambda u: 2 * u - 1, n_nodes=10_000)
    assert val == pytest.approx(1.0 / 3.0, abs=1e-6)


def test_quantile_w2_pure_shift():
    a = 0.7
    val = w2sq_quantile_1d(lambda u: u, lambda u: u + a, n_nodes=100)
    assert val == pytest.approx(a * a, abs=1e-10)


def test_quantile_w2_nonfinite_error():
    with pytest.raises(ValidationError):
        w2sq_quantile_1d(lambda u: 1.0 / (u - u), lambda u: u, n_nodes=16)


def test_result_cost_consistency(rng):
    c = rng.random((5, 5))
    res = solve_assignment(c)
    recomputed = c[np.arange(5), res.perm].sum() / 5
    assert res.total_cost == pytest.approx(recomputed, rel=1e-10)
    assert isinstance(res, AssignmentResult)
