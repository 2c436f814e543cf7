import numpy as np
from scipy.optimize import linear_sum_assignment

from batchot import atomic_transport as engine


def random_instance(rng, k, m, d=2, n_sources=None):
    n = k if n_sources is None else n_sources
    xs = rng.normal(size=(n, d))
    atoms = rng.normal(size=(m, d))
    caps = np.bincount(rng.integers(0, m, size=k), minlength=m)
    costs = ((xs[:, None, :] - atoms[None, :, :]) ** 2).sum(-1)
    return costs, caps


def test_matches_scipy_on_expanded_matrix(rng):
    for _ in range(200):
        k = int(rng.integers(1, 13))
        m = int(rng.integers(1, 7))
        costs, caps = random_instance(rng, k, m)
        assign, total, u, v, used = engine.solve_transport(costs, caps)
        assert np.array_equal(np.bincount(assign, minlength=m), caps)
        sq = engine.expand_to_square(costs, caps)
        rows, cols = linear_sum_assignment(sq)
        assert abs(total - sq[rows, cols].sum()) < 1e-9


def test_dual_feasibility(rng):
    for _ in range(100):
        k = int(rng.integers(1, 10))
        m = int(rng.integers(1, 6))
        costs, caps = random_instance(rng, k, m)
        assign, total, u, v, used = engine.solve_transport(costs, caps)
        pos = caps > 0
        reduced = (costs - u[:, None] - v[None, :])[:, pos]
        assert reduced.min() > -1e-8
        slack = costs[np.arange(k), assign] - u - v[assign]
        assert np.allclose(slack, 0.0, atol=1e-8)


def test_query_agrees_with_full_resolve(rng):
    for _ in range(200):
        k = int(rng.integers(2, 12))
        m = int(rng.integers(1, 6))
        costs, caps = random_instance(rng, k, m, n_sources=k - 1)
        assign, total, u, v, used = engine.solve_transport(costs, caps)
        w = engine.build_swap_graph(costs, u, assign, m)
        x_costs = rng.normal(size=(1, m)) ** 2
        atom = engine.query_atoms(x_costs, v[None], w[None], (used < caps)[None],
                                  (caps > 0)[None])[0, 0]
        full = np.vstack([x_costs, costs])
        assign_full, total_full, *_ = engine.solve_transport(full, caps)
        # cost of forcing the queried atom must match the optimum (ties may
        # differ in the label, never in the cost)
        forced = total_full - full[0, assign_full[0]] + full[0, atom]
        assert abs(forced - total_full) < 1e-9


def test_batched_solver_matches_sequential(rng):
    b, k, m = 40, 7, 4
    costs = rng.random((b, k, m))
    caps = np.zeros((b, m), dtype=np.int64)
    for i in range(b):
        caps[i] = np.bincount(rng.integers(0, m, size=k), minlength=m)
    assigns, totals = engine.solve_transport_batch(costs, caps)
    for i in range(b):
        _, total, *_ = engine.solve_transport(costs[i], caps[i])
        assert abs(totals[i] - total) < 1e-10
        assert np.array_equal(np.bincount(assigns[i], minlength=m), caps[i])


def test_pool_contexts_and_freq_queries(rng):
    r, k, m = 30, 6, 3
    costs = rng.random((r, k - 1, m))
    caps = np.zeros((r, m), dtype=np.int64)
    for i in range(r):
        caps[i] = np.bincount(rng.integers(0, m, size=k), minlength=m)
    v, w, free, cap_pos = engine.build_pool_contexts(costs, caps)
    q = rng.random((5, m))
    atoms = engine.query_atoms(q, v, w, free, cap_pos)
    freqs = engine.query_freqs(q, v, w, free, cap_pos)
    hits = engine.query_hit_counts(q, np.arange(5) % m, v, w, free, cap_pos)
    for iq in range(5):
        counts = np.bincount(atoms[iq], minlength=m)
        assert np.array_equal(counts, freqs[iq])
        assert hits[iq] == counts[iq % m]


def test_empty_pool_context(rng):
    # k = 1 batches: no pool rows, the drawn column is the free one
    r, m = 10, 4
    caps = np.zeros((r, m), dtype=np.int64)
    drawn = rng.integers(0, m, size=r)
    caps[np.arange(r), drawn] = 1
    v, w, free, cap_pos = engine.build_pool_contexts(np.zeros((r, 0, m)), caps)
    q = rng.random((3, m))
    atoms = engine.query_atoms(q, v, w, free, cap_pos)
    assert np.array_equal(atoms, np.tile(drawn, (3, 1)))


def test_solver_call_counter(rng):
    engine.reset_solver_calls()
    costs, caps = random_instance(rng, 5, 3)
    engine.solve_transport(costs, caps)
    assert engine.solver_calls() == 5
