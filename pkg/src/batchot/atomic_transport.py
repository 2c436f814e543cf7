"""Exact transport from k points onto M capacitated atom columns.

A batch OT instance with atom-supported targets is an assignment problem
whose cost matrix has only M distinct columns (each drawn atom index
repeats). Collapsing duplicates gives a k x M transportation problem, which
this module solves by successive shortest augmenting paths with column
potentials: inserting one source row costs a Dijkstra over the M columns
plus a scan of the rows that might swap columns, O(k*M) per row worst case.
Matched costs agree with the expanded k x k assignment exactly (tested
against scipy and brute force).

Two extra pieces serve the Monte-Carlo velocity estimator:

* ``build_swap_graph`` condenses an optimal pool solution into an M x M
  matrix W, where W[a, b] is the cheapest dual-adjusted cost of moving one
  of column a's rows to column b.
* ``query_freqs`` answers "which atom would source point x be matched to if
  it joined the pool?" for many points and many replica pools at once,
  read-only, by running Dijkstra on the condensed graph. Each answer is the
  first hop of the shortest augmenting path from x to residual capacity,
  which is exactly x's column in the optimal augmented solution.

Dual conventions: row duals u, column potentials v, reduced cost
c[i, j] - u[i] - v[j] >= 0 with equality on assigned pairs.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

__all__ = [
    "solve_transport",
    "solve_transport_batch",
    "build_swap_graph",
    "build_pool_contexts",
    "query_freqs",
    "query_atoms",
    "query_hit_counts",
    "expand_to_square",
    "solver_calls",
    "add_solver_calls",
    "reset_solver_calls",
]

_INF = np.inf

# Budget-honesty counter: one unit per row insertion or per point query.
_SOLVER_CALLS = 0


def solver_calls() -> int:
    return _SOLVER_CALLS


def add_solver_calls(n: int) -> None:
    global _SOLVER_CALLS
    _SOLVER_CALLS += int(n)


def reset_solver_calls() -> None:
    global _SOLVER_CALLS
    _SOLVER_CALLS = 0


@njit(cache=True)
def _insert_row(costs, caps, assign, u, v, used, r,
                dist, done, pred_col, pred_row):
    """Augment the current optimal solution with source row r."""
    n, m = costs.shape
    for j in range(m):
        done[j] = False
        pred_col[j] = -1
        pred_row[j] = -1
        if caps[j] > 0:
            dist[j] = costs[r, j] - v[j]
        else:
            dist[j] = _INF

    j_free = -1
    delta = 0.0
    while True:
        # pick the cheapest unscanned column
        jbest = -1
        dbest = _INF
        for j in range(m):
            if not done[j] and dist[j] < dbest:
                dbest = dist[j]
                jbest = j
        j_star = jbest
        if used[j_star] < caps[j_star]:
            j_free = j_star
            delta = dist[j_star]
            break
        done[j_star] = True
        # relax through every row currently assigned to j_star
        for i in range(n):
            if assign[i] != j_star:
                continue
            base = dist[j_star] - u[i]
            for j in range(m):
                if done[j] or caps[j] == 0:
                    continue
                nd = base + costs[i, j] - v[j]
                if nd < dist[j]:
                    dist[j] = nd
                    pred_col[j] = j_star
                    pred_row[j] = i

    # dual update keeps reduced costs nonnegative and zero along the path
    for j in range(m):
        if done[j]:
            adj = dist[j] - delta
            v[j] += adj
            for i in range(n):
                if assign[i] == j:
                    u[i] -= adj

    # move displaced rows along the augmenting path, then place r
    j = j_free
    while pred_col[j] != -1:
        i = pred_row[j]
        assign[i] = j
        j = pred_col[j]
    assign[r] = j
    u[r] = delta
    used[j_free] += 1


@njit(cache=True)
def _solve_rows(costs, caps, assign, u, v, used):
    n, m = costs.shape
    dist = np.empty(m, dtype=np.float64)
    done = np.empty(m, dtype=np.bool_)
    pred_col = np.empty(m, dtype=np.int64)
    pred_row = np.empty(m, dtype=np.int64)
    for r in range(n):
        _insert_row(costs, caps, assign, u, v, used, r,
                    dist, done, pred_col, pred_row)
    total = 0.0
    for i in range(n):
        total += costs[i, assign[i]]
    return total


def solve_transport(costs: np.ndarray, caps: np.ndarray):
    """Optimal transport of n unit sources onto capacitated columns.

    Parameters
    ----------
    costs : (n, M) array
        costs[i, j] = cost of sending source i to column j.
    caps : (M,) int array
        Column capacities, sum(caps) >= n.

    Returns
    -------
    assign : (n,) int array of column indices
    total : float, summed matched cost
    u, v : optimal row duals and column potentials
    used : (M,) units consumed per column
    """
    costs = np.ascontiguousarray(costs, dtype=np.float64)
    caps = np.ascontiguousarray(caps, dtype=np.int64)
    n, m = costs.shape
    if caps.sum() < n:
        raise ValueError("total capacity below number of sources")
    assign = np.full(n, -1, dtype=np.int64)
    u = np.zeros(n, dtype=np.float64)
    v = np.zeros(m, dtype=np.float64)
    used = np.zeros(m, dtype=np.int64)
    total = _solve_rows(costs, caps, assign, u, v, used)
    add_solver_calls(n)
    return assign, float(total), u, v, used


@njit(cache=True, parallel=True)
def _solve_batch_kernel(costs, caps, assigns, totals):
    b = costs.shape[0]
    n = costs.shape[1]
    m = costs.shape[2]
    for ib in prange(b):
        u = np.zeros(n, dtype=np.float64)
        v = np.zeros(m, dtype=np.float64)
        used = np.zeros(m, dtype=np.int64)
        totals[ib] = _solve_rows(costs[ib], caps[ib], assigns[ib], u, v, used)


def solve_transport_batch(costs: np.ndarray, caps: np.ndarray):
    """Solve many independent transportation problems in parallel.

    costs: (B, k, M), caps: (B, M). Returns (assigns (B, k), totals (B,)).
    """
    costs = np.ascontiguousarray(costs, dtype=np.float64)
    caps = np.ascontiguousarray(caps, dtype=np.int64)
    b, k, _ = costs.shape
    assigns = np.full((b, k), -1, dtype=np.int64)
    totals = np.empty(b, dtype=np.float64)
    _solve_batch_kernel(costs, caps, assigns, totals)
    add_solver_calls(b * k)
    return assigns, totals


@njit(cache=True)
def _swap_graph(costs, u, assign, m):
    w = np.full((m, m), _INF, dtype=np.float64)
    n = costs.shape[0]
    for i in range(n):
        a = assign[i]
        ui = u[i]
        for j in range(m):
            c = costs[i, j] - ui
            if c < w[a, j]:
                w[a, j] = c
    return w


def build_swap_graph(costs: np.ndarray, u: np.ndarray, assign: np.ndarray, m: int) -> np.ndarray:
    """Condensed column-to-column residual costs of an optimal pool solution."""
    return _swap_graph(np.ascontiguousarray(costs, dtype=np.float64),
                       np.ascontiguousarray(u, dtype=np.float64),
                       np.ascontiguousarray(assign, dtype=np.int64), m)


@njit(cache=True, parallel=True)
def _build_pools_kernel(costs, caps, v_out, w_out, free_out):
    b = costs.shape[0]
    n = costs.shape[1]
    m = costs.shape[2]
    for ib in prange(b):
        assign = np.full(n, -1, dtype=np.int64)
        u = np.zeros(n, dtype=np.float64)
        v = np.zeros(m, dtype=np.float64)
        used = np.zeros(m, dtype=np.int64)
        _solve_rows(costs[ib], caps[ib], assign, u, v, used)
        w_out[ib] = _swap_graph(costs[ib], u, assign, m)
        for j in range(m):
            v_out[ib, j] = v[j]
            free_out[ib, j] = used[j] < caps[ib, j]


def build_pool_contexts(costs: np.ndarray, caps: np.ndarray):
    """Solve R pool problems and condense each into query form.

    costs: (R, n, M) pool-to-column costs, caps: (R, M). Returns
    (v (R, M), w (R, M, M), free (R, M), cap_pos (R, M)) ready for
    :func:`query_freqs` / :func:`query_atoms`. n = 0 pools (k = 1 batches)
    are valid: every positive-capacity column is then free.
    """
    costs = np.ascontiguousarray(costs, dtype=np.float64)
    caps = np.ascontiguousarray(caps, dtype=np.int64)
    r, n, m = costs.shape
    cap_pos = caps > 0
    if n == 0:
        v = np.zeros((r, m), dtype=np.float64)
        w = np.full((r, m, m), _INF, dtype=np.float64)
        return v, w, cap_pos.copy(), cap_pos
    v = np.zeros((r, m), dtype=np.float64)
    w = np.empty((r, m, m), dtype=np.float64)
    free = np.zeros((r, m), dtype=np.bool_)
    _build_pools_kernel(costs, caps, v, w, free)
    add_solver_calls(r * n)
    return v, w, free, cap_pos


@njit(cache=True)
def _query_one(qc, v, w, free, cap_pos, dist, root, done):
    """Matched column for one query point against one pool; read-only."""
    m = qc.shape[0]
    for j in range(m):
        done[j] = False
        root[j] = j
        if cap_pos[j]:
            dist[j] = qc[j] - v[j]
        else:
            dist[j] = _INF
    while True:
        jbest = -1
        dbest = _INF
        for j in range(m):
            if not done[j] and dist[j] < dbest:
                dbest = dist[j]
                jbest = j
        if free[jbest]:
            return root[jbest]
        done[jbest] = True
        base = dist[jbest]
        for j in range(m):
            if done[j] or not cap_pos[j]:
                continue
            nd = base + w[jbest, j] - v[j]
            if nd < dist[j]:
                dist[j] = nd
                root[j] = root[jbest]


@njit(cache=True, parallel=True)
def _query_freqs_kernel(qcosts, v, w, free, cap_pos, out_counts):
    q = qcosts.shape[0]
    r = v.shape[0]
    m = qcosts.shape[1]
    for iq in prange(q):
        dist = np.empty(m, dtype=np.float64)
        root = np.empty(m, dtype=np.int64)
        done = np.empty(m, dtype=np.bool_)
        for ir in range(r):
            atom = _query_one(qcosts[iq], v[ir], w[ir], free[ir], cap_pos[ir],
                              dist, root, done)
            out_counts[iq, atom] += 1


@njit(cache=True, parallel=True)
def _query_atoms_kernel(qcosts, v, w, free, cap_pos, out_atoms):
    q = qcosts.shape[0]
    r = v.shape[0]
    m = qcosts.shape[1]
    for iq in prange(q):
        dist = np.empty(m, dtype=np.float64)
        root = np.empty(m, dtype=np.int64)
        done = np.empty(m, dtype=np.bool_)
        for ir in range(r):
            out_atoms[iq, ir] = _query_one(qcosts[iq], v[ir], w[ir], free[ir],
                                           cap_pos[ir], dist, root, done)


def query_freqs(qcosts, v, w, free, cap_pos) -> np.ndarray:
    """Counts (Q, M): how often each query point is matched to each column.

    qcosts: (Q, M) query-to-column costs; v, free, cap_pos: (R, M) per-replica
    potentials, residual-capacity and positive-capacity masks; w: (R, M, M).
    """
    q, m = qcosts.shape
    out = np.zeros((q, m), dtype=np.int64)
    _query_freqs_kernel(np.ascontiguousarray(qcosts, dtype=np.float64),
                        v, w, free, cap_pos, out)
    add_solver_calls(q * v.shape[0])
    return out


def query_atoms(qcosts, v, w, free, cap_pos) -> np.ndarray:
    """Matched column per (query, replica): (Q, R) int array."""
    q = qcosts.shape[0]
    r = v.shape[0]
    out = np.empty((q, r), dtype=np.int64)
    _query_atoms_kernel(np.ascontiguousarray(qcosts, dtype=np.float64),
                        v, w, free, cap_pos, out)
    add_solver_calls(q * r)
    return out


@njit(cache=True, parallel=True)
def _query_hits_kernel(qcosts, hit_col, v, w, free, cap_pos, out_hits):
    q = qcosts.shape[0]
    r = v.shape[0]
    m = qcosts.shape[1]
    for iq in prange(q):
        dist = np.empty(m, dtype=np.float64)
        root = np.empty(m, dtype=np.int64)
        done = np.empty(m, dtype=np.bool_)
        target = hit_col[iq]
        hits = 0
        for ir in range(r):
            atom = _query_one(qcosts[iq], v[ir], w[ir], free[ir], cap_pos[ir],
                              dist, root, done)
            if atom == target:
                hits += 1
        out_hits[iq] = hits


def query_hit_counts(qcosts, hit_col, v, w, free, cap_pos) -> np.ndarray:
    """Per query, count replicas whose matched column equals hit_col[q]."""
    q = qcosts.shape[0]
    out = np.zeros(q, dtype=np.int64)
    _query_hits_kernel(np.ascontiguousarray(qcosts, dtype=np.float64),
                       np.ascontiguousarray(hit_col, dtype=np.int64),
                       v, w, free, cap_pos, out)
    add_solver_calls(q * v.shape[0])
    return out


def expand_to_square(costs: np.ndarray, caps: np.ndarray) -> np.ndarray:
    """Expand (n, M) costs to the equivalent square assignment matrix.

    Column j repeats caps[j] times; requires sum(caps) == n. Test helper for
    cross-checking against generic k x k solvers.
    """
    n = costs.shape[0]
    cols = np.repeat(np.arange(costs.shape[1]), caps)
    if cols.shape[0] != n:
        raise ValueError("sum(caps) must equal the number of sources")
    return costs[:, cols]
