"""Optimal and K-best (Murty) linear assignment."""
from __future__ import annotations

import heapq
import itertools

import numpy as np
from scipy.optimize import linear_sum_assignment

# stand-in for forbidden entries; anything at or above this is infeasible
BIG = 1e15


def _solve(cost: np.ndarray):
    """Min-cost full row assignment; returns (cols, total) or None if infeasible."""
    c = np.where(np.isfinite(cost), cost, BIG)
    rows, cols = linear_sum_assignment(c)
    if np.any(c[rows, cols] >= BIG):
        return None
    return cols, float(cost[rows, cols].sum())


def assignment_solve(cost, lexicographic: bool = True) -> tuple[list[tuple[int, int]], float]:
    """Optimal 1-1 assignment of min(n, m) pairs minimizing total cost.

    Among equally optimal assignments the lexicographically smallest list of
    (row, col) pairs is returned unless ``lexicographic`` is False, in which
    case any optimum is returned (cheaper; the total is the same).
    """
    cost = np.asarray(cost, float)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    n, m = cost.shape
    if n == 0 or m == 0:
        return [], 0.0
    transposed = n > m
    c = cost.T if transposed else cost
    rows, cols = linear_sum_assignment(c)
    best = float(c[rows, cols].sum())
    if not lexicographic:
        pairs = sorted((j, i) for i, j in zip(rows, cols)) if transposed \
            else sorted(zip(rows.tolist(), cols.tolist()))
        return [(int(i), int(j)) for i, j in pairs], best
    tol = 1e-9 * max(1.0, abs(best))
    # greedy lexicographic refinement: fix each row to the smallest column
    # that still admits an optimal completion
    work = c.copy()
    fixed: dict[int, int] = {}
    for i in range(c.shape[0]):
        for j in range(c.shape[1]):
            if j in fixed.values():
                continue
            trial = work.copy()
            trial[i, :] = np.inf
            trial[:, j] = np.inf
            trial[i, j] = c[i, j]
            sol = _solve(trial)
            if sol is not None and sol[1] <= best + tol:
                fixed[i] = j
                work = trial
                break
    pairs = [(j, i) for i, j in fixed.items()] if transposed else list(fixed.items())
    pairs.sort()
    total = float(sum(cost[i, j] for i, j in pairs))
    return pairs, total


def murty(cost, k: int) -> list[tuple[np.ndarray, float]]:
    """K lowest-cost full row assignments of an n x m matrix (n <= m).

    ``inf`` entries are forbidden.  Returns (column per row, cost) pairs in
    ascending cost order; fewer than ``k`` when fewer feasible solutions exist.
    """
    cost = np.asarray(cost, float)
    n = cost.shape[0]
    if n == 0:
        return [(np.zeros(0, np.int64), 0.0)]
    first = _solve(cost)
    if first is None:
        return []
    counter = itertools.count()
    heap = [(first[1], next(counter), first[0], cost)]
    out = []
    while heap and len(out) < k:
        total, _, cols, problem = heapq.heappop(heap)
        out.append((cols, total))
        if len(out) == k:
            break
        sub = problem.copy()
        for i in range(n):
            j = cols[i]
            child = sub.copy()
            child[i, j] = np.inf
            sol = _solve(child)
            if sol is not None:
                heapq.heappush(heap, (sol[1], next(counter), sol[0], child))
            # force (i, j) for the remaining partitions
            keep = sub[i, j]
            sub[i, :] = np.inf
            sub[:, j] = np.inf
            sub[i, j] = keep
    return out
