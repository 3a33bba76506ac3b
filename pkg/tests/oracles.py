"""Independent brute-force oracles used by the test-suite.

None of these share code with the package under test.
"""

import itertools
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def _tree_solvers(n, m):
    """Every spanning-tree support of the n x m transport graph with its solve map.

    Each vertex of the transport polytope is the unique solution supported on a
    spanning tree of K_{n,m}.  For each tree we precompute the linear map
    (a, b) -> flows on the tree's cells.
    """
    cells = [(i, j) for i in range(n) for j in range(m)]
    k = n + m - 1
    supports, maps = [], []
    # constraint matrix rows: n row sums then m column sums
    for subset in itertools.combinations(range(len(cells)), k):
        parent = list(range(n + m))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        ok = True
        for c in subset:
            i, j = cells[c]
            ri, rj = find(i), find(n + j)
            if ri == rj:
                ok = False
                break
            parent[ri] = rj
        if not ok:
            continue
        A = np.zeros((n + m, k))
        for col, c in enumerate(subset):
            i, j = cells[c]
            A[i, col] = 1.0
            A[n + j, col] = 1.0
        supports.append(subset)
        maps.append(np.linalg.pinv(A))
    return cells, np.array(supports), np.array(maps)


def lp_transport(C, a, b):
    """Exact optimal transport cost and plan by vertex enumeration (n, m <= 4)."""
    C = np.asarray(C, dtype=float)
    n, m = C.shape
    cells, supports, maps = _tree_solvers(n, m)
    rhs = np.concatenate([a, b])
    flows = maps @ rhs                       # (n_trees, k)
    feasible = np.all(flows >= -1e-12, axis=1)
    flat = C.reshape(-1)
    costs = np.sum(flows * flat[supports], axis=1)
    costs[~feasible] = np.inf
    best = int(np.argmin(costs))
    P = np.zeros(n * m)
    P[supports[best]] = np.clip(flows[best], 0.0, None)
    return float(costs[best]), P.reshape(n, m)


def matmul_loops(A, B):
    n, k = len(A), len(A[0])
    m = len(B[0])
    out = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += A[i][t] * B[t][j]
            out[i][j] = s
    return np.array(out)


def levenshtein_recursive(a, b):
    """Plain memoised recursion over prefixes."""
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def jaro_winkler_reference(s1, s2, p=0.1):
    """Textbook Jaro-Winkler written directly from the definition."""
    if s1 == s2:
        return 1.0
    if not s1 or not s2:
        return 0.0
    window = max(max(len(s1), len(s2)) // 2 - 1, 0)
    used = [False] * len(s2)
    m1 = []
    for i, ch in enumerate(s1):
        for j in range(max(0, i - window), min(len(s2), i + window + 1)):
            if not used[j] and s2[j] == ch:
                used[j] = True
                m1.append(ch)
                break
    m2 = [s2[j] for j in range(len(s2)) if used[j]]
    m = len(m1)
    if m == 0:
        return 0.0
    t = sum(x != y for x, y in zip(m1, m2)) / 2
    jaro = (m / len(s1) + m / len(s2) + (m - t) / m) / 3
    prefix = 0
    for x, y in zip(s1, s2):
        if x != y or prefix == 4:
            break
        prefix += 1
    return jaro + prefix * p * (1 - jaro)
