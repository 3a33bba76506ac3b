"""Hot inner loops: edit-distance DP, Jaro matching, Sinkhorn scaling.

Every kernel exists twice: an explicit-loop version compiled with numba and a
vectorised numpy version.  The public names at the bottom of the module pick
one according to :data:`ctxkd._accel.USE_NUMBA`; both variants stay importable
so tests and the benchmark can compare them directly.

Sequences are passed as ``int64`` code arrays (see :func:`encode_pair`).
"""

import numpy as np

from ._accel import USE_NUMBA, njit


def encode_pair(a, b):
    """Map two sequences of hashable items onto shared ``int64`` codes."""
    table = {}
    ca = np.fromiter((table.setdefault(x, len(table)) for x in a), dtype=np.int64, count=len(a))
    cb = np.fromiter((table.setdefault(x, len(table)) for x in b), dtype=np.int64, count=len(b))
    return ca, cb


# ---------------------------------------------------------------------------
# Levenshtein DP


def _edit_table_loop(a, b):
    n, m = a.shape[0], b.shape[0]
    d = np.empty((n + 1, m + 1), dtype=np.int64)
    for j in range(m + 1):
        d[0, j] = j
    for i in range(1, n + 1):
        d[i, 0] = i
        ai = a[i - 1]
        for j in range(1, m + 1):
            best = d[i - 1, j - 1] + (0 if ai == b[j - 1] else 1)
            dl = d[i - 1, j] + 1
            if dl < best:
                best = dl
            ins = d[i, j - 1] + 1
            if ins < best:
                best = ins
            d[i, j] = best
    return d


def _edit_table_numpy(a, b):
    n, m = a.shape[0], b.shape[0]
    d = np.empty((n + 1, m + 1), dtype=np.int64)
    d[0] = np.arange(m + 1)
    offs = np.arange(m + 1)
    for i in range(1, n + 1):
        prev = d[i - 1]
        cand = np.empty(m + 1, dtype=np.int64)
        cand[0] = i
        cand[1:] = np.minimum(prev[:-1] + (b != a[i - 1]), prev[1:] + 1)
        # insertion chain: row[j] = min_k<=j (cand[k] + j - k)
        d[i] = np.minimum.accumulate(cand - offs) + offs
    return d


def _edit_distance_loop(a, b):
    n, m = a.shape[0], b.shape[0]
    prev = np.arange(m + 1).astype(np.int64)
    cur = np.empty(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        cur[0] = i
        ai = a[i - 1]
        for j in range(1, m + 1):
            best = prev[j - 1] + (0 if ai == b[j - 1] else 1)
            dl = prev[j] + 1
            if dl < best:
                best = dl
            ins = cur[j - 1] + 1
            if ins < best:
                best = ins
            cur[j] = best
        prev, cur = cur, prev
    return prev[m]


def _edit_distance_numpy(a, b):
    return _edit_table_numpy(a, b)[-1, -1]


# ---------------------------------------------------------------------------
# Jaro matching


def _jaro_counts_loop(a, b):
    n, m = a.shape[0], b.shape[0]
    window = max(n, m) // 2 - 1
    if window < 0:
        window = 0
    a_hit = np.zeros(n, dtype=np.bool_)
    b_hit = np.zeros(m, dtype=np.bool_)
    matches = 0
    for i in range(n):
        lo = max(0, i - window)
        hi = min(m, i + window + 1)
        for j in range(lo, hi):
            if not b_hit[j] and a[i] == b[j]:
                a_hit[i] = True
                b_hit[j] = True
                matches += 1
                break
    half = 0
    k = 0
    for i in range(n):
        if a_hit[i]:
            while not b_hit[k]:
                k += 1
            if a[i] != b[k]:
                half += 1
            k += 1
    return matches, half


def _jaro_counts_numpy(a, b):
    n, m = a.shape[0], b.shape[0]
    window = max(max(n, m) // 2 - 1, 0)
    b_hit = np.zeros(m, dtype=bool)
    a_hit = np.zeros(n, dtype=bool)
    for i in range(n):
        lo, hi = max(0, i - window), min(m, i + window + 1)
        free = np.flatnonzero((b[lo:hi] == a[i]) & ~b_hit[lo:hi])
        if free.size:
            b_hit[lo + free[0]] = True
            a_hit[i] = True
    matches = int(a_hit.sum())
    half = int(np.count_nonzero(a[a_hit] != b[b_hit]))
    return matches, half


# ---------------------------------------------------------------------------
# Sinkhorn scaling
#
# Kernel domain iterates v = b / K^T u, u = a / K v.  Log domain iterates the
# dual potentials g, f with log-sum-exp reductions.  Both return the column
# marginal residual of the returned iterate (its rows hold exactly, having
# just been rescaled) and the number of completed iterations.


def _sinkhorn_kernel_loop(K, a, b, max_iters, tol):
    n, m = K.shape
    u = np.ones(n)
    v = np.ones(m)
    residual = np.inf
    it = 0
    while it < max_iters:
        it += 1
        for j in range(m):
            s = 0.0
            for i in range(n):
                s += K[i, j] * u[i]
            v[j] = b[j] / s
        for i in range(n):
            s = 0.0
            for j in range(m):
                s += K[i, j] * v[j]
            u[i] = a[i] / s
        residual = 0.0
        for j in range(m):
            s = 0.0
            for i in range(n):
                s += K[i, j] * u[i]
            r = abs(v[j] * s - b[j])
            if r > residual:
                residual = r
        if residual < tol:
            break
    return u, v, it, residual


def _sinkhorn_kernel_numpy(K, a, b, max_iters, tol):
    u = np.ones(K.shape[0])
    v = np.ones(K.shape[1])
    residual = np.inf
    it = 0
    while it < max_iters:
        it += 1
        v = b / (K.T @ u)
        u = a / (K @ v)
        residual = np.max(np.abs(v * (K.T @ u) - b))
        if residual < tol:
            break
    return u, v, it, residual


def _sinkhorn_log_loop(C, eps, a, b, max_iters, tol):
    n, m = C.shape
    Ce = C / eps
    log_a = np.log(a)
    log_b = np.log(b)
    f = np.zeros(n)
    g = np.zeros(m)
    g_new = np.empty(m)
    z = np.empty(max(n, m))
    residual = np.inf
    it = 0
    while True:
        # g update; the column sums of the current iterate fall out of it as
        # b_j * exp(g_j - g_new_j), so the residual costs nothing extra.
        for j in range(m):
            mx = -np.inf
            for i in range(n):
                z[i] = f[i] - Ce[i, j]
                if z[i] > mx:
                    mx = z[i]
            s = 0.0
            for i in range(n):
                s += np.exp(z[i] - mx)
            g_new[j] = log_b[j] - mx - np.log(s)
        if it > 0:
            residual = 0.0
            for j in range(m):
                r = abs(b[j] * (np.exp(g[j] - g_new[j]) - 1.0))
                if r > residual:
                    residual = r
            if residual < tol or it >= max_iters:
                break
        g[:] = g_new
        it += 1
        for i in range(n):
            mx = -np.inf
            for j in range(m):
                z[j] = g[j] - Ce[i, j]
                if z[j] > mx:
                    mx = z[j]
            s = 0.0
            for j in range(m):
                s += np.exp(z[j] - mx)
            f[i] = log_a[i] - mx - np.log(s)
    return eps * f, eps * g, it, residual


def _lse(z, axis):
    mx = np.max(z, axis=axis, keepdims=True)
    return np.squeeze(mx, axis=axis) + np.log(np.sum(np.exp(z - mx), axis=axis))


def _sinkhorn_log_numpy(C, eps, a, b, max_iters, tol):
    Ce = C / eps
    log_a, log_b = np.log(a), np.log(b)
    f = np.zeros(C.shape[0])
    g = np.zeros(C.shape[1])
    residual = np.inf
    it = 0
    while True:
        g_new = log_b - _lse(f[:, None] - Ce, axis=0)
        if it > 0:
            residual = np.max(np.abs(b * (np.exp(g - g_new) - 1.0)))
            if residual < tol or it >= max_iters:
                break
        g = g_new
        it += 1
        f = log_a - _lse(g[None, :] - Ce, axis=1)
    return eps * f, eps * g, it, residual


edit_table_numba = njit(_edit_table_loop)
edit_distance_numba = njit(_edit_distance_loop)
jaro_counts_numba = njit(_jaro_counts_loop)
sinkhorn_kernel_numba = njit(_sinkhorn_kernel_loop)
sinkhorn_log_numba = njit(_sinkhorn_log_loop)

edit_table_numpy = _edit_table_numpy
edit_distance_numpy = _edit_distance_numpy
jaro_counts_numpy = _jaro_counts_numpy
sinkhorn_kernel_numpy = _sinkhorn_kernel_numpy
sinkhorn_log_numpy = _sinkhorn_log_numpy

if USE_NUMBA:
    edit_table = edit_table_numba
    edit_distance = edit_distance_numba
    jaro_counts = jaro_counts_numba
    sinkhorn_kernel = sinkhorn_kernel_numba
    sinkhorn_log = sinkhorn_log_numba
else:
    edit_table = edit_table_numpy
    edit_distance = edit_distance_numpy
    jaro_counts = jaro_counts_numpy
    sinkhorn_kernel = sinkhorn_kernel_numpy
    sinkhorn_log = sinkhorn_log_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
