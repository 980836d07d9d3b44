"""Hot loops: PEG edge placement and erasure peeling.

Each kernel has a numba path (plain loops, compiled with ``njit``) and a
pure-numpy path that vectorises over BFS levels or peeling rounds. The two
paths are required to agree exactly; ``tests/test_kernels.py`` checks that.

Adjacency is stored in padded arrays: ``chk_adj[c, :chk_deg[c]]`` are the
variables in check ``c`` and ``var_adj[v, :var_deg[v]]`` are the checks on
variable ``v``. Unused slots hold -1.
"""
import numpy as np
import scipy.sparse as sp

from mdpcfl import _accel
from mdpcfl._accel import njit

_FAR = 1 << 40


# ---------------------------------------------------------------------------
# PEG
# ---------------------------------------------------------------------------

@njit
def _add_edge(c, v, chk_adj, chk_deg, var_adj, var_deg):
    chk_adj[c, chk_deg[c]] = v
    chk_deg[c] += 1
    var_adj[v, var_deg[v]] = c
    var_deg[v] += 1


@njit
def _remove_edge(c, v, chk_adj, chk_deg, var_adj, var_deg):
    for s in range(chk_deg[c]):
        if chk_adj[c, s] == v:
            chk_deg[c] -= 1
            chk_adj[c, s] = chk_adj[c, chk_deg[c]]
            chk_adj[c, chk_deg[c]] = -1
            break
    for s in range(var_deg[v]):
        if var_adj[v, s] == c:
            var_deg[v] -= 1
            var_adj[v, s] = var_adj[v, var_deg[v]]
            var_adj[v, var_deg[v]] = -1
            break


@njit
def _adjacent(c, v, var_adj, var_deg):
    for s in range(var_deg[v]):
        if var_adj[v, s] == c:
            return True
    return False


@njit
def _repair(v, dc, chk_adj, chk_deg, var_adj, var_deg):
    # Every check with spare capacity already touches v. Move one edge (c2, w)
    # onto a spare check so that c2 frees a slot v can use.
    r = chk_adj.shape[0]
    for c_spare in range(r):
        if chk_deg[c_spare] >= dc:
            continue
        for c2 in range(r):
            if chk_deg[c2] != dc or _adjacent(c2, v, var_adj, var_deg):
                continue
            for s in range(chk_deg[c2]):
                w = chk_adj[c2, s]
                if not _adjacent(c_spare, w, var_adj, var_deg):
                    _remove_edge(c2, w, chk_adj, chk_deg, var_adj, var_deg)
                    _add_edge(c_spare, w, chk_adj, chk_deg, var_adj, var_deg)
                    return c2
    return -1


@njit
def _bfs_levels_numba(v, chk_adj, chk_deg, var_adj, var_deg, level, chk_stamp, var_stamp, stamp, fa, fb):
    r = chk_adj.shape[0]
    nf = 0
    for s in range(var_deg[v]):
        c = var_adj[v, s]
        chk_stamp[c] = stamp
        level[c] = 0
        fa[nf] = c
        nf += 1
    var_stamp[v] = stamp
    seen = nf
    depth = 0
    while nf > 0 and seen < r:
        nn = 0
        for i in range(nf):
            c = fa[i]
            for s in range(chk_deg[c]):
                u = chk_adj[c, s]
                if var_stamp[u] == stamp:
                    continue
                var_stamp[u] = stamp
                for q in range(var_deg[u]):
                    c2 = var_adj[u, q]
                    if chk_stamp[c2] != stamp:
                        chk_stamp[c2] = stamp
                        level[c2] = depth + 1
                        fb[nn] = c2
                        nn += 1
                        seen += 1
                        if seen == r:
                            return
        depth += 1
        for i in range(nn):
            fa[i] = fb[i]
        nf = nn


@njit
def peg_numba(n, r, dc, var_target, prio):
    dv_max = var_target.max()
    chk_adj = -np.ones((r, dc), dtype=np.int64)
    var_adj = -np.ones((n, dv_max), dtype=np.int64)
    chk_deg = np.zeros(r, dtype=np.int64)
    var_deg = np.zeros(n, dtype=np.int64)
    level = np.zeros(r, dtype=np.int64)
    chk_stamp = np.zeros(r, dtype=np.int64)
    var_stamp = np.zeros(n, dtype=np.int64)
    fa = np.empty(r, dtype=np.int64)
    fb = np.empty(r, dtype=np.int64)
    stamp = 0
    for v in range(n):
        for _ in range(var_target[v]):
            stamp += 1
            _bfs_levels_numba(v, chk_adj, chk_deg, var_adj, var_deg, level, chk_stamp, var_stamp, stamp, fa, fb)
            best = -1
            best_dist = -1
            for c in range(r):
                if chk_deg[c] >= dc:
                    continue
                if chk_stamp[c] == stamp:
                    dist = level[c]
                    if dist == 0:
                        continue
                else:
                    dist = _FAR
                if best < 0 or dist > best_dist or (
                    dist == best_dist
                    and (chk_deg[c] < chk_deg[best] or (chk_deg[c] == chk_deg[best] and prio[c] < prio[best]))
                ):
                    best = c
                    best_dist = dist
            if best < 0:
                best = _repair(v, dc, chk_adj, chk_deg, var_adj, var_deg)
                if best < 0:
                    raise ValueError("PEG could not place an edge")
            _add_edge(best, v, chk_adj, chk_deg, var_adj, var_deg)
    return chk_adj, chk_deg, var_adj, var_deg


def _bfs_levels_numpy(v, chk_adj, var_adj, var_deg):
    r = chk_adj.shape[0]
    level = np.full(r, -1, dtype=np.int64)
    frontier = var_adj[v, : var_deg[v]]
    level[frontier] = 0
    var_seen = np.zeros(var_adj.shape[0], dtype=bool)
    var_seen[v] = True
    seen = frontier.size
    depth = 0
    while frontier.size and seen < r:
        us = chk_adj[frontier].ravel()
        us = np.unique(us[us >= 0])
        us = us[~var_seen[us]]
        var_seen[us] = True
        cs = var_adj[us].ravel()
        cs = np.unique(cs[cs >= 0])
        cs = cs[level[cs] < 0]
        depth += 1
        level[cs] = depth
        seen += cs.size
        frontier = cs
    return level


def peg_numpy(n, r, dc, var_target, prio):
    dv_max = int(var_target.max())
    chk_adj = -np.ones((r, dc), dtype=np.int64)
    var_adj = -np.ones((n, dv_max), dtype=np.int64)
    chk_deg = np.zeros(r, dtype=np.int64)
    var_deg = np.zeros(n, dtype=np.int64)
    for v in range(n):
        for _ in range(int(var_target[v])):
            level = _bfs_levels_numpy(v, chk_adj, var_adj, var_deg)
            dist = np.where(level < 0, _FAR, level)
            ok = (chk_deg < dc) & (level != 0)
            if ok.any():
                cand = ok & (dist == dist[ok].max())
                cand &= chk_deg == chk_deg[cand].min()
                idx = np.flatnonzero(cand)
                best = int(idx[np.argmin(prio[idx])])
            else:
                # py_func keeps the repair logic shared with the compiled path.
                best = getattr(_repair, "py_func", _repair)(v, dc, chk_adj, chk_deg, var_adj, var_deg)
                if best < 0:
                    raise ValueError("PEG could not place an edge")
            chk_adj[best, chk_deg[best]] = v
            chk_deg[best] += 1
            var_adj[v, var_deg[v]] = best
            var_deg[v] += 1
    return chk_adj, chk_deg, var_adj, var_deg


def peg(n, r, dc, var_target, prio, backend=None):
    """Place all edges; returns ``(chk_adj, chk_deg, var_adj, var_deg)``."""
    backend = backend or _accel.backend_name()
    var_target = np.ascontiguousarray(var_target, dtype=np.int64)
    prio = np.ascontiguousarray(prio, dtype=np.int64)
    if backend == "numba":
        return peg_numba(int(n), int(r), int(dc), var_target, prio)
    return peg_numpy(int(n), int(r), int(dc), var_target, prio)


# ---------------------------------------------------------------------------
# Peeling (success/failure only; used for FER)
# ---------------------------------------------------------------------------

@njit
def _peel_one_numba(chk_adj, chk_deg, var_adj, var_deg, erased, count, flag, stack):
    for i in range(erased.shape[0]):
        v = erased[i]
        flag[v] = 1
        for s in range(var_deg[v]):
            count[var_adj[v, s]] += 1
    top = 0
    for i in range(erased.shape[0]):
        v = erased[i]
        for s in range(var_deg[v]):
            c = var_adj[v, s]
            if count[c] == 1:
                stack[top] = c
                top += 1
    remaining = erased.shape[0]
    while top > 0:
        top -= 1
        c = stack[top]
        if count[c] != 1:
            continue
        for s in range(chk_deg[c]):
            u = chk_adj[c, s]
            if flag[u] == 1:
                flag[u] = 0
                remaining -= 1
                for q in range(var_deg[u]):
                    c2 = var_adj[u, q]
                    count[c2] -= 1
                    if count[c2] == 1:
                        stack[top] = c2
                        top += 1
                break
    for i in range(erased.shape[0]):
        v = erased[i]
        flag[v] = 0
        for s in range(var_deg[v]):
            count[var_adj[v, s]] = 0
    return remaining == 0


@njit
def peel_failures_numba(chk_adj, chk_deg, var_adj, var_deg, patterns):
    r = chk_adj.shape[0]
    n = var_adj.shape[0]
    count = np.zeros(r, dtype=np.int64)
    flag = np.zeros(n, dtype=np.int8)
    stack = np.empty(r + patterns.shape[1] * var_adj.shape[1] + 1, dtype=np.int64)
    out = np.zeros(patterns.shape[0], dtype=np.bool_)
    for t in range(patterns.shape[0]):
        out[t] = not _peel_one_numba(chk_adj, chk_deg, var_adj, var_deg, patterns[t], count, flag, stack)
    return out


def _incidence_csc(chk_adj, chk_deg, n):
    rows = np.repeat(np.arange(chk_adj.shape[0]), chk_deg)
    cols = chk_adj[chk_adj >= 0]
    # chk_adj >= 0 walks row-major, matching np.repeat above.
    return sp.csc_matrix((np.ones(cols.size, dtype=np.int64), (rows, cols)), shape=(chk_adj.shape[0], n))


def peel_failures_numpy(chk_adj, chk_deg, var_adj, var_deg, patterns):
    h = _incidence_csc(chk_adj, chk_deg, var_adj.shape[0])
    out = np.zeros(patterns.shape[0], dtype=bool)
    for t in range(patterns.shape[0]):
        he = h[:, patterns[t]]
        het = he.T.tocsr()
        alive = np.ones(patterns.shape[1], dtype=np.int64)
        counts = he @ alive
        while alive.any():
            deg1 = (counts == 1).astype(np.int64)
            hit = ((het @ deg1) > 0) & (alive == 1)
            if not hit.any():
                break
            alive[hit] = 0
            counts -= he @ hit.astype(np.int64)
        out[t] = bool(alive.any())
    return out


def peel_failures(chk_adj, chk_deg, var_adj, var_deg, patterns, backend=None):
    """Boolean failure flag per erasure pattern (rows of ``patterns``)."""
    backend = backend or _accel.backend_name()
    patterns = np.ascontiguousarray(patterns, dtype=np.int64)
    if patterns.ndim != 2:
        raise ValueError("patterns must be 2-D")
    if patterns.shape[1] == 0:
        return np.zeros(patterns.shape[0], dtype=bool)
    if backend == "numba":
        return peel_failures_numba(chk_adj, chk_deg, var_adj, var_deg, patterns)
    return peel_failures_numpy(chk_adj, chk_deg, var_adj, var_deg, patterns)
