"""Primal network simplex on the bipartite transportation graph.

Row nodes are ``0..n-1`` and column nodes ``n..n+m-1``.  The basis is a
spanning tree of ``n + m - 1`` cells stored in parallel arrays, with
parent pointers and per-node linked lists of incident tree cells.  A pivot
re-hangs only the subtree cut off by the leaving cell.
"""

import numpy as np
from numba import njit

DANTZIG = 0
BLOCK = 1

OPTIMAL = 0
MAX_ITER = 1


@njit(cache=True, nogil=True)
def _nwc_basis(a, b):
    n, m = a.shape[0], b.shape[0]
    R = n + m - 1
    bi = np.empty(R, np.int64)
    bj = np.empty(R, np.int64)
    flow = np.empty(R)
    ra = a.copy()
    rb = b.copy()
    i = 0
    j = 0
    for s in range(R):
        v = min(ra[i], rb[j])
        if v < 0.0:
            v = 0.0
        bi[s] = i
        bj[s] = j
        flow[s] = v
        ra[i] -= v
        rb[j] -= v
        if s == R - 1:
            break
        # exactly one pointer moves per step so the cells form a spanning tree
        if j == m - 1 or (i < n - 1 and ra[i] <= rb[j]):
            i += 1
        else:
            j += 1
    return bi, bj, flow


@njit(cache=True, nogil=True)
def _find(uf, x):
    while uf[x] != x:
        uf[x] = uf[uf[x]]
        x = uf[x]
    return x


@njit(cache=True, nogil=True)
def _greedy_pass(order, m, n, ra, rb, uf, used, bi, bj, flow, s, R):
    for t in range(order.shape[0]):
        if s == R:
            break
        c = order[t]
        i = c // m
        j = c - i * m
        if ra[i] <= 0.0 or rb[j] <= 0.0:
            continue
        ri = _find(uf, i)
        rj = _find(uf, n + j)
        if ri == rj:
            continue
        v = min(ra[i], rb[j])
        ra[i] -= v
        rb[j] -= v
        uf[ri] = rj
        bi[s] = i
        bj[s] = j
        flow[s] = v
        used[c] = True
        s += 1
    return s


@njit(cache=True, nogil=True)
def _link_pass(order, m, n, uf, used, bi, bj, s, R):
    for t in range(order.shape[0]):
        if s == R:
            break
        c = order[t]
        if used[c]:
            continue
        i = c // m
        j = c - i * m
        ri = _find(uf, i)
        rj = _find(uf, n + j)
        if ri == rj:
            continue
        uf[ri] = rj
        bi[s] = i
        bj[s] = j
        s += 1
    return s


@njit(cache=True, nogil=True)
def _greedy_basis(a, b, M):
    """Matrix-minimum start completed to a spanning tree with zero cells.

    Each greedy assignment exhausts a row or a column, so the positive cells
    form a forest; the second pass links its components with the cheapest
    zero-flow cells, Kruskal style.  Cells are visited in stable cost order,
    but only the cheapest few multiples of ``n + m`` are sorted up front;
    the rest is sorted only if the greedy pass runs out of them.
    """
    n, m = a.shape[0], b.shape[0]
    N = n + m
    R = N - 1
    flat = M.ravel()
    total = flat.shape[0]
    k = min(total, 8 * N)
    if k < total:
        thr = np.partition(flat.copy(), k - 1)[k - 1]
        head = np.nonzero(flat <= thr)[0]
        tail = np.nonzero(flat > thr)[0]
    else:
        head = np.arange(total)
        tail = np.empty(0, np.int64)
    head = head[np.argsort(flat[head], kind="mergesort")]
    tail_sorted = False
    bi = np.empty(R, np.int64)
    bj = np.empty(R, np.int64)
    flow = np.zeros(R)
    uf = np.arange(N)
    ra = a.copy()
    rb = b.copy()
    used = np.zeros(total, np.bool_)
    s = _greedy_pass(head, m, n, ra, rb, uf, used, bi, bj, flow, 0, R)
    if s < R and tail.shape[0] > 0:
        tail = tail[np.argsort(flat[tail], kind="mergesort")]
        tail_sorted = True
        s = _greedy_pass(tail, m, n, ra, rb, uf, used, bi, bj, flow, s, R)
    if s < R:
        s = _link_pass(head, m, n, uf, used, bi, bj, s, R)
    if s < R and tail.shape[0] > 0:
        if not tail_sorted:
            tail = tail[np.argsort(flat[tail], kind="mergesort")]
        s = _link_pass(tail, m, n, uf, used, bi, bj, s, R)
    return bi, bj, flow


@njit(cache=True, nogil=True)
def _link(h, node, head, nxt, prv):
    nxt[h] = head[node]
    prv[h] = -1
    if head[node] >= 0:
        prv[head[node]] = h
    head[node] = h


@njit(cache=True, nogil=True)
def _unlink(h, node, head, nxt, prv):
    if prv[h] >= 0:
        nxt[prv[h]] = nxt[h]
    else:
        head[node] = nxt[h]
    if nxt[h] >= 0:
        prv[nxt[h]] = prv[h]


@njit(cache=True, nogil=True)
def _hang(n, root, bi, bj, M, pot, parent, pcell, head, nxt, stack):
    """Re-derive parents and potentials below ``root`` (whose own are set)."""
    stack[0] = root
    top = 1
    while top > 0:
        top -= 1
        v = stack[top]
        h = head[v]
        while h >= 0:
            s = h >> 1
            if s != pcell[v]:
                w = n + bj[s] if v < n else bi[s]
                parent[w] = v
                pcell[w] = s
                pot[w] = M[bi[s], bj[s]] - pot[v]
                stack[top] = w
                top += 1
            h = nxt[h]


@njit(cache=True, nogil=True)
def network_simplex(a, b, M, tol, max_iter, pricing, block_size, greedy_start):
    """Solve ``min <P, M>`` over couplings of ``a`` and ``b``.

    The starting tree comes from the matrix-minimum rule when
    ``greedy_start`` is set, otherwise from the north-west corner rule.
    Returns basis rows, columns and flows (length ``n + m - 1``, zero flows
    included), row and column potentials, a status code and the pivot count.
    Entering arcs are the most negative reduced cost (lowest row-major index
    on ties), or the most negative within the current block for block
    pricing.  A run of degenerate pivots longer than ``n + m`` switches to
    Bland's rule until the objective strictly decreases.
    """
    n, m = a.shape[0], b.shape[0]
    N = n + m
    if greedy_start:
        bi, bj, flow = _greedy_basis(a, b, M)
    else:
        bi, bj, flow = _nwc_basis(a, b)
    R = N - 1
    pot = np.zeros(N)
    parent = np.empty(N, np.int64)
    pcell = np.empty(N, np.int64)
    head = np.full(N, -1, np.int64)
    nxt = np.empty(2 * R, np.int64)
    prv = np.empty(2 * R, np.int64)
    stack = np.empty(N, np.int64)
    mark = np.zeros(N, np.int64)
    for s in range(R):
        _link(2 * s, bi[s], head, nxt, prv)
        _link(2 * s + 1, n + bj[s], head, nxt, prv)
    parent[0] = -1
    pcell[0] = -1
    pot[0] = 0.0
    _hang(n, 0, bi, bj, M, pot, parent, pcell, head, nxt, stack)
    pathq = np.empty(N, np.int64)
    pathp = np.empty(N, np.int64)
    cyc = np.empty(N, np.int64)

    status = MAX_ITER
    degenerate_run = 0
    bland = False
    block_start = 0
    total = n * m
    it = 0
    while it < max_iter:
        # --- pricing
        p = -1
        q = -1
        best = -tol
        if bland:
            found = False
            for i in range(n):
                ui = pot[i]
                for j in range(m):
                    if M[i, j] - ui - pot[n + j] < -tol:
                        p = i
                        q = j
                        found = True
                        break
                if found:
                    break
        elif pricing == DANTZIG or total <= block_size:
            for i in range(n):
                ui = pot[i]
                for j in range(m):
                    r = M[i, j] - ui - pot[n + j]
                    if r < best:
                        best = r
                        p = i
                        q = j
        else:
            scanned = 0
            i = block_start // m
            j = block_start - i * m
            ui = pot[i]
            while scanned < total:
                stop = min(scanned + block_size, total)
                while scanned < stop:
                    r = M[i, j] - ui - pot[n + j]
                    if r < best:
                        best = r
                        p = i
                        q = j
                    j += 1
                    if j == m:
                        j = 0
                        i += 1
                        if i == n:
                            i = 0
                        ui = pot[i]
                    scanned += 1
                if p >= 0:
                    break
            block_start = i * m + j
        if p < 0:
            status = OPTIMAL
            break

        # --- cycle through the tree between row p and column q
        stamp = it + 1
        x = n + q
        while x >= 0:
            mark[x] = stamp
            x = parent[x]
        y = p
        lp = 0
        while mark[y] != stamp:
            pathp[lp] = pcell[y]
            lp += 1
            y = parent[y]
        lca = y
        x = n + q
        lq = 0
        while x != lca:
            pathq[lq] = pcell[x]
            lq += 1
            x = parent[x]
        L = 0
        for t in range(lq):
            cyc[L] = pathq[t]
            L += 1
        for t in range(lp - 1, -1, -1):
            cyc[L] = pathp[t]
            L += 1
        # cells at even positions lose mass, odd positions gain
        theta = np.inf
        leave = -1
        leave_key = -1
        leave_pos = -1
        for t in range(0, L, 2):
            s = cyc[t]
            f = flow[s]
            key = bi[s] * m + bj[s]
            if f < theta or (f == theta and key < leave_key):
                theta = f
                leave = s
                leave_key = key
                leave_pos = t
        if theta < 0.0:
            theta = 0.0
        if theta > 0.0:
            for t in range(L):
                s = cyc[t]
                if t % 2 == 0:
                    flow[s] -= theta
                    if flow[s] < 0.0:
                        flow[s] = 0.0
                else:
                    flow[s] += theta
            degenerate_run = 0
            bland = False
        else:
            degenerate_run += 1
            if degenerate_run > N:
                bland = True
        # the cut-off subtree holds the entering endpoint on the leaving side
        if leave_pos < lq:
            e1 = n + q
            e2 = p
        else:
            e1 = p
            e2 = n + q
        _unlink(2 * leave, bi[leave], head, nxt, prv)
        _unlink(2 * leave + 1, n + bj[leave], head, nxt, prv)
        bi[leave] = p
        bj[leave] = q
        flow[leave] = theta
        _link(2 * leave, p, head, nxt, prv)
        _link(2 * leave + 1, n + q, head, nxt, prv)
        parent[e1] = e2
        pcell[e1] = leave
        pot[e1] = M[p, q] - pot[e2]
        _hang(n, e1, bi, bj, M, pot, parent, pcell, head, nxt, stack)
        it += 1

    u = pot[:n].copy()
    v = pot[n:].copy()
    return bi, bj, flow, u, v, status, it
