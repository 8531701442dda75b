"""Compiled inner loops.

Tree storage is a pair of arrays shared by every kernel:

* ``topo``  int64 (cap, 4): parent, first child, child count, depth
* ``key``   uint64 (cap,):  hash key of the node

A node with child count 0 is unexpanded (frontier). Children of a node occupy
a contiguous index block and always come after their parent. Offspring counts
are a pure function of the node key, so lazily grown trees never depend on the
order in which they are explored.

Kernels never touch a global RNG; uniforms arrive in explicit buffers.
Kernels that may allocate nodes return a status code instead of raising so
the Python side can enlarge the arrays and resume.
"""

import numpy as np
from numba import njit

PARENT, FIRST, NCH, DEPTH = 0, 1, 2, 3
HI, LO, SM, SENS, EST = 0, 1, 2, 3, 4
N_SCRATCH = 5

OK = 0
NEED_CAPACITY = 1
NODE_LIMIT = 2
DEPTH_LIMIT = 3
NOT_GROWABLE = 4
NEED_RANDOM = 5

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_SALT = np.uint64(0xD1B54A32D192ED03)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0
_MAX_ROUNDS = 200
_THETA0 = 0.25
_THETA_STEP = 0.25


@njit(cache=True, nogil=True)
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def child_key(k, i):
    return mix64(k + np.uint64(i + 1) * _GOLDEN)


@njit(cache=True, nogil=True)
def offspring_count(k, cdf, ks):
    u = float(mix64(k ^ _SALT) >> np.uint64(11)) * _INV53
    for i in range(cdf.size):
        if u < cdf[i]:
            return ks[i]
    return ks[ks.size - 1]


@njit(cache=True, nogil=True)
def expand_count(v, c, topo, key, n):
    """Attach ``c`` children to ``v``; returns the new node count or -1."""
    if n + c > topo.shape[0]:
        return -1
    topo[v, FIRST] = n
    topo[v, NCH] = c
    d = topo[v, DEPTH] + 1
    kv = key[v]
    for i in range(c):
        w = n + i
        topo[w, PARENT] = v
        topo[w, FIRST] = -1
        topo[w, NCH] = 0
        topo[w, DEPTH] = d
        key[w] = child_key(kv, i)
    return n + c


@njit(cache=True, nogil=True)
def expand(v, topo, key, n, cdf, ks):
    """-1: out of capacity, -2: tree has no offspring law."""
    if cdf.size == 0:
        return -2
    return expand_count(v, offspring_count(key[v], cdf, ks), topo, key, n)


@njit(cache=True, nogil=True)
def grow(topo, key, n, start, target_depth, node_limit, cdf, ks):
    """Expand every node shallower than ``target_depth``, scanning from ``start``.

    Returns (status, n, resume_index).
    """
    i = start
    while i < n:
        if topo[i, DEPTH] < target_depth and topo[i, NCH] == 0:
            r = expand(i, topo, key, n, cdf, ks)
            if r == -1:
                return NEED_CAPACITY, n, i
            if r == -2:
                return NOT_GROWABLE, n, i
            n = r
            if n > node_limit:
                return NODE_LIMIT, n, i + 1
        i += 1
    return OK, n, i


@njit(cache=True, nogil=True)
def collect(root, limit, topo, order):
    """Breadth-first list of the subtree of ``root`` down to relative depth ``limit``."""
    order[0] = root
    base = topo[root, DEPTH]
    head = 0
    tail = 1
    while head < tail:
        v = order[head]
        head += 1
        c = topo[v, NCH]
        if c > 0 and topo[v, DEPTH] - base < limit:
            f = topo[v, FIRST]
            for i in range(c):
                order[tail] = f + i
                tail += 1
    return tail


@njit(cache=True, nogil=True)
def _sweep_up(cnt, limit, base, lam, lf, uf, topo, order, scratch):
    for j in range(cnt - 1, -1, -1):
        v = order[j]
        c = topo[v, NCH]
        if c == 0 or topo[v, DEPTH] - base >= limit:
            scratch[v, HI] = uf
            scratch[v, LO] = lf
            scratch[v, SM] = 0.0
        else:
            f = topo[v, FIRST]
            sh = 0.0
            sl = 0.0
            for i in range(c):
                sh += scratch[f + i, HI]
                sl += scratch[f + i, LO]
            scratch[v, HI] = sh / (lam + sh)
            scratch[v, LO] = sl / (lam + sl)
            scratch[v, SM] = sh if lf <= 0.0 else 0.5 * (sh + sl)


@njit(cache=True, nogil=True)
def bounds_fixed(root, limit, lam, lf, uf, topo, order, scratch):
    """Sandwich at a fixed relative depth. Returns (status, lo, hi)."""
    cnt = collect(root, limit, topo, order)
    base = topo[root, DEPTH]
    for j in range(cnt):
        v = order[j]
        if topo[v, NCH] == 0 and topo[v, DEPTH] - base < limit:
            return DEPTH_LIMIT, 0.0, 1.0
    _sweep_up(cnt, limit, base, lam, lf, uf, topo, order, scratch)
    return OK, scratch[root, LO], scratch[root, HI]


@njit(cache=True, nogil=True)
def _truncate(root, theta, first, lam, sf, depth_cap, node_limit, topo, key, n, cdf, ks, order, scratch):
    """Breadth-first list of the subtree of ``root`` truncated at influence ``theta``.

    A node is kept open when its influence on the root (product of the
    slopes lam / (lam + S)^2 along the path, S from the previous sweep) is at
    least ``theta``; open frontier nodes are expanded. On the ``first`` call,
    and for nodes never swept (S is NaN), S = nu * sf is used. Returns (status, count, n).
    """
    base = topo[root, DEPTH]
    order[0] = root
    scratch[root, SENS] = 1.0
    head = 0
    tail = 1
    while head < tail:
        v = order[head]
        head += 1
        sv = scratch[v, SENS]
        if sv < theta:
            continue
        c = topo[v, NCH]
        if c == 0:
            if topo[v, DEPTH] - base >= depth_cap:
                continue
            r = expand(v, topo, key, n, cdf, ks)
            if r == -1:
                return NEED_CAPACITY, tail, n
            if r == -2:
                return NOT_GROWABLE, tail, n
            n = r
            if n > node_limit:
                return NODE_LIMIT, tail, n
            c = topo[v, NCH]
            scratch[v, SM] = c * sf
        if tail + c > order.size:
            return NEED_CAPACITY, tail, n
        s = scratch[v, SM]
        if first or s != s:
            s = c * sf
        sc = sv * lam / ((lam + s) * (lam + s))
        f = topo[v, FIRST]
        for i in range(c):
            scratch[f + i, SENS] = sc
            order[tail] = f + i
            tail += 1
    return OK, tail, n


@njit(cache=True, nogil=True)
def _sweep_truncated(cnt, theta, lam, lf, uf, ef, extrapolate, topo, order, scratch):
    """Sweep the truncated subtree listed in ``order``; returns (lo, hi, estimate, gradient).

    lo and hi are bounds from the frontier values ``lf`` and ``uf``. The
    estimate uses the frontier value ``ef`` and the gradient is its derivative
    with respect to a common shift of the truncation's frontier values.
    """
    g = 0.0
    for j in range(cnt - 1, -1, -1):
        v = order[j]
        c = topo[v, NCH]
        if c == 0 or scratch[v, SENS] < theta:
            scratch[v, HI] = uf
            scratch[v, LO] = lf
            scratch[v, EST] = ef
            if c > 0:
                scratch[v, SM] = c * (ef if extrapolate else uf)
            g += scratch[v, SENS]
        else:
            f = topo[v, FIRST]
            sh = 0.0
            sl = 0.0
            se = 0.0
            for i in range(c):
                sh += scratch[f + i, HI]
                sl += scratch[f + i, LO]
                se += scratch[f + i, EST]
            scratch[v, HI] = sh / (lam + sh)
            scratch[v, LO] = sl / (lam + sl)
            scratch[v, EST] = se / (lam + se)
            scratch[v, SM] = se if extrapolate else 0.5 * (sh + sl)
    root = order[0]
    return scratch[root, LO], scratch[root, HI], scratch[root, EST], g


@njit(cache=True, nogil=True)
def _extrap(hist, k):
    """Value at zero frontier gradient from rounds k-1 and k; -1 if undetermined.

    To first order the root's estimate is beta + c * G with G the frontier
    gradient and c the mean gap between the frontier value and the true
    subtree values, which is the same in every round because unrevealed
    subtrees are i.i.d. A frontier value close to typical betas keeps the
    second-order terms small.
    """
    if k < 1:
        return -1.0
    h0, g0 = hist[k - 1, 0], hist[k - 1, 1]
    h1, g1 = hist[k, 0], hist[k, 1]
    if g0 - g1 <= 0.0:
        return -1.0
    return (h1 * g0 - h0 * g1) / (g0 - g1)


def new_refine_state():
    """History buffer and [rounds, theta, iterations, last truncation size] for a resumable refinement."""
    return np.empty((_MAX_ROUNDS + 1, 2)), np.array([0.0, _THETA0, 0.0, 0.0])


@njit(cache=True, nogil=True)
def refine(root, lam, lf, uf, ef, tol, extrapolate, depth_cap, node_limit,
           topo, key, n, cdf, ks, order, scratch, hist, meta):
    """Grow the subtree of ``root`` until its escape-probability interval is narrower than ``tol``.

    Round k evaluates the subtree truncated at influence theta_k, with theta
    shrinking geometrically, expanding the tree wherever the truncation
    reaches unrevealed nodes. Already grown parts are reused, so a
    refinement of a deep tree costs only what its truncations touch. With
    ``extrapolate`` (no positive certified frontier floor) the interval is
    centred on the zero-gradient extrapolation of estimates computed with
    frontier value ``ef``, with
    half-width twice the drift of that extrapolation over recent rounds.
    ``hist`` and ``meta`` carry the state so a call interrupted for capacity
    can resume.

    Returns (status, lo, hi, n, depth_used, rounds).
    """
    base = topo[root, DEPTH]
    nr = int(meta[0])
    theta = meta[1]
    iters = int(meta[2])
    last = int(meta[3])
    lo = 0.0
    hi = 1.0
    dmax = 0
    while True:
        st, cnt, n = _truncate(root, theta, iters == 0, lam, ef if extrapolate else uf,
                               depth_cap, node_limit,
                               topo, key, n, cdf, ks, order, scratch)
        if st != OK:
            meta[0] = nr
            meta[1] = theta
            meta[2] = iters
            meta[3] = last
            return st, lo, hi, n, dmax, nr
        iters += 1
        lo, hi, est, g = _sweep_truncated(cnt, theta, lam, lf, uf, ef, extrapolate, topo, order,
                                          scratch)
        if cnt > last or nr == 0:
            last = cnt
            hist[nr, 0] = est
            hist[nr, 1] = g
            nr += 1
        if extrapolate and nr >= 4:
            e0 = _extrap(hist, nr - 1)
            e1 = _extrap(hist, nr - 2)
            e2 = _extrap(hist, nr - 3)
            if e0 >= 0.0 and e1 >= 0.0 and e2 >= 0.0:
                delta = 2.0 * max(abs(e0 - e1), abs(e1 - e2))
                lo = max(lo, e0 - delta)
                hi = min(hi, e0 + delta)
        dmax = topo[order[cnt - 1], DEPTH] - base
        theta *= _THETA_STEP
        if hi - lo < tol:
            return OK, lo, hi, n, dmax, nr
        if nr > _MAX_ROUNDS or iters > 4 * _MAX_ROUNDS:
            return DEPTH_LIMIT, lo, hi, n, dmax, nr


@njit(cache=True, nogil=True)
def walk(v, root, lam, unif, t0, nsteps, stop_depth, topo, key, n, cdf, ks,
         node_limit, nu_out, pos_out, acc):
    """Run the biased walk from ``v`` for steps ``t0..nsteps-1``.

    ``root`` reflects (uniform move to a child). ``acc`` holds running
    sums of child counts, of their reciprocals, and the maximal relative
    depth reached. Stops early once that depth reaches ``stop_depth`` (if >= 0).

    Returns (status, v, t, n).
    """
    rd = topo[root, DEPTH]
    keep_nu = nu_out.size > 0
    keep_pos = pos_out.size > 0
    t = t0
    while t < nsteps:
        if topo[v, NCH] == 0:
            r = expand(v, topo, key, n, cdf, ks)
            if r == -1:
                return NEED_CAPACITY, v, t, n
            if r == -2:
                return NOT_GROWABLE, v, t, n
            n = r
            if n > node_limit:
                return NODE_LIMIT, v, t, n
        c = topo[v, NCH]
        if keep_nu:
            nu_out[t] = c
        if keep_pos:
            pos_out[t] = v
        acc[0] += c
        acc[1] += 1.0 / c
        u = unif[t]
        if v == root:
            j = int(u * c)
            if j >= c:
                j = c - 1
            v = topo[v, FIRST] + j
        else:
            x = u * (c + lam)
            if x < lam:
                v = topo[v, PARENT]
            else:
                j = int(x - lam)
                if j >= c:
                    j = c - 1
                v = topo[v, FIRST] + j
        t += 1
        d = topo[v, DEPTH] - rd
        if d > acc[2]:
            acc[2] = d
            if stop_depth >= 0 and d >= stop_depth:
                return OK, v, t, n
    return OK, v, t, n


@njit(cache=True, nogil=True)
def escape_walks(root, lam, escape_depth, n_walks, unif, state, topo, key, n,
                 cdf, ks, node_limit):
    """Walks on the tree with an absorbing parent above ``root``.

    ``state`` = [walks done, escapes, current vertex or -1]; resumable when
    the uniform buffer runs dry. Returns (status, n, cursor).
    """
    rd = topo[root, DEPTH]
    cur = 0
    v = state[2]
    while state[0] < n_walks:
        if v < 0:
            v = root
        while True:
            if topo[v, DEPTH] - rd >= escape_depth:
                state[1] += 1
                break
            if topo[v, NCH] == 0:
                r = expand(v, topo, key, n, cdf, ks)
                if r == -1:
                    state[2] = v
                    return NEED_CAPACITY, n, cur
                if r == -2:
                    state[2] = v
                    return NOT_GROWABLE, n, cur
                n = r
                if n > node_limit:
                    state[2] = v
                    return NODE_LIMIT, n, cur
            if cur >= unif.size:
                state[2] = v
                return NEED_RANDOM, n, cur
            c = topo[v, NCH]
            x = unif[cur] * (c + lam)
            cur += 1
            if x < lam:
                if v == root:
                    break
                v = topo[v, PARENT]
            else:
                j = int(x - lam)
                if j >= c:
                    j = c - 1
                v = topo[v, FIRST] + j
        state[0] += 1
        v = -1
    state[2] = -1
    return OK, n, cur


def new_ray_state(k_max):
    """Resumable per-step state: refine history, refine meta, [child index], midpoints, widths."""
    hist, meta = new_refine_state()
    return hist, meta, np.zeros(1, dtype=np.int64), np.empty(k_max), np.empty(k_max)


@njit(cache=True, nogil=True)
def harmonic_ray(v, s0, L, lam, lf, uf, ef, tol, extrapolate, depth_cap, node_limit,
                 unif, topo, key, n, cdf, ks, order, scratch, hist, meta, child, mids, widths,
                 out_node, out_nu, out_c, out_bnext, out_width):
    """Sample ray steps ``s0..L-1`` from ``v`` with flow probabilities beta(child)/C.

    Per step records the vertex, its child count, the conductance C (sum of
    refined child midpoints), the chosen child's beta and the widest child
    interval. A call interrupted inside a step resumes from ``child`` with the
    refinement state in ``hist``/``meta``. Returns (status, v, s, n).
    """
    s = s0
    while s < L:
        if topo[v, NCH] == 0:
            r = expand(v, topo, key, n, cdf, ks)
            if r == -1:
                return NEED_CAPACITY, v, s, n
            if r == -2:
                return NOT_GROWABLE, v, s, n
            n = r
        c = topo[v, NCH]
        f = topo[v, FIRST]
        while child[0] < c:
            i = child[0]
            st, lo, hi, n, du, nr = refine(f + i, lam, lf, uf, ef, tol, extrapolate, depth_cap,
                                           node_limit, topo, key, n, cdf, ks, order, scratch,
                                           hist, meta)
            if st != OK:
                return st, v, s, n
            mids[i] = 0.5 * (lo + hi)
            widths[i] = hi - lo
            child[0] = i + 1
            meta[:] = 0.0
            meta[1] = _THETA0
        child[0] = 0
        total = 0.0
        wmax = 0.0
        for i in range(c):
            total += mids[i]
            if widths[i] > wmax:
                wmax = widths[i]
        x = unif[s] * total
        j = 0
        acc = mids[0]
        while x >= acc and j < c - 1:
            j += 1
            acc += mids[j]
        out_node[s] = v
        out_nu[s] = c
        out_c[s] = total
        out_bnext[s] = mids[j]
        out_width[s] = wmax
        v = f + j
        s += 1
    return OK, v, s, n


@njit(cache=True, nogil=True)
def copy_subtree(root, topo, key, dst_topo, dst_key, order):
    """Relabel the subtree of ``root`` into fresh arrays (root becomes node 0)."""
    order[0] = root
    head = 0
    tail = 1
    base = topo[root, DEPTH]
    while head < tail:
        v = order[head]
        c = topo[v, NCH]
        dst_key[head] = key[v]
        dst_topo[head, DEPTH] = topo[v, DEPTH] - base
        dst_topo[head, NCH] = c
        if head == 0:
            dst_topo[head, PARENT] = -1
        if c > 0:
            dst_topo[head, FIRST] = tail
            f = topo[v, FIRST]
            for i in range(c):
                order[tail] = f + i
                dst_topo[tail, PARENT] = head
                tail += 1
        else:
            dst_topo[head, FIRST] = -1
        head += 1
    return tail


@njit(cache=True, nogil=True)
def subtree_size(root, topo):
    stack = [root]
    cnt = 0
    while len(stack) > 0:
        v = stack.pop()
        cnt += 1
        c = topo[v, NCH]
        f = topo[v, FIRST]
        for i in range(c):
            stack.append(f + i)
    return cnt


@njit(cache=True, nogil=True)
def evolve_sweep(values, degrees, lam, nus, idx):
    """One asynchronous population-dynamics sweep, entries replaced in order."""
    n = values.size
    j = 0
    for t in range(n):
        c = nus[t]
        s = 0.0
        for a in range(c):
            s += values[idx[j]]
            j += 1
        values[t] = s / (lam + s)
        degrees[t] = c
