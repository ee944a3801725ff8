"""Compiled inner loops for tree growth on two-level designs.

These mirror the pure numpy code paths in :mod:`doetree.tree` and are
checked against them in the test suite.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, types
from numba.typed import Dict

__all__ = [
    "new_cache",
    "node_random",
    "permutations",
    "binary_pvalues",
    "stepwise_search",
    "chi2_sf_small",
    "grow_binary",
]

EQ_TOL = 1e-9


@njit(cache=True)
def _mix32(a, b):
    # splitmix64 finalizer of a + golden-ratio multiple of b, low 32 bits
    z = np.uint64(a) + np.uint64(b) * np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return np.int64(z & np.uint64(0xFFFFFFFF))


@njit(cache=True)
def node_random(tree_seed, node_id, L):
    """Permutation seed and ``L`` uniforms for one node of one tree.

    The stream depends only on ``(tree_seed, node_id)``, so it does not
    matter in which order nodes are visited.
    """
    np.random.seed(_mix32(tree_seed, node_id))
    perm_seed = np.random.randint(0, 2**31 - 1)
    U = np.empty(L)
    for i in range(L):
        U[i] = np.random.random()
    return perm_seed, U


@njit(cache=True)
def permutations(seed, n, B):
    """``B`` random permutations of ``range(n)`` as columns, from ``seed``."""
    np.random.seed(seed)
    out = np.empty((n, B), dtype=np.int64)
    for b in range(B):
        for i in range(n):
            out[i, b] = i
        for i in range(n - 1, 0, -1):
            j = np.random.randint(0, i + 1)
            t = out[i, b]
            out[i, b] = out[j, b]
            out[j, b] = t
    return out


@njit(cache=True)
def chi2_sf_small(x, df):
    """Upper tail of chi2 with 1, 2 or 3 degrees of freedom."""
    if x <= 0.0:
        return 1.0
    if df == 1:
        return math.erfc(math.sqrt(0.5 * x))
    if df == 2:
        return math.exp(-0.5 * x)
    return math.erfc(math.sqrt(0.5 * x)) + math.sqrt(2.0 * x / math.pi) * math.exp(-0.5 * x)


@njit(cache=True)
def _log_choose(n, k):
    return math.lgamma(n + 1.0) - math.lgamma(k + 1.0) - math.lgamma(n - k + 1.0)


def new_cache():
    """Empty cache of exact null distributions for :func:`binary_pvalues`."""
    return Dict.empty(key_type=types.int64, value_type=types.float64[:, :])


@njit(cache=True)
def _null_distribution(sizes, g, m):
    """Distinct Pearson values with their probabilities and upper tails.

    ``sizes[:g]`` sorted ascending; row 0 of the result holds the values,
    row 1 the point probabilities and row 2 ``P(X > value)``.
    """
    N = 0
    for j in range(g):
        N += sizes[j]
    count = 1
    for j in range(g - 1):
        count *= sizes[j] + 1
    stats_ = np.empty(count)
    logp = np.empty(count)
    scale = N * N / (m * (N - m))
    lognorm = _log_choose(N, m)
    a = np.zeros(4, dtype=np.int64)
    t = 0
    done = False
    while not done:
        s = 0
        for j in range(g - 1):
            s += a[j]
        last = m - s
        if 0 <= last <= sizes[g - 1]:
            lp = -lognorm
            st = 0.0
            for j in range(g):
                aj = a[j] if j < g - 1 else last
                lp += _log_choose(sizes[j], aj)
                d = aj - m * sizes[j] / N
                st += d * d / sizes[j]
            stats_[t] = st * scale
            logp[t] = lp
            t += 1
        j = 0
        while True:
            if j == g - 1:
                done = True
                break
            if a[j] < sizes[j]:
                a[j] += 1
                break
            a[j] = 0
            j += 1
    stats_ = stats_[:t]
    prob = np.exp(logp[:t])
    order = np.argsort(stats_, kind="mergesort")
    stats_ = stats_[order]
    prob = prob[order]
    out = np.empty((3, t))
    h = 0
    for i in range(t):
        if h > 0 and stats_[i] - out[0, h - 1] <= EQ_TOL * (1.0 + stats_[i]):
            out[1, h - 1] += prob[i]
        else:
            out[0, h] = stats_[i]
            out[1, h] = prob[i]
            h += 1
    out = out[:, :h].copy()
    total = out[1].sum()
    acc = 0.0
    for i in range(h - 1, -1, -1):
        out[1, i] /= total
        out[2, i] = acc
        acc += out[1, i]
    return out


@njit(cache=True)
def _exact_tail(cache, sizes, g, m, stat, u):
    """Randomized exact p-value for a 2 x g table with margins fixed."""
    N = 0
    for j in range(g):
        N += sizes[j]
    key = -1
    if N < 4096:
        key = m
        for j in range(4):
            key = key * 4096 + (sizes[j - (4 - g)] if j >= 4 - g else 0)
    if key >= 0 and key in cache:
        dist = cache[key]
    else:
        dist = _null_distribution(sizes, g, m)
        if key >= 0:
            cache[key] = dist
    tol = EQ_TOL * (1.0 + stat)
    i = np.searchsorted(dist[0], stat - tol)
    if i >= dist.shape[1]:
        i = dist.shape[1] - 1
    if abs(dist[0, i] - stat) <= tol:
        p = dist[2, i] + u * dist[1, i]
    elif dist[0, i] > stat:
        p = dist[2, i] + dist[1, i]
    else:
        p = dist[2, i]
    return min(max(p, 0.0), 1.0)


@njit(cache=True)
def _table_p(cache, sizes, pos, g, m, N, u, exact_limit, randomize):
    # drop empty cells, sort ascending by size
    ss = np.zeros(4, dtype=np.int64)
    pp = np.zeros(4)
    h = 0
    for j in range(g):
        if sizes[j] > 0:
            ss[h] = sizes[j]
            pp[h] = pos[j]
            h += 1
    if h < 2 or m == 0 or m == N:
        return 1.0
    stat = 0.0
    for j in range(h):
        d = pp[j] - m * ss[j] / N
        stat += d * d / ss[j]
    stat *= N * N / (m * (N - m))
    if randomize:
        srt = np.sort(ss[:h])
        prod = 1
        for j in range(h - 1):
            prod *= srt[j] + 1
        if prod <= exact_limit:
            return _exact_tail(cache, srt, h, m, stat, u)
    return chi2_sf_small(stat, h - 1)


@njit(cache=True)
def binary_pvalues(cache, Z, positive, U, scales, do_pairs, exact_limit):
    """Curvature and interaction p-values for a node of a two-level design.

    Parameters
    ----------
    cache : typed dict from :func:`new_cache`
    Z : (n, k) float array of 0/1 level codes
    positive : (n,) bool array of nonnegative residual signs
    U : (k + k(k-1)/2,) uniforms, one per test in fixed order
    scales : (k,) bootstrap scale per variable; NaN marks a non-regressor
        (randomized exact test), 0 marks a regressor without calibration.
    do_pairs : bool

    Returns
    -------
    curv : (k,) p-values, NaN where the variable is constant
    inter : (k, k) Bonferroni-adjusted p-values for admissible pairs
        (upper triangle), NaN elsewhere
    """
    n, k = Z.shape
    N = float(n)
    n1 = np.zeros(k)
    a1 = np.zeros(k)
    m = 0.0
    for i in range(n):
        if positive[i]:
            m += 1.0
        for j in range(k):
            if Z[i, j] > 0.5:
                n1[j] += 1.0
                if positive[i]:
                    a1[j] += 1.0
    admissible = np.zeros(k, dtype=np.bool_)
    n_adm = 0
    for j in range(k):
        if 0.0 < n1[j] < N:
            admissible[j] = True
            n_adm += 1
    curv = np.full(k, np.nan)
    inter = np.full((k, k), np.nan)
    mi = int(round(m))
    sizes = np.zeros(4, dtype=np.int64)
    pos = np.zeros(4)
    for j in range(k):
        if not admissible[j]:
            continue
        sizes[0] = int(round(N - n1[j]))
        sizes[1] = int(round(n1[j]))
        pos[0] = m - a1[j]
        pos[1] = a1[j]
        if np.isnan(scales[j]):
            curv[j] = _table_p(cache, sizes, pos, 2, mi, n, U[j], exact_limit, True)
        else:
            raw_stat = 0.0
            if 0 < mi < n:
                for c in range(2):
                    d = pos[c] - m * sizes[c] / N
                    raw_stat += d * d / sizes[c]
                raw_stat *= N * N / (m * (N - m))
            sc = scales[j] if scales[j] > 0.0 else 1.0
            curv[j] = chi2_sf_small(sc * raw_stat, 1) if 0 < mi < n else 1.0
    if do_pairs and n_adm >= 2:
        n_pairs = n_adm * (n_adm - 1) // 2
        idx = k
        for u in range(k):
            for v in range(u + 1, k):
                t = idx
                idx += 1
                if not (admissible[u] and admissible[v]):
                    continue
                c11 = 0.0
                p11 = 0.0
                for i in range(n):
                    if Z[i, u] > 0.5 and Z[i, v] > 0.5:
                        c11 += 1.0
                        if positive[i]:
                            p11 += 1.0
                sizes[0] = int(round(N - n1[u] - n1[v] + c11))
                sizes[1] = int(round(n1[v] - c11))
                sizes[2] = int(round(n1[u] - c11))
                sizes[3] = int(round(c11))
                pos[0] = m - a1[u] - a1[v] + p11
                pos[1] = a1[v] - p11
                pos[2] = a1[u] - p11
                pos[3] = p11
                p = _table_p(cache, sizes, pos, 4, mi, n, U[t], exact_limit, True)
                inter[u, v] = min(1.0, p * n_pairs)
    return curv, inter


@njit(cache=True)
def _chol_rss(G, b, syy, sel, nsel):
    # Cholesky on the selected sub-matrix; returns (rss, ok)
    L = np.zeros((nsel, nsel))
    z = np.zeros(nsel)
    scale = 1.0
    for i in range(nsel):
        if G[sel[i], sel[i]] > scale:
            scale = G[sel[i], sel[i]]
    for i in range(nsel):
        for j in range(i + 1):
            s = G[sel[i], sel[j]]
            for q in range(j):
                s -= L[i, q] * L[j, q]
            if i == j:
                if s <= 1e-10 * scale:
                    return 0.0, False
                L[i, i] = math.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    acc = 0.0
    for i in range(nsel):
        s = b[sel[i]]
        for q in range(i):
            s -= L[i, q] * z[q]
        z[i] = s / L[i, i]
        acc += z[i] * z[i]
    return syy - acc, True


@njit(cache=True)
def stepwise_search(G, b, syy, n, candidates):
    """Bidirectional AIC search over single columns from the empty model.

    ``candidates`` is a boolean mask of usable columns. Returns the
    selected mask, or ``None``-like empty array when a sub-matrix is not
    positive definite (the caller then falls back to the general search).
    """
    D = G.shape[0]
    current = np.zeros(D, dtype=np.bool_)
    floor = 1e-12 * (1.0 + syy)
    best = n * math.log(syy / n) + 2.0 if syy > floor else -np.inf
    sel = np.zeros(D, dtype=np.int64)
    while best > -np.inf:
        best_val = np.inf
        best_j = -1
        for j in range(D):
            if not candidates[j]:
                continue
            nsel = 0
            for q in range(D):
                on = current[q] if q != j else not current[q]
                if on:
                    sel[nsel] = q
                    nsel += 1
            if nsel == 0:
                rss, ok = syy, True
            else:
                rss, ok = _chol_rss(G, b, syy, sel, nsel)
            if not ok:
                return np.zeros(0, dtype=np.bool_)
            val = n * math.log(rss / n) + 2.0 * (nsel + 1) if rss > floor else -np.inf
            if val < best_val:
                best_val = val
                best_j = j
        if best_j < 0 or not best_val < best:
            break
        current[best_j] = not current[best_j]
        best = best_val
    return current


# ----------------------------------------------------------------------
# Whole-tree growth for Gaussian responses on two-level factors
# ----------------------------------------------------------------------

KIND_CONSTANT = 0
KIND_SIMPLE = 1
KIND_STEPWISE = 2


@njit(cache=True)
def _chol_solve(A, b):
    # solve A x = b for symmetric positive definite A; returns (x, Ainv diag, ok)
    p = A.shape[0]
    L = np.zeros((p, p))
    scale = 1.0
    for i in range(p):
        if A[i, i] > scale:
            scale = A[i, i]
    for i in range(p):
        for j in range(i + 1):
            s = A[i, j]
            for q in range(j):
                s -= L[i, q] * L[j, q]
            if i == j:
                if s <= 1e-10 * scale:
                    return np.zeros(p), np.zeros(p), False
                L[i, i] = math.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    z = np.zeros(p)
    for i in range(p):
        s = b[i]
        for q in range(i):
            s -= L[i, q] * z[q]
        z[i] = s / L[i, i]
    x = np.zeros(p)
    for i in range(p - 1, -1, -1):
        s = z[i]
        for q in range(i + 1, p):
            s -= L[q, i] * x[q]
        x[i] = s / L[i, i]
    # diagonal of A^-1 = column sums of squares of L^-1
    Linv = np.zeros((p, p))
    for c in range(p):
        for i in range(c, p):
            s = 1.0 if i == c else 0.0
            for q in range(c, i):
                s -= L[i, q] * Linv[q, c]
            Linv[i, c] = s / L[i, i]
    dinv = np.zeros(p)
    for i in range(p):
        for c in range(p):
            dinv[i] += Linv[c, i] * Linv[c, i]
    return x, dinv, True


@njit(cache=True)
def _ls_fit(Xn, y, cols, ncols):
    """OLS on an intercept plus ``cols[:ncols]``; returns (coef, se, rss, ok)."""
    n = y.shape[0]
    p = ncols + 1
    A = np.zeros((p, p))
    b = np.zeros(p)
    for i in range(n):
        for r in range(p):
            xr = 1.0 if r == 0 else Xn[i, cols[r - 1]]
            b[r] += xr * y[i]
            for c in range(r + 1):
                xc = 1.0 if c == 0 else Xn[i, cols[c - 1]]
                A[r, c] += xr * xc
    for r in range(p):
        for c in range(r + 1, p):
            A[r, c] = A[c, r]
    if n <= p:
        return np.zeros(p), np.zeros(p), 0.0, False
    coef, dinv, ok = _chol_solve(A, b)
    if not ok:
        return coef, dinv, 0.0, False
    rss = 0.0
    for i in range(n):
        e = y[i] - coef[0]
        for c in range(ncols):
            e -= coef[c + 1] * Xn[i, cols[c]]
        rss += e * e
    se = np.sqrt(dinv * rss / (n - p))
    return coef, se, rss, True


@njit(cache=True)
def _node_fit(Xn, y, kind, allowed, sxx_tol, t_threshold):
    """Node model: (cols, ncols, coef, se, deviance, status).

    status is 0 on success and 1 when the general code path is needed
    (a rank-deficient fit).
    """
    n, k = Xn.shape
    cols = np.zeros(k, dtype=np.int64)
    ybar = 0.0
    for i in range(n):
        ybar += y[i]
    ybar /= n
    syy = 0.0
    for i in range(n):
        syy += (y[i] - ybar) ** 2
    ncols = 0
    if kind == KIND_SIMPLE and n > 2:
        best = -1
        best_ssr = -np.inf
        for j in range(k):
            if not allowed[j]:
                continue
            xbar = 0.0
            for i in range(n):
                xbar += Xn[i, j]
            xbar /= n
            sxx = 0.0
            sxy = 0.0
            for i in range(n):
                d = Xn[i, j] - xbar
                sxx += d * d
                sxy += d * (y[i] - ybar)
            ssr = sxy * sxy / sxx if sxx > sxx_tol * n else -1.0
            if ssr > best_ssr:
                best_ssr = ssr
                best = j
        if best >= 0 and best_ssr > -1.0:
            explained = min(best_ssr, syy)
            rss = syy - explained
            if explained * (n - 2) > t_threshold * t_threshold * rss:
                cols[0] = best
                ncols = 1
    elif kind == KIND_STEPWISE:
        xbar = np.zeros(k)
        for i in range(n):
            for j in range(k):
                xbar[j] += Xn[i, j]
        xbar /= n
        G = np.zeros((k, k))
        b = np.zeros(k)
        cand = np.zeros(k, dtype=np.bool_)
        for i in range(n):
            yc = y[i] - ybar
            for r in range(k):
                dr = Xn[i, r] - xbar[r]
                b[r] += dr * yc
                for c in range(r + 1):
                    G[r, c] += dr * (Xn[i, c] - xbar[c])
        for r in range(k):
            for c in range(r + 1, k):
                G[r, c] = G[c, r]
            cand[r] = allowed[r] and G[r, r] > 0.0
        chosen = stepwise_search(G, b, syy, float(n), cand)
        if chosen.size == 0:
            return cols, 0, np.zeros(1), np.zeros(1), 0.0, 1
        for j in range(k):
            if chosen[j]:
                cols[ncols] = j
                ncols += 1
    if ncols == 0:
        coef = np.array([ybar])
        se = np.array([math.sqrt(syy / (n - 1) / n) if n > 1 else np.nan])
        return cols, 0, coef, se, syy, 0
    coef, se, rss, ok = _ls_fit(Xn, y, cols, ncols)
    if not ok:
        return cols, ncols, coef, se, 0.0, 1
    return cols, ncols, coef, se, rss, 0


@njit(cache=True)
def _boot_scales(Xn, Zn, y, cols, ncols, coef, admissible, perm_seed, B, chi2_median):
    """Bootstrap scale per regressor (NaN for non-regressors, 0 if undefined)."""
    n, k = Zn.shape
    scales = np.full(k, np.nan)
    any_reg = False
    for c in range(ncols):
        if coef[c + 1] != 0.0 and admissible[cols[c]]:
            any_reg = True
    if not any_reg:
        return scales, False
    perms = permutations(perm_seed, n, B)
    p = ncols + 1
    X = np.ones((n, p))
    for i in range(n):
        for c in range(ncols):
            X[i, c + 1] = Xn[i, cols[c]]
    XtX = X.T @ X
    Y = np.empty((n, B))
    ymax = 0.0
    for b in range(B):
        for i in range(n):
            Y[i, b] = y[perms[i, b]]
            if abs(Y[i, b]) > ymax:
                ymax = abs(Y[i, b])
    beta = np.linalg.solve(XtX, X.T @ Y)
    R = Y - X @ beta
    thr = -1e-9 * (1.0 + ymax)
    N = float(n)
    stats_ = np.zeros(B)
    for c in range(ncols):
        j = cols[c]
        if coef[c + 1] == 0.0 or not admissible[j]:
            continue
        n1 = 0.0
        for i in range(n):
            n1 += Zn[i, j]
        for b in range(B):
            m = 0.0
            a1 = 0.0
            for i in range(n):
                if R[i, b] >= thr:
                    m += 1.0
                    a1 += Zn[i, j]
            st = 0.0
            if 0.0 < m < N:
                d0 = (m - a1) - m * (N - n1) / N
                d1 = a1 - m * n1 / N
                st = (d0 * d0 / (N - n1) + d1 * d1 / n1) * (N * N / (m * (N - m)))
            stats_[b] = st
        med = np.median(stats_)
        scales[j] = chi2_median / med if med > 1e-12 else 0.0
    return scales, True


@njit(cache=True)
def grow_binary(cache, Z, y, allowed, kind, min_size, max_depth, B, interactions, exact_limit, tree_seed, chi2_median, t_threshold):
    """Grow a tree on 0/1 level codes ``Z`` with Gaussian node models.

    Nodes are returned in preorder as parallel arrays. ``status`` is 0 on
    success and 1 when some node needs the general code path.
    """
    N, k = Z.shape
    cap = 2 * N + 1
    node_id = np.zeros(cap, dtype=np.int64)
    depth_ = np.zeros(cap, dtype=np.int64)
    count = np.zeros(cap, dtype=np.int64)
    mean = np.zeros(cap)
    dev = np.zeros(cap)
    var = np.full(cap, -1, dtype=np.int64)
    default_left = np.zeros(cap, dtype=np.bool_)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    ncols_ = np.zeros(cap, dtype=np.int64)
    cols_ = np.zeros((cap, k), dtype=np.int64)
    coef_ = np.zeros((cap, k + 1))
    se_ = np.zeros((cap, k + 1))
    tested = np.zeros(cap, dtype=np.bool_)
    do_pairs_ = np.zeros(cap, dtype=np.bool_)
    curv_ = np.full((cap, k), np.nan)
    inter_ = np.full((cap, k, k), np.nan)
    via = np.full((cap, 2), -1, dtype=np.int64)
    X = 2.0 * Z - 1.0
    sxx_tol = 1e-12 * 2.0
    L = k + k * (k - 1) // 2
    idx = np.arange(N)
    buf = np.empty(N, dtype=np.int64)
    # stack of (slot, start, stop); children are pushed right first
    st_slot = np.zeros(cap, dtype=np.int64)
    st_lo = np.zeros(cap, dtype=np.int64)
    st_hi = np.zeros(cap, dtype=np.int64)
    top = 0
    st_slot[0] = 0
    st_lo[0] = 0
    st_hi[0] = N
    node_id[0] = 1
    top = 1
    used = 1
    while top > 0:
        top -= 1
        s = st_slot[top]
        lo = st_lo[top]
        hi = st_hi[top]
        n = hi - lo
        rows = idx[lo:hi]
        Zn = np.empty((n, k))
        Xn = np.empty((n, k))
        yn = np.empty(n)
        tot = 0.0
        for i in range(n):
            r = rows[i]
            yn[i] = y[r]
            tot += y[r]
            for j in range(k):
                Zn[i, j] = Z[r, j]
                Xn[i, j] = X[r, j]
        count[s] = n
        mean[s] = tot / n
        cols, nc, coef, se, d, status = _node_fit(Xn, yn, kind, allowed, sxx_tol, t_threshold)
        if status != 0:
            return 1, node_id, depth_, count, mean, dev, var, default_left, left, right, ncols_, cols_, coef_, se_, tested, do_pairs_, curv_, inter_, via, used
        dev[s] = d
        ncols_[s] = nc
        for c in range(nc):
            cols_[s, c] = cols[c]
        for c in range(nc + 1):
            coef_[s, c] = coef[c]
            se_[s, c] = se[c]
        if depth_[s] >= max_depth or n < 2 * min_size:
            continue
        syy = 0.0
        for i in range(n):
            syy += (yn[i] - mean[s]) ** 2
        if d <= 1e-12 * (1.0 + syy):
            continue
        positive = np.empty(n, dtype=np.bool_)
        for i in range(n):
            fit = coef[0]
            for c in range(nc):
                fit += coef[c + 1] * Xn[i, cols[c]]
            positive[i] = yn[i] - fit >= 0.0
        admissible = np.zeros(k, dtype=np.bool_)
        n_adm = 0
        for j in range(k):
            lo_v = Zn[0, j]
            for i in range(1, n):
                if Zn[i, j] != lo_v:
                    admissible[j] = True
                    n_adm += 1
                    break
        tested[s] = True
        if n_adm == 0:
            continue
        perm_seed, U = node_random(tree_seed, node_id[s], L)
        scales, _ = _boot_scales(Xn, Zn, yn, cols, nc, coef, admissible, perm_seed, B, chi2_median)
        do_pairs = interactions and n_adm >= 2
        do_pairs_[s] = do_pairs
        cv, iv = binary_pvalues(cache, Zn, positive, U, scales, do_pairs, exact_limit)
        best = -1
        for j in range(k):
            if admissible[j]:
                curv_[s, j] = cv[j]
                if best < 0 or cv[j] < cv[best]:
                    best = j
        if do_pairs:
            bu = -1
            bv = -1
            bp = np.inf
            for u in range(k):
                for v in range(u + 1, k):
                    if admissible[u] and admissible[v]:
                        inter_[s, u, v] = iv[u, v]
                        if iv[u, v] < bp:
                            bp = iv[u, v]
                            bu = u
                            bv = v
            if bu >= 0 and bp < cv[best]:
                best = bu if cv[bu] <= cv[bv] else bv
                via[s, 0] = bu
                via[s, 1] = bv
        nl = 0
        for i in range(n):
            if Zn[i, best] < 0.5:
                nl += 1
        if nl < min_size or n - nl < min_size:
            continue
        var[s] = best
        default_left[s] = nl >= n - nl
        # stable partition: left rows first
        a = 0
        bcount = 0
        for i in range(n):
            r = rows[i]
            if Z[r, best] < 0.5:
                idx[lo + a] = r
                a += 1
            else:
                buf[bcount] = r
                bcount += 1
        for i in range(bcount):
            idx[lo + nl + i] = buf[i]
        ls = used
        rs = used + 1
        used += 2
        left[s] = ls
        right[s] = rs
        node_id[ls] = 2 * node_id[s]
        node_id[rs] = 2 * node_id[s] + 1
        depth_[ls] = depth_[s] + 1
        depth_[rs] = depth_[s] + 1
        st_slot[top] = rs
        st_lo[top] = lo + nl
        st_hi[top] = hi
        st_slot[top + 1] = ls
        st_lo[top + 1] = lo
        st_hi[top + 1] = lo + nl
        top += 2
    return 0, node_id, depth_, count, mean, dev, var, default_left, left, right, ncols_, cols_, coef_, se_, tested, do_pairs_, curv_, inter_, via, used
