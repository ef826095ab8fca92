"""Hot numeric kernels: exact split finding and forest traversal.

Both kernels exist twice, once jitted with numba and once in pure numpy.
The active implementation is chosen at import time: numba wins when it is
importable and the DISTILLFORGE_NUMBA environment variable is not set to
"0"/"false"/"off".  The two paths are kept bitwise-identical by forcing the
same summation order (sequential accumulation over a stable sort) and the
same gain expression, so models trained on either path serialize to the
same bytes.  No fastmath anywhere for that reason.
"""

from __future__ import annotations

import os
import warnings

import numpy as np

# A split must beat the parent score by more than this to count.  Uniform
# gradients give gain <= 0 analytically; the epsilon guards float noise.
MIN_GAIN = 1e-12


def _numba_requested() -> bool:
    flag = os.environ.get("DISTILLFORGE_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "off")


# ---------------------------------------------------------------------------
# pure numpy reference implementations
# ---------------------------------------------------------------------------

def best_split_numpy(x, grad, hess, min_leaf, reg_lambda):
    """Exact best axis-aligned split for one node.

    Scans every feature with a stable sort and evaluates the Newton gain
        G_L^2/(H_L+lam) + G_R^2/(H_R+lam) - G^2/(H+lam)
    at every boundary between distinct values.  Rows with NaN in the probed
    feature are routed to the left child and their gradient mass is folded
    into every left prefix.  Ties on gain resolve to the lowest threshold,
    then the lowest feature index.

    Returns (feature, threshold, gain); feature is -1 when no split clears
    MIN_GAIN, in which case the caller makes a leaf.
    """
    n, d = x.shape
    best_feat = -1
    best_thr = np.inf
    best_gain = MIN_GAIN
    for f in range(d):
        col = x[:, f]
        nan_mask = np.isnan(col)
        n_nan = int(nan_mask.sum())
        m = n - n_nan
        if m < 2:
            continue
        if n_nan:
            # sequential order over original rows, matches the jitted loop
            g_nan = float(np.cumsum(grad[nan_mask])[-1])
            h_nan = float(np.cumsum(hess[nan_mask])[-1])
        else:
            g_nan = 0.0
            h_nan = 0.0
        vals = col[~nan_mask]
        order = np.argsort(vals, kind="stable")
        vs = vals[order]
        gc = np.cumsum(grad[~nan_mask][order])
        hc = np.cumsum(hess[~nan_mask][order])
        g_tot = g_nan + float(gc[-1])
        h_tot = h_nan + float(hc[-1])
        parent = g_tot * g_tot / (h_tot + reg_lambda)

        idx = np.arange(m - 1)
        boundary = vs[:-1] < vs[1:]
        left_n = n_nan + idx + 1
        right_n = m - (idx + 1)
        valid = boundary & (left_n >= min_leaf) & (right_n >= min_leaf)
        if not valid.any():
            continue
        pos = idx[valid]
        gl = g_nan + gc[pos]
        hl = h_nan + hc[pos]
        gr = g_tot - gl
        hr = h_tot - hl
        gains = gl * gl / (hl + reg_lambda) + gr * gr / (hr + reg_lambda) - parent
        j = int(np.argmax(gains))  # first max == lowest threshold
        gain = float(gains[j])
        if gain > best_gain:
            i = int(pos[j])
            lo = float(vs[i])
            hi = float(vs[i + 1])
            thr = 0.5 * (lo + hi)
            if not (lo < thr <= hi):  # midpoint may round onto lo
                thr = hi
            best_feat = f
            best_thr = thr
            best_gain = gain
    if best_feat < 0:
        return -1, np.inf, 0.0
    return best_feat, best_thr, best_gain


def forest_raw_numpy(x, feat, thresh, left, right, value, max_depth):
    """Sum of leaf values across trees for every row of ``x``.

    Tree t is stored flat in feat[t]/thresh[t]/... with leaves self-looping
    (left == right == node, thresh == +inf) so a fixed number of vectorised
    steps converges.  Routing rule: NaN or value < threshold goes left.
    Accumulation is per-row over ascending tree index, same as the jitted
    kernel.
    """
    n = x.shape[0]
    n_trees = feat.shape[0]
    out = np.zeros(n, dtype=np.float64)
    rows = np.arange(n)
    for t in range(n_trees):
        node = np.zeros(n, dtype=np.int64)
        for _ in range(max_depth + 1):
            f = feat[t, node]
            xv = x[rows, np.maximum(f, 0)]
            go_left = np.isnan(xv) | (xv < thresh[t, node])
            node = np.where(go_left, left[t, node], right[t, node])
        out += value[t, node]
    return out


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

try:  # pragma: no cover - import machinery
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def best_split_numba(x, grad, hess, min_leaf, reg_lambda):
        n, d = x.shape
        best_feat = -1
        best_thr = np.inf
        best_gain = MIN_GAIN
        for f in range(d):
            g_nan = 0.0
            h_nan = 0.0
            n_nan = 0
            for i in range(n):
                v = x[i, f]
                if v != v:
                    g_nan += grad[i]
                    h_nan += hess[i]
                    n_nan += 1
            m = n - n_nan
            if m < 2:
                continue
            vals = np.empty(m, dtype=np.float64)
            gg = np.empty(m, dtype=np.float64)
            hh = np.empty(m, dtype=np.float64)
            j = 0
            for i in range(n):
                v = x[i, f]
                if v == v:
                    vals[j] = v
                    gg[j] = grad[i]
                    hh[j] = hess[i]
                    j += 1
            order = np.argsort(vals, kind="mergesort")
            g_tot = g_nan
            h_tot = h_nan
            for i in range(m):
                g_tot += gg[order[i]]
                h_tot += hh[order[i]]
            parent = g_tot * g_tot / (h_tot + reg_lambda)
            gl = g_nan
            hl = h_nan
            for i in range(m - 1):
                oi = order[i]
                gl += gg[oi]
                hl += hh[oi]
                lo = vals[oi]
                hi = vals[order[i + 1]]
                if lo == hi:
                    continue
                if n_nan + i + 1 < min_leaf or m - (i + 1) < min_leaf:
                    continue
                gr = g_tot - gl
                hr = h_tot - hl
                gain = gl * gl / (hl + reg_lambda) + gr * gr / (hr + reg_lambda) - parent
                if gain > best_gain:
                    thr = 0.5 * (lo + hi)
                    if not (lo < thr <= hi):
                        thr = hi
                    best_feat = f
                    best_thr = thr
                    best_gain = gain
        if best_feat < 0:
            return -1, np.inf, 0.0
        return best_feat, best_thr, best_gain

    @numba.njit(cache=True)
    def forest_raw_numba(x, feat, thresh, left, right, value, max_depth):
        n = x.shape[0]
        n_trees = feat.shape[0]
        out = np.zeros(n, dtype=np.float64)
        for t in range(n_trees):
            for i in range(n):
                node = 0
                f = feat[t, node]
                while f >= 0:
                    xv = x[i, f]
                    if xv != xv or xv < thresh[t, node]:
                        node = left[t, node]
                    else:
                        node = right[t, node]
                    f = feat[t, node]
                out[i] += value[t, node]
        return out

else:  # pragma: no cover
    best_split_numba = None
    forest_raw_numba = None


USING_NUMBA = HAVE_NUMBA and _numba_requested()

if _numba_requested() and not HAVE_NUMBA:  # pragma: no cover
    warnings.warn("numba unavailable, falling back to pure numpy kernels")

if USING_NUMBA:
    best_split = best_split_numba
    forest_raw = forest_raw_numba
else:
    best_split = best_split_numpy
    forest_raw = forest_raw_numpy
