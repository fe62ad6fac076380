"""Compiled inner loops for feature evaluation and split search."""

import numba
import numpy as np


@numba.njit(cache=True)
def pixel_differences(flat, H, W, sizes, img_idx, base, lin, offsets):
    n = img_idx.shape[0]
    F = offsets.shape[0]
    out = np.empty((n, F))
    for i in range(n):
        im = img_idx[i]
        h = sizes[im, 0]
        w = sizes[im, 1]
        start = im * H * W
        bx = base[i, 0]
        by = base[i, 1]
        a00 = lin[i, 0, 0]
        a01 = lin[i, 0, 1]
        a10 = lin[i, 1, 0]
        a11 = lin[i, 1, 1]
        for f in range(F):
            va = 0.0
            for p in range(2):
                ox = offsets[f, 2 * p]
                oy = offsets[f, 2 * p + 1]
                col = int(np.floor(bx + a00 * ox + a01 * oy + 0.5))
                row = int(np.floor(by + a10 * ox + a11 * oy + 0.5))
                col = min(max(col, 0), w - 1)
                row = min(max(row, 0), h - 1)
                v = flat[start + row * W + col]
                if p == 0:
                    va = v
                else:
                    out[i, f] = va - v
    return out


@numba.njit(cache=True)
def per_sample_differences(flat, H, W, sizes, img_idx, base, lin, offsets):
    n = img_idx.shape[0]
    out = np.empty(n)
    for i in range(n):
        im = img_idx[i]
        h = sizes[im, 0]
        w = sizes[im, 1]
        start = im * H * W
        vals = np.empty(2)
        for p in range(2):
            ox = offsets[i, 2 * p]
            oy = offsets[i, 2 * p + 1]
            col = int(np.floor(base[i, 0] + lin[i, 0, 0] * ox + lin[i, 0, 1] * oy + 0.5))
            row = int(np.floor(base[i, 1] + lin[i, 1, 0] * ox + lin[i, 1, 1] * oy + 0.5))
            col = min(max(col, 0), w - 1)
            row = min(max(row, 0), h - 1)
            vals[p] = flat[start + row * W + col]
        out[i] = vals[0] - vals[1]
    return out


@numba.njit(cache=True)
def split_gains(sorted_t, order_t, y, n_thresholds):
    F, n = sorted_t.shape
    T = n_thresholds
    mean = 0.0
    for i in range(n):
        mean += y[i]
    mean /= n
    yc = y - mean
    tot = 0.0
    tot2 = 0.0
    for i in range(n):
        tot += yc[i]
        tot2 += yc[i] * yc[i]
    sse = tot2 - tot * tot / n

    gains = np.zeros(F)
    best_thr = np.zeros(F)
    q = np.empty(T + 1)
    thr = np.empty(T)
    cnt = np.empty(T + 1)
    s1 = np.empty(T + 1)
    s2 = np.empty(T + 1)
    for f in range(F):
        sv = sorted_t[f]
        order = order_t[f]
        for k in range(T + 1):
            h = (n - 1) * (k / T)
            lo = int(np.floor(h))
            hi = min(lo + 1, n - 1)
            q[k] = sv[lo] + (h - lo) * (sv[hi] - sv[lo])
        for k in range(T):
            thr[k] = 0.5 * (q[k] + q[k + 1])
        cnt[:] = 0.0
        s1[:] = 0.0
        s2[:] = 0.0
        # walk values in ascending order; b = number of thresholds <= value
        b = 0
        for j in range(n):
            v = sv[j]
            while b < T and thr[b] <= v:
                b += 1
            yi = yc[order[j]]
            cnt[b] += 1.0
            s1[b] += yi
            s2[b] += yi * yi
        nl = 0.0
        sl = 0.0
        sl2 = 0.0
        best = 0.0
        bt = thr[0]
        for k in range(T):
            nl += cnt[k]
            sl += s1[k]
            sl2 += s2[k]
            nr = n - nl
            if nl > 0 and nr > 0:
                sr = tot - sl
                sr2 = tot2 - sl2
                g = sse - (sl2 - sl * sl / nl) - (sr2 - sr * sr / nr)
                if g > best:
                    best = g
                    bt = thr[k]
        gains[f] = best
        best_thr[f] = bt
    return gains, best_thr
