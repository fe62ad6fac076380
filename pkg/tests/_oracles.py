"""Independent reference computations used by the tests.

Everything here is written from first principles with plain loops so it
shares no code path with the package under test.
"""

from __future__ import annotations

import math

import numpy as np


def rotation_grid_residual(shape, reference, mask=None, step=1e-3):
    """Least-squares similarity residual by exhaustive search over rotation.

    For each rotation on the grid the optimal scale and translation are
    closed-form; the smallest residual over the grid is returned.
    """
    L = len(shape) // 2
    vis = [True] * L if mask is None else [m >= 0.5 for m in mask]
    src = [(shape[i], shape[L + i]) for i in range(L) if vis[i]]
    dst = [(reference[i], reference[L + i]) for i in range(L) if vis[i]]
    k = len(src)
    sx = sum(p[0] for p in src) / k
    sy = sum(p[1] for p in src) / k
    dx = sum(p[0] for p in dst) / k
    dy = sum(p[1] for p in dst) / k
    a = [(p[0] - sx, p[1] - sy) for p in src]
    b = [(p[0] - dx, p[1] - dy) for p in dst]
    aa = sum(x * x + y * y for x, y in a)
    bb = sum(x * x + y * y for x, y in b)
    best = math.inf
    theta = -math.pi
    while theta < math.pi:
        c, s = math.cos(theta), math.sin(theta)
        ab = sum((c * x - s * y) * u + (s * x + c * y) * v for (x, y), (u, v) in zip(a, b))
        scale = max(ab / aa, 0.0)
        res = bb - 2 * scale * ab + scale * scale * aa
        best = min(best, res)
        theta += step
    return best


def gauss_solve(A, B):
    """Solve ``A X = B`` by Gaussian elimination with partial pivoting."""
    A = [list(map(float, row)) for row in np.asarray(A)]
    B = np.asarray(B, dtype=float)
    B = [list(row) for row in (B if B.ndim == 2 else B[:, None])]
    n = len(A)
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(A[r][col]))
        A[col], A[piv] = A[piv], A[col]
        B[col], B[piv] = B[piv], B[col]
        for r in range(col + 1, n):
            f = A[r][col] / A[col][col]
            for c in range(col, n):
                A[r][c] -= f * A[col][c]
            for c in range(len(B[r])):
                B[r][c] -= f * B[col][c]
    X = [[0.0] * len(B[0]) for _ in range(n)]
    for r in range(n - 1, -1, -1):
        for c in range(len(B[0])):
            acc = B[r][c] - sum(A[r][k] * X[k][c] for k in range(r + 1, n))
            X[r][c] = acc / A[r][r]
    return np.array(X)


def jacobi_eigh(S, sweeps=100, tol=1e-15):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues in descending order and the matching column vectors.
    """
    A = [list(map(float, row)) for row in np.asarray(S)]
    n = len(A)
    V = [[1.0 if i == j else 0.0 for j in range(n)] for i in range(n)]
    for _ in range(sweeps):
        off = sum(A[i][j] ** 2 for i in range(n) for j in range(n) if i != j)
        if off < tol:
            break
        for p in range(n):
            for q in range(p + 1, n):
                if abs(A[p][q]) < 1e-300:
                    continue
                tau = (A[q][q] - A[p][p]) / (2 * A[p][q])
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + math.sqrt(1 + tau * tau))
                c = 1 / math.sqrt(1 + t * t)
                s = t * c
                for k in range(n):
                    akp, akq = A[k][p], A[k][q]
                    A[k][p] = c * akp - s * akq
                    A[k][q] = s * akp + c * akq
                for k in range(n):
                    apk, aqk = A[p][k], A[q][k]
                    A[p][k] = c * apk - s * aqk
                    A[q][k] = s * apk + c * aqk
                for k in range(n):
                    vkp, vkq = V[k][p], V[k][q]
                    V[k][p] = c * vkp - s * vkq
                    V[k][q] = s * vkp + c * vkq
    w = [A[i][i] for i in range(n)]
    order = sorted(range(n), key=lambda i: -w[i])
    return np.array([w[i] for i in order]), np.array([[V[r][i] for i in order] for r in range(n)])


def eig2x2_top(cov):
    """Leading eigenvector of a symmetric 2x2 matrix in closed form."""
    a, b, d = cov[0][0], cov[0][1], cov[1][1]
    lam = 0.5 * (a + d) + math.sqrt(0.25 * (a - d) ** 2 + b * b)
    v = (b, lam - a) if abs(b) > 1e-300 else ((1.0, 0.0) if a >= d else (0.0, 1.0))
    norm = math.hypot(*v)
    return np.array(v) / norm


def largest_remainder(total, weights):
    s = sum(weights)
    quotas = [total * w / s for w in weights]
    counts = [int(math.floor(q)) for q in quotas]
    rem = sorted(range(len(weights)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in rem[: total - sum(counts)]:
        counts[i] += 1
    return counts


def linear_quantile(sorted_vals, p):
    """Quantile by linear interpolation between order statistics."""
    h = (len(sorted_vals) - 1) * p
    lo = int(math.floor(h))
    hi = min(lo + 1, len(sorted_vals) - 1)
    return sorted_vals[lo] + (h - lo) * (sorted_vals[hi] - sorted_vals[lo])


def brute_force_split(values, y, n_thresholds=16):
    """Best (gain, threshold) per column, evaluating every threshold directly."""
    values = np.asarray(values, dtype=float)
    y = [float(t) for t in y]
    n = len(y)

    def sse(ys):
        if not ys:
            return 0.0
        m = sum(ys) / len(ys)
        return sum((t - m) ** 2 for t in ys)

    total = sse(y)
    gains, thresholds = [], []
    for j in range(values.shape[1]):
        col = [float(v) for v in values[:, j]]
        s = sorted(col)
        q = [linear_quantile(s, k / n_thresholds) for k in range(n_thresholds + 1)]
        cands = [0.5 * (q[k] + q[k + 1]) for k in range(n_thresholds)]
        best, best_t = 0.0, cands[0]
        for t in cands:
            right = [y[i] for i in range(n) if col[i] >= t]
            left = [y[i] for i in range(n) if col[i] < t]
            if not left or not right:
                continue
            g = total - sse(left) - sse(right)
            if g > best + 1e-12 * max(total, 1.0):
                best, best_t = g, t
        gains.append(best)
        thresholds.append(best_t)
    return np.array(gains), np.array(thresholds)


def rewalk(tree, value_of):
    """Leaf id reached by walking ``tree`` with ``value_of(node) -> float``."""
    node = 0
    while tree.left[node] >= 0:
        node = tree.right[node] if value_of(node) >= tree.threshold[node] else tree.left[node]
    return int(tree.leaf_id[node])


def blob_centroids(image, approx_points, radius=3, iterations=10):
    """Intensity-weighted centroid in a window re-centred on each estimate."""
    out = []
    H, W = image.shape
    for px, py in approx_points:
        cx, cy = float(px), float(py)
        for _ in range(iterations):
            x0, x1 = max(int(round(cx)) - radius, 0), min(int(round(cx)) + radius + 1, W)
            y0, y1 = max(int(round(cy)) - radius, 0), min(int(round(cy)) + radius + 1, H)
            tot = sx = sy = 0.0
            for r in range(y0, y1):
                for c in range(x0, x1):
                    w = image[r, c]
                    tot += w
                    sx += w * c
                    sy += w * r
            cx, cy = sx / tot, sy / tot
        out.append((cx, cy))
    return np.array(out)
