"""Independent brute-force oracles shared by the test modules.

These deliberately use plain loops and their own arithmetic so they
exercise the library's fast paths without sharing code with them. The
squared-distance expression (dx*dx + dy*dy) + dz*dz matches the
documented kernel contract, which is what makes exact comparisons
possible.
"""

import numpy as np


def finite_diff_grads(fn, tensors, h=1e-5):
    """Central finite differences of the scalar fn() w.r.t. each tensor.

    fn must recompute its value from the live tensor objects so in-place
    perturbation is observed.
    """
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn()
            flat[i] = orig - h
            down = fn()
            flat[i] = orig
            gf[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.abs(n), 1e-6)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def sq_dist(p, q):
    dx, dy, dz = p[0] - q[0], p[1] - q[1], p[2] - q[2]
    return (dx * dx + dy * dy) + dz * dz


def brute_nearest(x, y):
    """(distance, index) of the nearest y point per x point, by full scan."""
    dist = np.empty(x.shape[0], dtype=np.float64)
    idx = np.empty(x.shape[0], dtype=np.int64)
    for i in range(x.shape[0]):
        d = x[i] - y
        d2 = (d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]) + d[:, 2] * d[:, 2]
        j = int(np.argmin(d2))
        idx[i] = j
        dist[i] = np.sqrt(d2[j])
    return dist, idx


def knn_oracle(query, reference, k):
    """Exact knn with (distance, index) ordering by full scan and sort."""
    rows = []
    for p in query:
        d = p - reference
        d2 = (d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]) + d[:, 2] * d[:, 2]
        order = sorted(range(reference.shape[0]), key=lambda j: (d2[j], j))[:k]
        rows.append(order)
    return np.asarray(rows, dtype=np.int64)


def fps_oracle(points, m):
    """Re-simulate the greedy rule: start at the lexicographically smallest
    triple, then repeatedly take the unselected point whose minimum squared
    distance to the selection is largest (first maximum wins)."""
    n = points.shape[0]
    start = min(range(n), key=lambda i: (points[i, 0], points[i, 1], points[i, 2]))
    selected = [start]
    for _ in range(1, m):
        best_i, best_d = -1, -np.inf
        for i in range(n):
            if i in selected:
                continue
            d = min(sq_dist(points[i], points[j]) for j in selected)
            if d > best_d:
                best_i, best_d = i, d
        selected.append(best_i)
    return np.asarray(selected, dtype=np.int64)


def chamfer_oracle(x, y, variant):
    d_xy, _ = brute_nearest(x, y)
    d_yx, _ = brute_nearest(y, x)
    if variant == "l1":
        return 0.5 * (float(np.mean(d_xy)) + float(np.mean(d_yx)))
    return float(np.mean(d_xy**2)) + float(np.mean(d_yx**2))


def dcd_oracle(x, y, alpha):
    def side(a, b):
        _, idx = brute_nearest(a, b)
        counts = {}
        for j in idx:
            counts[j] = counts.get(j, 0) + 1
        total = 0.0
        for i in range(a.shape[0]):
            d2 = sq_dist(a[i], b[idx[i]])
            total += 1.0 - np.exp(-alpha * d2) / counts[idx[i]]
        return total / a.shape[0]

    return 0.5 * (side(x, y) + side(y, x))


def conv_transpose_oracle(x, w, stride):
    c_in, length = x.shape
    _, c_out, k = w.shape
    out = np.zeros((c_out, (length - 1) * stride + k), dtype=x.dtype)
    for l in range(length):
        for ci in range(c_in):
            for co in range(c_out):
                for kk in range(k):
                    out[co, l * stride + kk] += x[ci, l] * w[ci, co, kk]
    return out


def random_cloud(rng, n, scale=1.0):
    return rng.uniform(-scale, scale, size=(n, 3))
