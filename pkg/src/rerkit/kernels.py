"""Hot numeric kernels, each in a numba flavour and a numpy flavour.

The public names at the bottom dispatch to one flavour according to
``rerkit._accel.USE_JIT``. Both flavours are importable directly
(``*_nb`` / ``*_np``) so tests and the benchmark can compare them.
"""

import math

import numpy as np

from ._accel import USE_JIT, njit, prange

# ---------------------------------------------------------------------------
# exact kNN refinement
# ---------------------------------------------------------------------------


@njit(parallel=True)
def refine_knn_nb(X, cand, k):
    n, m = cand.shape
    d = X.shape[1]
    out_idx = np.empty((n, k), dtype=np.int64)
    out_dist = np.empty((n, k), dtype=np.float64)
    for i in prange(n):
        dist = np.empty(m, dtype=np.float64)
        ids = np.sort(cand[i])
        for t in range(m):
            j = ids[t]
            acc = 0.0
            for c in range(d):
                diff = X[i, c] - X[j, c]
                acc += diff * diff
            dist[t] = math.sqrt(acc)
        order = np.argsort(dist, kind="mergesort")
        for t in range(k):
            out_idx[i, t] = ids[order[t]]
            out_dist[i, t] = dist[order[t]]
    return out_idx, out_dist


def refine_knn_np(X, cand, k, chunk=64):
    n, m = cand.shape
    out_idx = np.empty((n, k), dtype=np.int64)
    out_dist = np.empty((n, k), dtype=np.float64)
    for start in range(0, n, chunk):
        rows = np.arange(start, min(start + chunk, n))
        ids = np.sort(cand[rows], axis=1)
        diff = X[ids] - X[rows][:, None, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        order = np.lexsort((ids, dist), axis=-1)[:, :k]
        out_idx[rows] = np.take_along_axis(ids, order, axis=1)
        out_dist[rows] = np.take_along_axis(dist, order, axis=1)
    return out_idx, out_dist


# ---------------------------------------------------------------------------
# smooth kNN calibration (rho, sigma per row)
# ---------------------------------------------------------------------------


@njit(parallel=True)
def smooth_knn_nb(dists, n_iter, tol):
    n, k = dists.shape
    target = math.log2(k)
    rho = np.empty(n)
    sigma = np.empty(n)
    for i in prange(n):
        row = dists[i]
        r = row[0]
        mean_d = 0.0
        spread = False
        for j in range(k):
            mean_d += row[j]
            if row[j] > r:
                spread = True
        mean_d /= k
        rho[i] = r
        if mean_d <= 0.0:
            sigma[i] = 1.0
            continue
        hi = 1e3 * mean_d
        if not spread:
            sigma[i] = hi
            continue
        lo = 0.0
        mid = hi
        for _ in range(n_iter):
            mid = 0.5 * (lo + hi)
            psum = 0.0
            for j in range(k):
                gap = row[j] - r
                if gap < 0.0:
                    gap = 0.0
                psum += math.exp(-gap / mid)
            if abs(psum - target) < tol:
                break
            if psum > target:
                hi = mid
            else:
                lo = mid
        floor = 1e-3 * mean_d
        sigma[i] = mid if mid > floor else floor
    return rho, sigma


def smooth_knn_np(dists, n_iter, tol):
    n, k = dists.shape
    target = math.log2(k)
    rho = dists[:, 0].copy()
    mean_d = dists.mean(axis=1)
    spread = (dists > rho[:, None]).any(axis=1)
    hi = 1e3 * mean_d
    sigma = hi.copy()
    active = (mean_d > 0) & spread
    lo = np.zeros(n)
    mid = hi.copy()
    gaps = np.maximum(dists - rho[:, None], 0.0)
    for _ in range(n_iter):
        if not active.any():
            break
        a = np.flatnonzero(active)
        mid[a] = 0.5 * (lo[a] + hi[a])
        psum = np.exp(-gaps[a] / mid[a, None]).sum(axis=1)
        done = np.abs(psum - target) < tol
        up = psum > target
        hi[a[~done & up]] = mid[a[~done & up]]
        lo[a[~done & ~up]] = mid[a[~done & ~up]]
        active[a[done]] = False
    solved = (mean_d > 0) & spread
    sigma[solved] = np.maximum(mid[solved], 1e-3 * mean_d[solved])
    sigma[mean_d <= 0] = 1.0
    return rho, sigma


# ---------------------------------------------------------------------------
# UMAP pair cross-entropy in latent space
# ---------------------------------------------------------------------------


@njit
def umap_pairs_nb(Z, head, tail, negative, a, b, repulsion, lo, hi):
    """Summed pair loss and its gradient w.r.t. the latent rows ``Z``."""
    n_pairs = head.shape[0]
    dim = Z.shape[1]
    dZ = np.zeros_like(Z)
    total = 0.0
    for p in range(n_pairs):
        i = head[p]
        j = tail[p]
        s = 0.0
        for c in range(dim):
            diff = Z[i, c] - Z[j, c]
            s += diff * diff
        if s > 0.0:
            u = a * s**b
            den = 1.0 + u
            q = 1.0 / den if den != 0.0 else np.inf
        elif b > 0.0:
            u = 0.0
            q = 1.0
        else:
            u = 0.0
            q = -1.0
        free = lo < q < hi
        qc = min(max(q, lo), hi)
        if negative[p]:
            total -= repulsion * math.log(1.0 - qc)
            g = repulsion * (b / s) * (qc * u - 1.0) if free else 0.0
        else:
            total -= math.log(qc)
            g = qc * u * b / s if free else 0.0
        if g != 0.0:
            for c in range(dim):
                step = 2.0 * g * (Z[i, c] - Z[j, c])
                dZ[i, c] += step
                dZ[j, c] -= step
    return total, dZ


def umap_pairs_np(Z, head, tail, negative, a, b, repulsion, lo, hi):
    # pair math in float64 like the compiled loop: in float32 the upper clip
    # 1 - 1e-12 rounds to 1 and log1p(-q) overflows
    diff = Z[head].astype(np.float64) - Z[tail]
    s = np.einsum("ij,ij->i", diff, diff)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        pos_s = s > 0
        u = np.zeros_like(s)
        u[pos_s] = a * s[pos_s] ** b
        den = 1.0 + u
        q = np.where(den != 0.0, 1.0 / np.where(den != 0.0, den, 1.0), np.inf)
        q = np.where(pos_s, q, 1.0 if b > 0.0 else -1.0)
        free = (q > lo) & (q < hi)
        qc = np.clip(q, lo, hi)
        neg = negative.astype(bool)
        total = -(repulsion * np.log1p(-qc[neg])).sum() - np.log(qc[~neg]).sum()
        g = np.where(neg, repulsion * (b / s) * (qc * u - 1.0), qc * u * b / s)
        g = np.where(free, g, 0.0)
    step = 2.0 * g[:, None] * diff
    dZ = np.zeros(Z.shape)
    np.add.at(dZ, head, step)
    np.add.at(dZ, tail, -step)
    return float(total), dZ.astype(Z.dtype, copy=False)


# ---------------------------------------------------------------------------
# reflected Gaussian KDE
# ---------------------------------------------------------------------------

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@njit(parallel=True)
def kde_reflect_nb(points, samples, h, boundary):
    m = points.shape[0]
    n = samples.shape[0]
    out = np.empty(m)
    norm = _INV_SQRT_2PI / (n * h)
    for i in prange(m):
        x = points[i]
        acc = 0.0
        for j in range(n):
            z1 = (x - samples[j]) / h
            z2 = (x - (2.0 * boundary - samples[j])) / h
            acc += math.exp(-0.5 * z1 * z1) + math.exp(-0.5 * z2 * z2)
        out[i] = acc * norm
    return out


def kde_reflect_np(points, samples, h, boundary, chunk=2048):
    points = np.asarray(points, dtype=np.float64)
    mirrored = np.concatenate([samples, 2.0 * boundary - samples])
    out = np.empty(points.shape[0])
    norm = _INV_SQRT_2PI / (samples.shape[0] * h)
    for start in range(0, points.shape[0], chunk):
        z = (points[start : start + chunk, None] - mirrored[None, :]) / h
        out[start : start + chunk] = np.exp(-0.5 * z * z).sum(axis=1) * norm
    return out


# ---------------------------------------------------------------------------
# fused Adam update (in place)
# ---------------------------------------------------------------------------


@njit(fastmath=True)
def _adam_kernel(p, g, m, v, b1, a1, b2, a2, step, inv_c2, eps, shadow):
    for i in range(p.shape[0]):
        gi = g[i]
        mi = b1 * m[i] + a1 * gi
        vi = b2 * v[i] + a2 * gi * gi
        m[i] = mi
        v[i] = vi
        pi = p[i] - step * mi / (math.sqrt(vi * inv_c2) + eps)
        p[i] = pi
        shadow[i] = pi


def adam_update_nb(p, g, m, v, lr, beta1, beta2, eps, c1, c2, shadow):
    """In-place Adam step on ``p``; ``shadow`` receives the updated values
    in the same pass. Coefficients are cast to the array dtype so float32
    arrays stay in single precision inside the loop."""
    t = m.dtype.type
    _adam_kernel(p, g, m, v, t(beta1), t(1.0 - beta1), t(beta2), t(1.0 - beta2), t(lr / c1), t(1.0 / c2), t(eps), shadow)


def adam_update_np(p, g, m, v, lr, beta1, beta2, eps, c1, c2, shadow):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    if shadow is not p:
        shadow[:] = p


if USE_JIT:
    refine_knn = refine_knn_nb
    smooth_knn = smooth_knn_nb
    umap_pairs = umap_pairs_nb
    kde_reflect = kde_reflect_nb
    adam_update = adam_update_nb
else:
    refine_knn = refine_knn_np
    smooth_knn = smooth_knn_np
    umap_pairs = umap_pairs_np
    kde_reflect = kde_reflect_np
    adam_update = adam_update_np
