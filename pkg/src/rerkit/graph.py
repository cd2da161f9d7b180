"""kNN fuzzy graph and low-dimensional similarity curve for the UMAP regularizer."""

import functools
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import kernels
from .lsq import levenberg_marquardt

log = logging.getLogger(__name__)


def knn_graph(points: np.ndarray, k: int, metric: str = "euclidean"):
    """Exact k nearest neighbours of every point, self excluded.

    Candidates come from the Gram-matrix distance expansion; the final
    distances are recomputed from coordinate differences and sorted by
    ``(distance, index)``.
    """
    if metric != "euclidean":
        raise ValueError(f"unsupported metric {metric!r}")
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = points.shape[0]
    if k < 1:
        raise ValueError("k must be positive")
    if n <= k:
        raise ValueError(f"need more than k={k} points, got {n}; lower n_neighbors for small classes")
    m = min(n - 1, k + 16)
    sq = np.einsum("ij,ij->i", points, points)
    cand = np.empty((n, m), dtype=np.int64)
    for start in range(0, n, 2048):
        stop = min(start + 2048, n)
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * (points[start:stop] @ points.T)
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        if m < n - 1:
            cand[start:stop] = np.argpartition(d2, m - 1, axis=1)[:, :m]
        else:
            cand[start:stop] = np.argsort(d2, axis=1)[:, :m]
    return kernels.refine_knn(points, cand, k)


def smooth_knn_calibration(dists: np.ndarray, n_iter: int = 64, tol: float = 1e-5):
    """Per-row ``rho`` (nearest distance) and ``sigma`` solving
    ``sum_j exp(-max(0, d_j - rho) / sigma) = log2(k)`` by bisection.

    Rows with no spread beyond ``rho`` get ``sigma = 1e3 * mean(d)``; all-zero
    rows get ``sigma = 1``.
    """
    dists = np.atleast_2d(np.asarray(dists, dtype=np.float64))
    return kernels.smooth_knn(np.ascontiguousarray(dists), n_iter, tol)


def fuzzy_union(w1, w2):
    return w1 + w2 - w1 * w2


@dataclass
class FuzzyGraph:
    """Symmetric membership graph as directed edge arrays (both directions stored)."""

    head: np.ndarray
    tail: np.ndarray
    weight: np.ndarray
    n_vertices: int
    knn_indices: np.ndarray
    knn_dists: np.ndarray

    @property
    def n_edges(self) -> int:
        return self.head.shape[0]

    def to_sparse(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.weight, (self.head, self.tail)), shape=(self.n_vertices,) * 2)


def membership_strengths(knn_dists, rho, sigma):
    return np.exp(-np.maximum(knn_dists - rho[:, None], 0.0) / sigma[:, None])


def fuzzy_graph(points: np.ndarray, k: int) -> FuzzyGraph:
    idx, dists = knn_graph(points, k)
    rho, sigma = smooth_knn_calibration(dists)
    w = membership_strengths(dists, rho, sigma)
    n = points.shape[0]
    rows = np.repeat(np.arange(n), k)
    P = sp.coo_matrix((w.ravel(), (rows, idx.ravel())), shape=(n, n)).tocsr()
    P.sum_duplicates()
    Pt = P.T.tocsr()
    W = (P + Pt - P.multiply(Pt)).tocoo()
    keep = (W.row != W.col) & (W.data > 0)
    order = np.lexsort((W.col[keep], W.row[keep]))
    return FuzzyGraph(
        head=W.row[keep][order].astype(np.int64),
        tail=W.col[keep][order].astype(np.int64),
        weight=np.minimum(W.data[keep][order], 1.0),
        n_vertices=n,
        knn_indices=idx,
        knn_dists=dists,
    )


# ---------------------------------------------------------------------------
# low-dimensional similarity curve q(x) = 1 / (1 + a x^(2b))
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimilarityCurve:
    a: float
    b: float
    spread: float
    min_dist: float
    cost: float = float("nan")
    method: str = "lm"
    trace: tuple = ()

    def q(self, x):
        x = np.asarray(x, dtype=np.float64)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            return 1.0 / (1.0 + self.a * x ** (2.0 * self.b))


def _target(xv, spread, min_dist):
    return np.where(xv < min_dist, 1.0, np.exp(-(xv - min_dist) / spread))


@functools.lru_cache(maxsize=32)
def fit_similarity_curve(spread: float, min_dist: float, n_points: int = 300, max_iter: int = 500):
    """Least-squares fit of ``(a, b)`` to the piecewise membership target.

    The target is 1 below ``min_dist`` and ``exp(-(x - min_dist)/spread)``
    beyond, sampled on ``n_points`` over ``[0, 3*spread]``. Large
    ``(spread, min_dist)`` pairs legitimately land on negative ``a`` and
    ``b``; a coarse grid is used only when the damped Gauss-Newton iteration
    goes non-finite. Results are cached, since every class fits the same pair.
    """
    if not spread > 0:
        raise ValueError("spread must be positive")
    xv = np.linspace(0.0, 3.0 * spread, n_points)
    yv = _target(xv, spread, min_dist)
    logx = np.log(np.where(xv > 0, xv, 1.0))

    def residual(p):
        a, b = p
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            pw = np.where(xv > 0, xv ** (2.0 * b), 0.0 if b > 0 else np.inf)
            return 1.0 / (1.0 + a * pw) - yv

    def jacobian(p):
        a, b = p
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            pw = np.where(xv > 0, xv ** (2.0 * b), 0.0)
            q = 1.0 / (1.0 + a * pw)
            da = -(q**2) * pw
            db = -(q**2) * a * pw * 2.0 * logx
        return np.column_stack([da, db])

    res = levenberg_marquardt(residual, jacobian, [1.58, 0.9], max_iter=max_iter, ftol=1e-10)
    if res.converged and np.isfinite(res.cost):
        a, b = (float(v) for v in res.params)
        return SimilarityCurve(a, b, spread, min_dist, 2 * res.cost, "lm", tuple(res.trace))
    log.warning("similarity curve fit diverged for spread=%g min_dist=%g; using grid search", spread, min_dist)
    best = (math.inf, 1.0, 1.0)
    for a in np.linspace(-5.0, 5.0, 101):
        for b in np.linspace(-3.0, 3.0, 61):
            r = residual((a, b))
            if np.all(np.isfinite(r)):
                c = float(r @ r)
                if c < best[0]:
                    best = (c, a, b)
    return SimilarityCurve(float(best[1]), float(best[2]), spread, min_dist, best[0], "grid")
