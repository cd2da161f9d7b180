"""Gaussian fits of error distributions and rank-alignment measures."""

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, rankdata


@dataclass(frozen=True)
class GaussianFit:
    mean: float
    std: float
    r_squared: float
    population: str | None = None
    class_id: int | None = None


def fit_gaussian(values, n_bins: int = 100, population: str | None = None, class_id: int | None = None) -> GaussianFit:
    """Moment-matched normal and its R^2 against a ``n_bins`` equal-width histogram.

    The expected count of a bin is ``N * width * pdf(center)``.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("need at least two values")
    mu = float(x.mean())
    sd = float(x.std(ddof=1))
    if not sd > 0:
        raise ValueError("zero variance: a Gaussian fit is undefined")
    counts, edges = np.histogram(x, bins=n_bins)
    width = edges[1] - edges[0]
    centers = 0.5 * (edges[:-1] + edges[1:])
    expected = x.size * width * norm.pdf(centers, mu, sd)
    ss_res = float(np.sum((counts - expected) ** 2))
    ss_tot = float(np.sum((counts - counts.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return GaussianFit(mu, sd, r2, population, class_id)


def error_distribution_fits(delta, labels, n_bins: int = 100) -> list[GaussianFit]:
    """In-class and out-of-class fits for every reconstructor column.

    For column ``c`` the in-class population is the errors on samples labeled
    ``c`` and the out-of-class population is the errors on all other samples.
    """
    delta = np.asarray(delta, dtype=np.float64)
    labels = np.asarray(labels)
    fits = []
    for c in range(delta.shape[1]):
        own = labels == c
        for tag, rows in (("in_class", own), ("out_of_class", ~own)):
            fits.append(fit_gaussian(delta[rows, c], n_bins, tag, c))
    return fits


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.size < 2:
        raise ValueError("pearson needs two equal-length vectors of at least two values")
    da = a - a.mean()
    db = b - b.mean()
    den = np.sqrt(np.dot(da, da) * np.dot(db, db))
    if den == 0:
        raise ValueError("pearson is undefined for a constant vector")
    return float(np.clip(np.dot(da, db) / den, -1.0, 1.0))


def spearman(a, b) -> float:
    """Pearson correlation of mid-ranks."""
    return pearson(rankdata(a, method="average"), rankdata(b, method="average"))


def _minmax(x):
    lo, hi = x.min(), x.max()
    return np.zeros_like(x) if hi == lo else (x - lo) / (hi - lo)


def ndcg(scores_a, scores_b) -> float:
    """nDCG of the ordering by ``scores_a`` using min-max scaled ``scores_b`` as relevance."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.size == 0:
        raise ValueError("ndcg needs two equal-length non-empty vectors")
    rel = _minmax(b)
    # a is min-max scaled too; the affine map does not change its order
    order = np.argsort(-_minmax(a), kind="stable")
    disc = 1.0 / np.log2(np.arange(2, a.size + 2))
    ideal = float(np.sum(np.sort(rel)[::-1] * disc))
    if ideal == 0:
        return 1.0
    return float(np.sum(rel[order] * disc) / ideal)


def alignment(scores_a, scores_b) -> dict:
    """Spearman and nDCG (both directions) between two score vectors."""
    return {
        "spearman": spearman(scores_a, scores_b),
        "ndcg_a_by_b": ndcg(scores_b, scores_a),
        "ndcg_b_by_a": ndcg(scores_a, scores_b),
        "n": int(np.asarray(scores_a).size),
    }
