"""Difficulty as a function of samples per class, and its large-n limit.

The mean ratio measured after training on ``n`` samples per class is fitted
by the rational law ``(chi_inf * n**g0 + g1) / (n**g0 + g2)`` with ``g0``
fixed, which extrapolates to ``chi_inf`` as ``n`` grows.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .lsq import ConvergenceError, levenberg_marquardt
from .reconstructor import AutoencoderConfig, error_table, fit_reconstructors
from .rer import chi_bar
from .rng import substream

log = logging.getLogger(__name__)

GAMMA0 = 1.808


def scaling_law(n, chi_inf, gamma1, gamma2, gamma0=GAMMA0):
    p = np.asarray(n, dtype=np.float64) ** gamma0
    return (chi_inf * p + gamma1) / (p + gamma2)


@dataclass
class ScalingFit:
    chi_inf: float
    gamma1: float
    gamma2: float
    gamma0: float
    r_squared: float
    points: list
    crosses_one: bool = False
    trace: list = field(default_factory=list, repr=False)

    def predict(self, n):
        return scaling_law(n, self.chi_inf, self.gamma1, self.gamma2, self.gamma0)

    def to_json(self) -> dict:
        return {
            "chi_inf": self.chi_inf,
            "gamma0": self.gamma0,
            "gamma1": self.gamma1,
            "gamma2": self.gamma2,
            "r_squared": self.r_squared,
            "crosses_one": self.crosses_one,
            "points": [[float(n), float(v)] for n, v in self.points],
        }


def fit_scaling(points, gamma0: float = GAMMA0, max_iter: int = 1000) -> ScalingFit:
    """Least-squares fit of ``(chi_inf, gamma1, gamma2)`` to ``(n, chi_bar_n)`` pairs.

    Starts from ``chi_inf`` = the value at the largest ``n`` and
    ``gamma1 = gamma2 = n_max**gamma0``. Raises :class:`ConvergenceError`
    (carrying the cost trace) if the iteration limit is hit.
    """
    pts = sorted((float(n), float(v)) for n, v in points)
    if len(pts) < 4:
        raise ValueError(f"need at least 4 points, got {len(pts)}")
    n = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if np.any(n <= 0):
        raise ValueError("sample counts must be positive")
    crosses = bool(np.any(y < 1) and np.any(y > 1))
    if crosses:
        log.warning("chi_bar_n crosses 1; the rational law is not meant for such sequences")
    pw = n**gamma0

    def residual(p):
        return (p[0] * pw + p[1]) / (pw + p[2]) - y

    def jacobian(p):
        den = pw + p[2]
        return np.column_stack([pw / den, 1.0 / den, -(p[0] * pw + p[1]) / den**2])

    g_init = float(pw.max())
    res = levenberg_marquardt(
        residual, jacobian, [y[-1], g_init, g_init], max_iter=max_iter, ftol=1e-15, xtol=1e-15, gtol=1e-15
    )
    if not res.converged:
        raise ConvergenceError(
            f"scaling fit did not converge in {max_iter} iterations (cost {res.cost:.3e})", res.trace
        )
    fitted = y + residual(res.params)
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        r2 = 1.0 if ss_res <= 1e-24 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    chi_inf, g1, g2 = (float(v) for v in res.params)
    return ScalingFit(chi_inf, g1, g2, float(gamma0), r2, pts, crosses, res.trace)


def finite_size_gap(chi_bar_now: float, fit: ScalingFit) -> float:
    """``chi_inf - chi_bar_now``; negative when the current value exceeds the limit."""
    return float(fit.chi_inf - chi_bar_now)


@dataclass(frozen=True)
class SweepPoint:
    n: int
    replicate: int
    chi_bar: float


def subsample_per_class(labels, n_classes: int, n: int, seed: int, replicate: int = 0) -> np.ndarray:
    """Row indices holding ``n`` samples of every class, drawn without replacement and sorted."""
    labels = np.asarray(labels)
    picks = []
    for c in range(n_classes):
        rows = np.flatnonzero(labels == c)
        if n > rows.size:
            raise ValueError(f"budget n={n} exceeds the {rows.size} samples of class {c}")
        rng = substream(seed, "subsample", n, replicate, c)
        picks.append(np.sort(rng.choice(rows, size=n, replace=False)))
    return np.sort(np.concatenate(picks))


def size_sweep(features, labels, n_classes: int, budgets, config: AutoencoderConfig | None = None, seed: int | None = None, replicates: int = 1, workers: int | None = None) -> list[SweepPoint]:
    """Train on ``n`` samples per class for every budget and score the FULL dataset."""
    config = config or AutoencoderConfig()
    seed = config.seed if seed is None else seed
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=n_classes)
    for n in budgets:
        short = np.flatnonzero(counts < n)
        if short.size:
            c = int(short[0])
            raise ValueError(f"budget n={n} exceeds the {counts[c]} samples of class {c}")
    out = []
    for n in budgets:
        for rep in range(replicates):
            rows = subsample_per_class(labels, n_classes, int(n), seed, rep)
            recs = fit_reconstructors(features[rows], labels[rows], n_classes, config, workers)
            table = error_table(recs, features, workers)
            out.append(SweepPoint(int(n), rep, chi_bar(table, labels)))
            log.info("budget n=%d replicate %d: chi_bar=%.5f", n, rep, out[-1].chi_bar)
    return out


def mean_points(sweep: list[SweepPoint]) -> list[tuple[int, float]]:
    """Average replicates into one ``(n, chi_bar_n)`` pair per budget."""
    by_n: dict[int, list[float]] = {}
    for p in sweep:
        by_n.setdefault(p.n, []).append(p.chi_bar)
    return [(n, float(np.mean(v))) for n, v in sorted(by_n.items())]
