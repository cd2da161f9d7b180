"""Mistake rankings, threshold predictions and calibrated mistake probabilities.

Scores are the per-sample chi ratios. A closed-form threshold turns them
into binary predictions; emulating mistakes inside the error table gives
the score distribution of mislabeled samples, and a Bayes ratio of two
reflected kernel density estimates turns a score into a probability.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import kernels
from .rer import EPS, chi_0, chi_rand, chi_scores, noise_from_ratios
from .rng import substream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ThresholdAnsatz:
    gamma4: float = 1.01
    gamma5: float = 1.5
    gamma6: float = 13.8
    # feed the unclamped noise estimate (floored at 0) into the exponent;
    # False uses the estimate clamped to [0, 1] instead
    use_raw_eta: bool = True


def threshold(chi0: float, eta_hat: float, ansatz: ThresholdAnsatz | None = None) -> float:
    """``gamma4 * chi0 ** (-gamma5 / (1 + gamma6 * eta))`` with ``eta`` floored at 0."""
    ansatz = ansatz or ThresholdAnsatz()
    eta = max(float(eta_hat), 0.0)
    if not ansatz.use_raw_eta:
        eta = min(eta, 1.0)
    return float(ansatz.gamma4 * chi0 ** (-ansatz.gamma5 / (1.0 + ansatz.gamma6 * eta)))


def predict(scores, thr: float) -> np.ndarray:
    """Mistaken where ``score >= thr``; a score equal to the threshold counts as mistaken."""
    return np.asarray(scores, dtype=np.float64) >= thr


def emulate_mistake_scores(delta, labels, seed: int = 0):
    """Chi each sample would have if it were labeled with a random other class.

    Returns ``(scores, fake_labels)``.
    """
    delta = np.asarray(delta, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    nc = delta.shape[1]
    if nc < 2:
        raise ValueError("emulation needs at least two classes")
    shift = substream(seed, "emulate").integers(1, nc, size=labels.shape[0])
    fake = (labels + shift) % nc
    return chi_scores(delta, fake), fake


# ---------------------------------------------------------------------------
# density ratio posterior
# ---------------------------------------------------------------------------


def silverman_bandwidth(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n < 2:
        return 1.0
    sd = float(np.std(x, ddof=1))
    q75, q25 = np.percentile(x, [75, 25])
    iqr = float(q75 - q25) / 1.34
    spread = min(sd, iqr) if min(sd, iqr) > 0 else max(sd, iqr)
    if spread <= 0:
        spread = 1e-3 * max(1.0, abs(float(x.mean())))
    return 0.9 * spread * n ** (-0.2)


def kde_reflect(points, samples, bandwidth: float, boundary: float) -> np.ndarray:
    """Gaussian KDE of ``samples`` with mass mirrored back below ``boundary``."""
    points = np.ascontiguousarray(np.atleast_1d(points), dtype=np.float64)
    samples = np.ascontiguousarray(samples, dtype=np.float64)
    return kernels.kde_reflect(points, samples, float(bandwidth), float(boundary))


class MistakePosterior:
    """``p(mistake | chi) = eta * p(chi | mistake) / p(chi)``, clamped to [0, 1].

    Both densities are Gaussian KDEs with Silverman bandwidths, reflected
    about the largest score seen in either population.
    """

    def __init__(self, observed, emulated, eta_hat: float):
        self.observed = np.asarray(observed, dtype=np.float64)
        self.emulated = np.asarray(emulated, dtype=np.float64)
        self.eta = float(eta_hat)
        self.boundary = float(max(self.observed.max(), self.emulated.max()))
        self.h_obs = silverman_bandwidth(self.observed)
        self.h_emu = silverman_bandwidth(self.emulated)

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        if self.eta <= 0:
            return np.zeros_like(x)
        p_obs = kde_reflect(x, self.observed, self.h_obs, self.boundary)
        p_mis = kde_reflect(x, self.emulated, self.h_emu, self.boundary)
        return np.clip(self.eta * p_mis / np.maximum(EPS, p_obs), 0.0, 1.0)


def mistake_posterior(observed_chi, emulated_chi, eta_hat: float) -> np.ndarray:
    """Posterior mistake probability at every observed score."""
    if eta_hat <= 0:
        log.warning("noise estimate %.4g is not positive; mistake posterior is zero everywhere", eta_hat)
        return np.zeros(np.asarray(observed_chi).shape[0])
    return MistakePosterior(observed_chi, emulated_chi, eta_hat)(observed_chi)


def confidence_weights(probabilities, p_star: float) -> np.ndarray:
    """Distance of each probability from ``p_star``, rescaled to [0, 1] on each side."""
    if not 0.0 < p_star < 1.0:
        raise ValueError(f"p_star must lie strictly inside (0, 1), got {p_star}")
    p = np.asarray(probabilities, dtype=np.float64)
    return np.where(p > p_star, (p - p_star) / (1.0 - p_star), (p_star - p) / p_star)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _ratio(num, den):
    return float(num) / float(den) if den > 0 else 0.0


def auroc(scores, mask) -> float | None:
    """Mann-Whitney AUROC with mid-ranks for ties; ``None`` when one class is empty."""
    scores = np.asarray(scores, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    n_pos = int(mask.sum())
    n_neg = mask.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores, method="average")
    u = ranks[mask].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def weighted_f1(predictions, mask, weights) -> float:
    pred = np.asarray(predictions, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    w = np.asarray(weights, dtype=np.float64)
    s_tp = w[pred & mask].sum()
    s_fp = w[pred & ~mask].sum()
    s_fn = w[~pred & mask].sum()
    return _ratio(2.0 * s_tp, 2.0 * s_tp + s_fp + s_fn)


def metrics(predictions, mask, scores=None, weights=None) -> dict:
    """Precision, recall, F1, AUROC (when scores are given) and the weighted variants.

    Empty denominators give 0. ``ncfd`` is ``None`` when F1 is exactly 1.
    """
    pred = np.asarray(predictions, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != mask.shape:
        raise ValueError("predictions and mask differ in length")
    tp = int(np.sum(pred & mask))
    fp = int(np.sum(pred & ~mask))
    fn = int(np.sum(~pred & mask))
    out = {
        "precision": _ratio(tp, tp + fp),
        "recall": _ratio(tp, tp + fn),
        "f1": _ratio(2 * tp, 2 * tp + fp + fn),
        "auroc": auroc(scores, mask) if scores is not None else None,
    }
    if weights is not None:
        f1w = weighted_f1(pred, mask, weights)
        out["f1_weighted"] = f1w
        f1 = out["f1"]
        out["ncfd"] = None if f1 == 1.0 else (f1w - f1) / (1.0 - f1)
    return out


# ---------------------------------------------------------------------------
# one-call pipeline
# ---------------------------------------------------------------------------


@dataclass
class MistakeReport:
    scores: np.ndarray
    predictions: np.ndarray
    threshold_used: float
    probabilities: np.ndarray | None = None
    weights: np.ndarray | None = None
    p_star: float | None = None
    metrics: dict = field(default_factory=dict)

    @property
    def ranking(self) -> np.ndarray:
        """Sample indices from most to least suspicious (stable on ties)."""
        return np.argsort(-self.scores, kind="stable")

    def to_json(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "threshold_used": self.threshold_used,
            "p_star": self.p_star,
            "n_flagged": int(self.predictions.sum()),
            "metrics": self.metrics,
            "ranking": self.ranking.tolist(),
            "scores": arr(self.scores),
            "predictions": arr(self.predictions.astype(int)),
            "probabilities": arr(self.probabilities),
            "weights": arr(self.weights),
        }


def detect_mistakes(delta, labels, ansatz: ThresholdAnsatz | None = None, seed: int = 0, mask=None, with_posterior: bool = True) -> MistakeReport:
    """Score, threshold and (optionally) calibrate every sample of an error table."""
    ansatz = ansatz or ThresholdAnsatz()
    scores = chi_scores(delta, labels)
    c0 = chi_0(delta, labels)
    eta, eta_raw = noise_from_ratios(c0, chi_rand(delta, labels))
    thr = threshold(c0, eta_raw if ansatz.use_raw_eta else eta, ansatz)
    report = MistakeReport(scores, predict(scores, thr), thr)
    if with_posterior:
        emulated, _ = emulate_mistake_scores(delta, labels, seed)
        if eta_raw <= 0:
            log.warning("noise estimate %.4g is not positive; mistake posterior is zero everywhere", eta_raw)
            report.probabilities = np.zeros_like(scores)
        else:
            post = MistakePosterior(scores, emulated, eta)
            report.probabilities = post(scores)
            # p* must sit strictly inside (0, 1) for the weight map
            report.p_star = float(np.clip(post(thr)[0], 1e-6, 1.0 - 1e-6))
            report.weights = confidence_weights(report.probabilities, report.p_star)
    if mask is not None:
        report.metrics = metrics(report.predictions, mask, scores, report.weights)
    return report
