"""Reconstruction-error ratios and the noise-rate estimate derived from them.

Every function here takes an ``N x N_c`` error table ``delta`` (entry
``[j, c]`` is the error of class ``c``'s reconstructor on sample ``j``) and
the noisy label vector.
"""

from dataclasses import dataclass

import numpy as np

EPS = 1e-12


class DegenerateTableError(ValueError):
    """The error table carries no information to separate classes."""


def _check(delta, labels):
    delta = np.asarray(delta, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if delta.ndim != 2:
        raise ValueError("error table must be 2-D")
    n, nc = delta.shape
    if nc < 2:
        raise ValueError("ratios need at least two classes")
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= nc):
        raise ValueError(f"labels must lie in [0, {nc})")
    if not np.all(np.isfinite(delta)) or np.any(delta < 0):
        raise ValueError("error table entries must be finite and non-negative")
    return delta, labels


def _labeled(delta, labels):
    return delta[np.arange(delta.shape[0]), labels]


def _min_other(delta, labels):
    masked = delta.copy()
    masked[np.arange(delta.shape[0]), labels] = np.inf
    return masked.min(axis=1)


def _rand(delta, labels):
    nc = delta.shape[1]
    return (delta.sum(axis=1) - _labeled(delta, labels)) / (nc - 1)


def chi_scores(delta, labels) -> np.ndarray:
    """Per-sample chi: labeled-class error over the best other-class error."""
    delta, labels = _check(delta, labels)
    return _labeled(delta, labels) / np.maximum(EPS, _min_other(delta, labels))


def chi(delta_row, label) -> float:
    return float(chi_scores(np.asarray(delta_row, dtype=np.float64)[None, :], [label])[0])


def chi_bar(delta, labels) -> float:
    return float(np.mean(chi_scores(delta, labels)))


def chi_0(delta, labels) -> float:
    """Mean ratio of the labeled-class error to the average other-class error."""
    delta, labels = _check(delta, labels)
    return float(np.mean(_labeled(delta, labels) / np.maximum(EPS, _rand(delta, labels))))


def chi_rand(delta, labels) -> float:
    """Mean ratio of the best error over all classes to the average other-class error."""
    delta, labels = _check(delta, labels)
    return float(np.mean(delta.min(axis=1) / np.maximum(EPS, _rand(delta, labels))))


def noise_from_ratios(c0: float, cr: float) -> tuple[float, float]:
    """``(eta_hat, eta_hat_raw)`` from chi_0 and chi_rand."""
    if cr >= 1.0 - 1e-9:
        raise DegenerateTableError(
            f"degenerate table: chi_rand={cr:.12g} is not below 1, ratios are uninformative"
        )
    raw = (c0 - cr) / (1.0 - cr)
    return float(min(max(raw, 0.0), 1.0)), float(raw)


def estimate_noise(delta, labels) -> tuple[float, float]:
    return noise_from_ratios(chi_0(delta, labels), chi_rand(delta, labels))


def per_class_chi(delta, labels, n_classes: int | None = None) -> np.ndarray:
    """Mean chi over the samples carrying each label (NaN for empty classes)."""
    scores = chi_scores(delta, labels)
    labels = np.asarray(labels, dtype=np.int64)
    nc = n_classes or np.asarray(delta).shape[1]
    sums = np.bincount(labels, weights=scores, minlength=nc)
    counts = np.bincount(labels, minlength=nc)
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / counts


@dataclass(frozen=True)
class RerReport:
    chi: np.ndarray
    chi_bar: float
    chi_0: float
    chi_rand: float
    eta_hat: float
    eta_hat_raw: float
    per_class_chi: np.ndarray

    def to_json(self) -> dict:
        return {
            "chi_bar": self.chi_bar,
            "chi_0": self.chi_0,
            "chi_rand": self.chi_rand,
            "eta_hat": self.eta_hat,
            "eta_hat_raw": self.eta_hat_raw,
            "per_class_chi": [None if np.isnan(v) else float(v) for v in self.per_class_chi],
            "chi": self.chi.tolist(),
        }


def rer_report(delta, labels) -> RerReport:
    """All ratio statistics for one table; raises on a degenerate table."""
    scores = chi_scores(delta, labels)
    c0 = chi_0(delta, labels)
    cr = chi_rand(delta, labels)
    eta, raw = noise_from_ratios(c0, cr)
    return RerReport(
        chi=scores,
        chi_bar=float(scores.mean()),
        chi_0=c0,
        chi_rand=cr,
        eta_hat=eta,
        eta_hat_raw=raw,
        per_class_chi=per_class_chi(delta, labels),
    )
