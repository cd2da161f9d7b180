"""Controlled label corruption with ground-truth mistake masks.

Symmetric, asymmetric and confidence-based noise flip each sample
independently with probability ``rate``; the annotator kind copies exactly
``round(rate * N)`` labels from a real annotator's disagreements.
"""

from dataclasses import dataclass

import numpy as np

from .rng import substream

KINDS = ("symmetric", "asymmetric", "confidence", "annotator")


class NoiseError(ValueError):
    pass


@dataclass
class NoiseSpec:
    kind: str
    rate: float
    seed: int = 0
    predictions: np.ndarray | None = None
    annotator_labels: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise NoiseError(f"unknown noise kind {self.kind!r}; choose from {', '.join(KINDS)}")
        _check_rate(self.rate)
        if self.kind == "confidence" and self.predictions is None:
            raise NoiseError("confidence noise needs a prediction matrix")
        if self.kind == "annotator" and self.annotator_labels is None:
            raise NoiseError("annotator noise needs annotator labels")


def _check_rate(rate):
    if not 0.0 <= float(rate) <= 1.0:
        raise NoiseError(f"noise rate must lie in [0, 1], got {rate}")


def _check_labels(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if n_classes < 2:
        raise NoiseError("label noise needs at least two classes")
    if labels.ndim != 1:
        raise NoiseError("labels must be a vector")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise NoiseError(f"labels must lie in [0, {n_classes})")
    return labels


def _flip_mask(n, rate, seed):
    return substream(seed, "noise", "flip").random(n) < rate


def inject_symmetric(labels, n_classes: int, rate: float, seed: int = 0):
    """Flip each label with probability ``rate`` to a uniformly chosen other class."""
    labels = _check_labels(labels, n_classes)
    _check_rate(rate)
    flip = _flip_mask(labels.size, rate, seed)
    shift = substream(seed, "noise", "target").integers(1, n_classes, size=labels.size)
    noisy = np.where(flip, (labels + shift) % n_classes, labels)
    return noisy, noisy != labels


def inject_asymmetric(labels, n_classes: int, rate: float, seed: int = 0):
    """Flip each label with probability ``rate`` to the next class, ``(c + 1) mod N_c``."""
    labels = _check_labels(labels, n_classes)
    _check_rate(rate)
    flip = _flip_mask(labels.size, rate, seed)
    noisy = np.where(flip, (labels + 1) % n_classes, labels)
    return noisy, noisy != labels


def inject_confidence(labels, predictions, rate: float, seed: int = 0):
    """Flip each label with probability ``rate`` to the most likely wrong class.

    Ties go to the lowest class index.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.ndim != 2:
        raise NoiseError("predictions must be an N x N_c matrix")
    labels = _check_labels(labels, predictions.shape[1])
    _check_rate(rate)
    if predictions.shape[0] != labels.size:
        raise NoiseError(f"predictions have {predictions.shape[0]} rows for {labels.size} labels")
    if not np.allclose(predictions.sum(axis=1), 1.0, atol=1e-6, rtol=0):
        raise NoiseError("prediction rows must sum to 1")
    masked = predictions.copy()
    masked[np.arange(labels.size), labels] = -np.inf
    runner_up = np.argmax(masked, axis=1)  # first maximum, i.e. lowest index on ties
    flip = _flip_mask(labels.size, rate, seed)
    noisy = np.where(flip, runner_up, labels)
    return noisy, noisy != labels


def subsample_annotator(clean, annotator_labels, rate: float, seed: int = 0):
    """Copy the annotator's label on exactly ``round(rate * N)`` disagreeing samples."""
    clean = np.asarray(clean, dtype=np.int64)
    annotator_labels = np.asarray(annotator_labels, dtype=np.int64)
    _check_rate(rate)
    if annotator_labels.shape != clean.shape:
        raise NoiseError("annotator labels must match the clean labels in length")
    pool = np.flatnonzero(annotator_labels != clean)
    count = int(round(rate * clean.size))
    if count > pool.size:
        raise NoiseError(
            f"rate {rate} needs {count} mistakes but the annotator disagrees on only "
            f"{pool.size} of {clean.size} samples ({pool.size / max(clean.size, 1):.4f})"
        )
    chosen = substream(seed, "noise", "annotator").choice(pool, size=count, replace=False)
    noisy = clean.copy()
    noisy[chosen] = annotator_labels[chosen]
    return noisy, noisy != clean


def inject(spec: NoiseSpec, labels, n_classes: int):
    """Dispatch on ``spec.kind``; returns ``(noisy_labels, mistake_mask)``."""
    if spec.kind == "symmetric":
        return inject_symmetric(labels, n_classes, spec.rate, spec.seed)
    if spec.kind == "asymmetric":
        return inject_asymmetric(labels, n_classes, spec.rate, spec.seed)
    if spec.kind == "confidence":
        return inject_confidence(labels, spec.predictions, spec.rate, spec.seed)
    return subsample_annotator(labels, spec.annotator_labels, spec.rate, spec.seed)
