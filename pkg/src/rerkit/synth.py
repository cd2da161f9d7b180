"""Synthetic labeled feature sets with known class structure."""

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .dataset_io import FeatureDataset, min_max_normalize
from .rng import substream

MANIFOLDS = ("gaussian_blob", "low_rank_gaussian")


@dataclass
class SynthSpec:
    n_classes: int = 5
    samples_per_class: int = 500
    dim: int = 16
    cluster_std: float = 1.0
    separation: float = 8.0
    manifold: str = "gaussian_blob"
    seed: int = 0

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dim must be at least 2")
        if not self.cluster_std > 0:
            raise ValueError("cluster_std must be positive")
        if self.separation < 0:
            raise ValueError("separation must be non-negative")
        if self.n_classes < 1 or self.samples_per_class < 1:
            raise ValueError("n_classes and samples_per_class must be positive")
        if self.manifold not in MANIFOLDS:
            raise ValueError(f"unknown manifold {self.manifold!r}; choose from {', '.join(MANIFOLDS)}")

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = [k for k in obj if k not in names]
        if unknown:
            raise ValueError(f"unknown synth spec key {unknown[0]!r}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def centroids(spec: SynthSpec) -> np.ndarray:
    """Class centres drawn uniformly on the sphere of radius ``separation``."""
    g = substream(spec.seed, "synth", "centroids").normal(size=(spec.n_classes, spec.dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True) * spec.separation


def raw_samples(spec: SynthSpec):
    """Un-normalized features and labels, classes in contiguous blocks."""
    centres = centroids(spec)
    m = spec.samples_per_class
    blocks = []
    for c in range(spec.n_classes):
        rng = substream(spec.seed, "synth", "class", c)
        if spec.manifold == "gaussian_blob":
            noise = rng.normal(size=(m, spec.dim))
        else:
            rank = math.ceil(spec.dim / 4)
            basis, _ = np.linalg.qr(rng.normal(size=(spec.dim, rank)))
            noise = rng.normal(size=(m, rank)) @ basis.T
        blocks.append(centres[c] + spec.cluster_std * noise)
    labels = np.repeat(np.arange(spec.n_classes), m)
    return np.concatenate(blocks), labels


def generate(spec: SynthSpec) -> FeatureDataset:
    """Balanced, min-max normalized dataset whose clean and noisy labels coincide."""
    X, y = raw_samples(spec)
    Xn, params = min_max_normalize(X)
    return FeatureDataset(Xn, y, spec.n_classes, clean_labels=y.copy(), normalization=params)
