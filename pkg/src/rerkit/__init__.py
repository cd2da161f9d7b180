"""Dataset difficulty and label-mistake detection from class-wise reconstruction errors.

One small autoencoder is trained per class; the ratio of a sample's error
under its labeled class to its error under the other classes measures how
hard it is to classify and how likely its label is wrong.
"""

__version__ = "0.1.0"

from .dataset_io import FeatureDataset, load_dataset, load_features, load_labels  # noqa: E402
from .mislabel import ThresholdAnsatz, detect_mistakes  # noqa: E402
from .noise import NoiseSpec, inject  # noqa: E402
from .pipeline import RerModel, fit_model  # noqa: E402
from .reconstructor import AutoencoderConfig  # noqa: E402
from .rer import RerReport, rer_report  # noqa: E402
from .scaling import fit_scaling, size_sweep  # noqa: E402
from .synth import SynthSpec, generate  # noqa: E402

__all__ = [
    "AutoencoderConfig",
    "FeatureDataset",
    "NoiseSpec",
    "RerModel",
    "RerReport",
    "SynthSpec",
    "ThresholdAnsatz",
    "detect_mistakes",
    "fit_model",
    "fit_scaling",
    "generate",
    "inject",
    "load_dataset",
    "load_features",
    "load_labels",
    "rer_report",
    "size_sweep",
]
