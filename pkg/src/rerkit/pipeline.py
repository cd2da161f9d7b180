"""A trained set of class reconstructors plus everything needed to reuse it."""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from ._accel import backend
from .dataset_io import BundleError, FeatureDataset, NormalizationParams, ValidationError, load_bundle, save_bundle
from .reconstructor import AutoencoderConfig, Reconstructor, error_table, fit_reconstructors
from .rer import RerReport, rer_report

log = logging.getLogger(__name__)


@dataclass
class RerModel:
    reconstructors: list
    config: AutoencoderConfig
    normalization: NormalizationParams
    label_values: list | None = None
    class_names: list | None = None
    extra: dict = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return len(self.reconstructors)

    @property
    def dim(self) -> int:
        return self.reconstructors[0].dim

    def normalize(self, features) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.dim:
            raise ValidationError(
                f"features have d={features.shape[-1]} but the model was trained on d={self.dim}"
            )
        return self.normalization.apply(features)

    def error_table(self, features, workers: int | None = None) -> np.ndarray:
        """Errors of every class reconstructor on raw (un-normalized) features."""
        return error_table(self.reconstructors, self.normalize(features), workers)

    def score(self, features, labels, workers: int | None = None) -> RerReport:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape[0] != np.asarray(features).shape[0]:
            raise ValidationError(f"{labels.shape[0]} labels for {np.asarray(features).shape[0]} feature rows")
        return rer_report(self.error_table(features, workers), labels)

    # -- persistence -----------------------------------------------------

    def save(self, path) -> None:
        arrays = {f"class_{r.class_id}": r.params for r in self.reconstructors}
        arrays["norm_min"] = self.normalization.min
        arrays["norm_max"] = self.normalization.max
        manifest = {
            "rerkit_version": __version__,
            "n_classes": self.n_classes,
            "enc_sizes": self.reconstructors[0].enc_sizes,
            "dec_sizes": self.reconstructors[0].dec_sizes,
            "config": self.config.to_dict(),
            "label_values": self.label_values,
            "class_names": self.class_names,
            "diagnostics": [_jsonable(r.diagnostics) for r in self.reconstructors],
            "extra": self.extra,
        }
        save_bundle(path, manifest, arrays)

    @classmethod
    def load(cls, path) -> "RerModel":
        manifest, arrays = load_bundle(path)
        try:
            config = AutoencoderConfig.from_dict(manifest["config"])
            recs = [
                Reconstructor(
                    manifest["enc_sizes"],
                    manifest["dec_sizes"],
                    arrays[f"class_{c}"],
                    class_id=c,
                    diagnostics=manifest["diagnostics"][c],
                )
                for c in range(manifest["n_classes"])
            ]
            norm = NormalizationParams(arrays["norm_min"], arrays["norm_max"])
        except (KeyError, ValueError, TypeError) as exc:
            raise BundleError(f"{path}: inconsistent bundle contents ({exc})") from None
        return cls(recs, config, norm, manifest.get("label_values"), manifest.get("class_names"), manifest.get("extra", {}))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def fit_model(dataset: FeatureDataset, config: AutoencoderConfig | None = None, workers: int | None = None) -> RerModel:
    """Min-max normalize ``dataset.features`` per dimension and train one
    reconstructor per noisy-label class.

    The fitted normalization is stored on the model, so later calls take
    features in the same space as ``dataset.features``.
    """
    config = config or AutoencoderConfig()
    normed = dataset.normalized()
    norm, feats = normed.normalization, normed.features
    log.info("training %d reconstructors on %d samples, d=%d (%s kernels)", dataset.n_classes, dataset.n_samples, dataset.dim, backend())
    recs = fit_reconstructors(feats, dataset.noisy_labels, dataset.n_classes, config, workers)
    return RerModel(recs, config, norm, dataset.label_values, dataset.class_names)
