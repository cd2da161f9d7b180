"""Loading, validating, normalizing and persisting feature datasets and models."""

import csv
import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    """A file could not be parsed as the expected format."""


class ValidationError(ValueError):
    """Parsed data violates a value or shape contract."""


class BundleError(ValueError):
    """A model bundle is corrupt, truncated or of an unsupported version."""


@dataclass
class NormalizationParams:
    min: np.ndarray
    max: np.ndarray

    def apply(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.min.shape[0]:
            raise ValidationError(
                f"feature dimension {features.shape[-1]} does not match the "
                f"normalization fitted on d={self.min.shape[0]}"
            )
        span = self.max - self.min
        const = span == 0
        out = (features - self.min) / np.where(const, 1.0, span)
        out[:, const] = 0.5
        return out

    def to_json(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "NormalizationParams":
        return cls(np.asarray(obj["min"], dtype=np.float64), np.asarray(obj["max"], dtype=np.float64))


@dataclass
class FeatureDataset:
    """Feature matrix plus dense integer labels.

    ``label_values`` records the original label value of each dense index when
    the input labels were sparse (e.g. ``[3, 7, 9]`` -> ``0, 1, 2``).
    """

    features: np.ndarray
    noisy_labels: np.ndarray
    n_classes: int
    clean_labels: np.ndarray | None = None
    class_names: list[str] | None = None
    label_values: list | None = None
    normalization: NormalizationParams | None = field(default=None, repr=False)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.noisy_labels = np.asarray(self.noisy_labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValidationError("expected 2-D feature matrix")
        n, d = self.features.shape
        if n < 1 or d < 2:
            raise ValidationError(f"need N >= 1 and d >= 2, got N={n}, d={d}")
        _check_labels(self.noisy_labels, n, self.n_classes, "noisy_labels")
        if self.clean_labels is not None:
            self.clean_labels = np.asarray(self.clean_labels, dtype=np.int64)
            _check_labels(self.clean_labels, n, self.n_classes, "clean_labels")
        if self.class_names is not None and len(self.class_names) != self.n_classes:
            raise ValidationError("class_names must have one entry per class")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def normalized(self) -> "FeatureDataset":
        feats, params = min_max_normalize(self.features)
        return FeatureDataset(
            feats,
            self.noisy_labels,
            self.n_classes,
            clean_labels=self.clean_labels,
            class_names=self.class_names,
            label_values=self.label_values,
            normalization=params,
        )

    def with_labels(self, noisy_labels) -> "FeatureDataset":
        return FeatureDataset(
            self.features,
            noisy_labels,
            self.n_classes,
            clean_labels=self.clean_labels,
            class_names=self.class_names,
            label_values=self.label_values,
            normalization=self.normalization,
        )


def _check_labels(labels, n, n_classes, name):
    if labels.ndim != 1 or labels.shape[0] != n:
        raise ValidationError(f"{name} must be a vector of length {n}, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValidationError(f"{name} values must lie in [0, {n_classes})")


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------


def load_features(path, format: str | None = None) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "npy":
        arr = _read_npy(path)
    elif fmt == "csv":
        arr = _read_csv_matrix(path)
    else:
        raise FormatError(f"unsupported feature format {fmt!r} (expected npy or csv)")
    _check_finite(arr)
    return arr


def _read_npy(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        try:
            version = np.lib.format.read_magic(fh)
        except ValueError as exc:
            raise FormatError(f"{path}: not an NPY file ({exc})") from None
        if version != (1, 0):
            raise FormatError(f"{path}: NPY version {version} unsupported, need 1.0")
        try:
            shape, fortran, dtype = np.lib.format.read_array_header_1_0(fh)
        except ValueError as exc:
            raise FormatError(f"{path}: malformed NPY header ({exc})") from None
        if len(shape) != 2:
            raise ValidationError(f"{path}: expected 2-D array, got shape {shape}")
        if dtype.kind != "f" or dtype.itemsize not in (4, 8):
            raise FormatError(f"{path}: expected float32/float64 data, got {dtype}")
        count = int(np.prod(shape))
        data = np.fromfile(fh, dtype=dtype, count=count)
        if data.size != count:
            raise FormatError(f"{path}: truncated data ({data.size} of {count} values)")
    order = "F" if fortran else "C"
    return np.ascontiguousarray(data.reshape(shape, order=order), dtype=np.float64)


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _read_csv_matrix(path: Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if rows and not all(_is_number(c) for c in rows[0]):
        rows = rows[1:]
    if not rows:
        raise FormatError(f"{path}: no numeric rows")
    width = len(rows[0])
    out = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise FormatError(f"{path}: row {i} has {len(row)} columns, expected {width}")
        try:
            out[i] = [float(c) for c in row]
        except ValueError:
            raise FormatError(f"{path}: non-numeric value in row {i}") from None
    return out


def _check_finite(arr: np.ndarray) -> None:
    bad = ~np.isfinite(arr)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise ValidationError(f"non-finite value at row {r}, column {c}")


def save_npy(path, array) -> None:
    np.save(path, np.ascontiguousarray(array))


def min_max_normalize(features: np.ndarray) -> tuple[np.ndarray, NormalizationParams]:
    """Per-dimension min-max scaling to [0, 1]; constant columns map to 0.5."""
    features = np.asarray(features, dtype=np.float64)
    _check_finite(features)
    params = NormalizationParams(features.min(axis=0), features.max(axis=0))
    return params.apply(features), params


# ---------------------------------------------------------------------------
# labels
# ---------------------------------------------------------------------------


def load_labels(path) -> tuple[np.ndarray, list | dict | None]:
    """Read labels from CSV (one per line) or JSON.

    JSON may be a bare list or ``{"labels": [...], "class_names": [...] | {value: name}}``.
    Returns ``(raw_labels, class_names)``; pass raw labels through
    :func:`densify_labels` to get dense indices.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    names = None
    if path.suffix.lower() == ".json":
        obj = json.loads(path.read_text())
        if isinstance(obj, dict):
            raw = obj.get("labels")
            names = obj.get("class_names")
        else:
            raw = obj
        if not isinstance(raw, list):
            raise FormatError(f"{path}: expected a list of labels")
    else:
        with open(path, newline="") as fh:
            cells = [r[0].strip() for r in csv.reader(fh) if r and r[0].strip()]
        if cells and not _is_int(cells[0]):
            cells = cells[1:]
        raw = cells
    try:
        labels = np.array([int(v) for v in raw], dtype=np.int64)
    except (TypeError, ValueError):
        raise FormatError(f"{path}: labels must be integers") from None
    return labels, names


def _is_int(text: str) -> bool:
    try:
        int(text)
    except ValueError:
        return False
    return True


def densify_labels(raw: np.ndarray, values: list | None = None) -> tuple[np.ndarray, list]:
    """Map arbitrary integer labels onto ``0..N_c-1``.

    With ``values`` given (e.g. from a trained bundle) the mapping is fixed and
    unseen labels raise; otherwise it is built from the sorted unique labels.
    Labels already dense keep their values.
    """
    raw = np.asarray(raw, dtype=np.int64)
    if values is None:
        uniq = np.unique(raw)
        if uniq.size and uniq[0] == 0 and uniq[-1] == uniq.size - 1:
            return raw.copy(), list(range(int(uniq.size)))
        values = uniq.tolist()
    lookup = {int(v): i for i, v in enumerate(values)}
    try:
        dense = np.array([lookup[int(v)] for v in raw], dtype=np.int64)
    except KeyError as exc:
        raise ValidationError(f"label {exc.args[0]} not among known labels") from None
    return dense, [int(v) for v in values]


def write_labels_csv(path, labels) -> None:
    with open(path, "w", newline="") as fh:
        for v in np.asarray(labels).tolist():
            fh.write(f"{int(v)}\n")


def load_mask(path) -> np.ndarray:
    labels, _ = load_labels(path)
    if labels.size and (labels.min() < 0 or labels.max() > 1):
        raise ValidationError(f"{path}: mask entries must be 0 or 1")
    return labels.astype(bool)


def load_dataset(features_path, labels_path, n_classes: int | None = None) -> FeatureDataset:
    feats = load_features(features_path)
    raw, names = load_labels(labels_path)
    if raw.shape[0] != feats.shape[0]:
        raise ValidationError(
            f"{labels_path}: {raw.shape[0]} labels for {feats.shape[0]} feature rows"
        )
    dense, values = densify_labels(raw)
    nc = n_classes if n_classes is not None else len(values)
    if isinstance(names, dict):
        names = [str(names.get(str(v), names.get(v, v))) for v in values]
    return FeatureDataset(feats, dense, nc, class_names=names, label_values=values)


# ---------------------------------------------------------------------------
# model bundle: zip container of manifest.json + raw little-endian float64 blobs
# ---------------------------------------------------------------------------

BUNDLE_FORMAT = "rerkit-bundle"
BUNDLE_VERSION = 1


def save_bundle(path, manifest: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write ``manifest`` and named float64 arrays into a single bundle file."""
    index = {}
    blobs = io.BytesIO()
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f8")
        index[name] = {"offset": blobs.tell(), "shape": list(data.shape)}
        blobs.write(data.tobytes())
    full = dict(manifest)
    full["format"] = BUNDLE_FORMAT
    full["format_version"] = BUNDLE_VERSION
    full["blobs"] = index
    full["blob_bytes"] = blobs.tell()
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr("manifest.json", json.dumps(full, indent=1, sort_keys=True))
        zf.writestr("weights.bin", blobs.getvalue())


def load_bundle(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            blob = zf.read("weights.bin")
    except (zipfile.BadZipFile, KeyError, EOFError, json.JSONDecodeError) as exc:
        raise BundleError(f"{path}: unreadable or truncated bundle ({exc})") from None
    if manifest.get("format") != BUNDLE_FORMAT:
        raise BundleError(f"{path}: not a model bundle")
    if manifest.get("format_version") != BUNDLE_VERSION:
        raise BundleError(
            f"{path}: bundle version {manifest.get('format_version')!r} unsupported "
            f"(this build reads version {BUNDLE_VERSION})"
        )
    if len(blob) != manifest.get("blob_bytes"):
        raise BundleError(f"{path}: weight blob truncated")
    arrays = {}
    for name, meta in manifest["blobs"].items():
        count = int(np.prod(meta["shape"])) if meta["shape"] else 1
        arrays[name] = (
            np.frombuffer(blob, dtype="<f8", count=count, offset=meta["offset"])
            .reshape(meta["shape"])
            .astype(np.float64)
        )
    return manifest, arrays
