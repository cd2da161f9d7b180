"""Command-line entry point: ``rerkit <subcommand> ...``.

Results go to ``--out`` (or stdout) as JSON with sorted keys; a short human
summary and any log lines go to stderr. Failures print a JSON error object
on stdout and exit with a code that identifies the failure class.
"""

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend
from .analytics import alignment, pearson, spearman
from .dataset_io import (
    BundleError,
    FeatureDataset,
    FormatError,
    ValidationError,
    densify_labels,
    load_dataset,
    load_features,
    load_labels,
    load_mask,
    save_npy,
    write_labels_csv,
)
from .lsq import ConvergenceError
from .mislabel import ThresholdAnsatz, detect_mistakes
from .noise import NoiseError, NoiseSpec, inject
from .pipeline import RerModel, fit_model
from .reconstructor import AutoencoderConfig, ConfigError, TrainingError, default_workers
from .rer import DegenerateTableError
from .scaling import GAMMA0, fit_scaling, mean_points, size_sweep
from .synth import SynthSpec, generate

log = logging.getLogger("rerkit")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_INVALID_INPUT = 4
EXIT_CONFIG = 5
EXIT_NUMERICAL = 6


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

_ANSATZ_KEYS = {f.name for f in dataclasses.fields(ThresholdAnsatz)}
_AE_KEYS = {f.name for f in dataclasses.fields(AutoencoderConfig)}


@dataclass
class RunConfig:
    """Flat JSON config: autoencoder fields, ansatz constants, ``workers`` and ``gamma0``."""

    autoencoder: AutoencoderConfig = field(default_factory=AutoencoderConfig)
    ansatz: ThresholdAnsatz = field(default_factory=ThresholdAnsatz)
    workers: int | None = None
    gamma0: float = GAMMA0

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        ae, an, rest = {}, {}, {}
        for key, value in obj.items():
            if key in _AE_KEYS:
                ae[key] = value
            elif key in _ANSATZ_KEYS:
                an[key] = value
            elif key in ("workers", "gamma0"):
                rest[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            return cls(AutoencoderConfig.from_dict(ae), ThresholdAnsatz(**an), **rest)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        out = self.autoencoder.to_dict()
        out.update(dataclasses.asdict(self.ansatz))
        out["workers"] = self.workers
        out["gamma0"] = self.gamma0
        return out


def load_run_config(path, seed=None) -> RunConfig:
    obj = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(p)
        try:
            obj = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    cfg = RunConfig.from_dict(obj)
    if seed is not None:
        cfg.autoencoder = dataclasses.replace(cfg.autoencoder, seed=seed)
    return cfg


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _emit(payload: dict, out) -> None:
    text = json.dumps(payload, indent=1, sort_keys=True, allow_nan=False, default=_json_default) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _clean(obj):
    """Replace non-finite floats by None so reports stay strict JSON."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)) and not np.isfinite(obj):
        return None
    return obj


def _envelope(command: str, args, cfg: RunConfig | None, result: dict) -> dict:
    inputs = {
        k: str(v)
        for k, v in sorted(vars(args).items())
        if k not in ("func", "command", "out", "log_level") and v is not None
    }
    return _clean(
        {
            "command": command,
            "rerkit_version": __version__,
            "inputs": inputs,
            "config": cfg.to_dict() if cfg is not None else None,
            "result": result,
        }
    )


def _summary(text: str) -> None:
    sys.stderr.write(text.rstrip() + "\n")


def _dataset(features, labels, model: RerModel | None = None) -> FeatureDataset:
    if model is None:
        return load_dataset(features, labels)
    feats = load_features(features)
    raw, _ = load_labels(labels)
    if raw.shape[0] != feats.shape[0]:
        raise ValidationError(f"{labels}: {raw.shape[0]} labels for {feats.shape[0]} feature rows")
    dense, values = densify_labels(raw, model.label_values)
    return FeatureDataset(feats, dense, model.n_classes, label_values=values, class_names=model.class_names)


def _workers(cfg: RunConfig, args) -> int:
    """``--workers`` flag, then ``RER_THREADS``, then the config, then all cores."""
    if getattr(args, "workers", None):
        return args.workers
    if os.environ.get("RER_THREADS"):
        return default_workers()
    return cfg.workers or default_workers()


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_fit(args) -> dict:
    cfg = load_run_config(args.config, args.seed)
    ds = load_dataset(args.features, args.labels)
    t = time.perf_counter()
    model = fit_model(ds, cfg.autoencoder, _workers(cfg, args))
    model.extra = {"run_config": cfg.to_dict()}
    model.save(args.bundle)
    _summary(f"trained {model.n_classes} reconstructors (d={model.dim}) in {time.perf_counter() - t:.1f}s -> {args.bundle}")
    diag = [
        {"class": r.class_id, "final_loss": r.diagnostics["final_loss"], "epochs_run": r.diagnostics["epochs_run"],
         "early_stopped": r.diagnostics["early_stopped"], "retried": r.diagnostics["retried"]}
        for r in model.reconstructors
    ]
    return _envelope("fit", args, cfg, {"bundle": str(args.bundle), "n_classes": model.n_classes, "dim": model.dim, "classes": diag})


def _model_config(model: RerModel, args) -> RunConfig:
    cfg = RunConfig.from_dict(model.extra.get("run_config", model.config.to_dict()))
    if getattr(args, "config", None):
        override = load_run_config(args.config)
        cfg.ansatz = override.ansatz
        cfg.workers = override.workers
    return cfg


def cmd_score(args) -> dict:
    model = RerModel.load(args.bundle)
    cfg = _model_config(model, args)
    ds = _dataset(args.features, args.labels, model)
    report = model.score(ds.features, ds.noisy_labels, _workers(cfg, args))
    _summary(f"chi_bar={report.chi_bar:.4f} chi_0={report.chi_0:.4f} chi_rand={report.chi_rand:.4f} eta_hat={report.eta_hat:.4f}")
    return _envelope("score", args, cfg, report.to_json())


def cmd_difficulty(args) -> dict:
    cfg = load_run_config(args.config, args.seed)
    t = time.perf_counter()
    ds = load_dataset(args.features, args.labels)
    model = fit_model(ds, cfg.autoencoder, _workers(cfg, args))
    if args.bundle:
        model.extra = {"run_config": cfg.to_dict()}
        model.save(args.bundle)
    report = model.score(ds.features, ds.noisy_labels, _workers(cfg, args))
    _summary(
        f"chi_bar={report.chi_bar:.4f} eta_hat={report.eta_hat:.4f} "
        f"({ds.n_classes} classes, N={ds.n_samples}, d={ds.dim}, {backend()} kernels, {time.perf_counter() - t:.1f}s)"
    )
    return _envelope("difficulty", args, cfg, report.to_json())


def _parse_budgets(text: str) -> list[int]:
    try:
        budgets = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--budgets must be comma-separated integers, got {text!r}") from None
    if not budgets or min(budgets) < 2:
        raise UsageError("--budgets needs positive sample counts of at least 2")
    return budgets


def cmd_scaling_curve(args) -> dict:
    cfg = load_run_config(args.config, args.seed)
    budgets = _parse_budgets(args.budgets)
    ds = load_dataset(args.features, args.labels)
    feats = ds.normalized().features
    sweep = size_sweep(feats, ds.noisy_labels, ds.n_classes, budgets, cfg.autoencoder, replicates=args.replicates, workers=_workers(cfg, args))
    points = mean_points(sweep)
    result = {"sweep": [dataclasses.asdict(p) for p in sweep], "points": [[n, v] for n, v in points]}
    if len(points) >= 4:
        fit = fit_scaling(points, gamma0=cfg.gamma0)
        result["fit"] = fit.to_json()
        result["finite_size_gap"] = fit.chi_inf - points[-1][1]
        _summary(f"chi_inf={fit.chi_inf:.4f} R^2={fit.r_squared:.4f} over {len(points)} budgets")
    else:
        result["fit"] = None
        _summary(f"{len(points)} budgets: at least 4 are needed for a scaling fit")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "chi_bar", "fitted"])
            for n, v in points:
                fitted = "" if result["fit"] is None else repr(float(fit.predict(n)))
                w.writerow([n, repr(v), fitted])
    return _envelope("scaling-curve", args, cfg, result)


def cmd_detect(args) -> dict:
    model = RerModel.load(args.bundle)
    cfg = _model_config(model, args)
    ds = _dataset(args.features, args.labels, model)
    mask = None
    if args.mask:
        mask = load_mask(args.mask)
        if mask.shape[0] != ds.n_samples:
            raise ValidationError(f"{args.mask}: {mask.shape[0]} entries for {ds.n_samples} samples")
    table = model.error_table(ds.features, _workers(cfg, args))
    seed = cfg.autoencoder.seed if args.seed is None else args.seed
    report = detect_mistakes(table, ds.noisy_labels, cfg.ansatz, seed=seed, mask=mask)
    text = f"flagged {int(report.predictions.sum())} of {ds.n_samples} samples at chi >= {report.threshold_used:.4f}"
    if report.metrics:
        m = report.metrics
        text += f"; precision={m['precision']:.3f} recall={m['recall']:.3f} f1={m['f1']:.3f}"
        if m["auroc"] is not None:
            text += f" auroc={m['auroc']:.3f}"
    _summary(text)
    return _envelope("detect", args, cfg, report.to_json())


def cmd_inject_noise(args) -> dict:
    raw, _ = load_labels(args.labels)
    clean, values = densify_labels(raw)
    n_classes = args.n_classes or len(values)
    predictions = annot = None
    if args.kind == "confidence":
        if not args.predictions:
            raise UsageError("--kind confidence needs --predictions")
        predictions = load_features(args.predictions)
        n_classes = predictions.shape[1]
    if args.kind == "annotator":
        if not args.annotator:
            raise UsageError("--kind annotator needs --annotator")
        annot_raw, _ = load_labels(args.annotator)
        annot, _ = densify_labels(annot_raw, values)
    spec = NoiseSpec(args.kind, args.rate, args.seed, predictions, annot)
    noisy, mask = inject(spec, clean, n_classes)
    out_values = np.asarray(values)[noisy] if len(values) > int(noisy.max(initial=0)) else noisy
    write_labels_csv(args.out_labels, out_values)
    write_labels_csv(args.out_mask, mask.astype(int))
    _summary(f"{args.kind} noise at rate {args.rate}: {int(mask.sum())} of {mask.size} labels changed")
    return _envelope("inject-noise", args, None, {"n_samples": int(mask.size), "n_changed": int(mask.sum()), "realized_rate": float(mask.mean()) if mask.size else 0.0})


def cmd_synth(args) -> dict:
    obj = {}
    if args.spec:
        p = Path(args.spec)
        if not p.exists():
            raise FileNotFoundError(p)
        try:
            obj = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    if args.seed is not None:
        obj["seed"] = args.seed
    try:
        spec = SynthSpec.from_dict(obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    ds = generate(spec)
    save_npy(args.out_features, ds.features)
    write_labels_csv(args.out_labels, ds.noisy_labels)
    _summary(f"wrote {ds.n_samples} x {ds.dim} features and labels for {ds.n_classes} classes")
    result = {"n_samples": ds.n_samples, "dim": ds.dim, "n_classes": ds.n_classes, "spec": spec.to_dict()}
    return _envelope("synth", args, None, result)


def _load_report(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(p)
    try:
        obj = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{p}: not a JSON report ({exc})") from None
    res = obj.get("result", obj)
    if "chi" not in res:
        raise FormatError(f"{p}: report has no per-sample chi scores")
    return res


def cmd_report(args) -> dict:
    if bool(args.compare) == bool(args.difficulty):
        raise UsageError("report needs exactly one of --compare A B or --difficulty REPORT")
    if args.compare:
        a, b = (_load_report(p) for p in args.compare)
        if len(a["chi"]) != len(b["chi"]):
            raise ValidationError("the two reports cover different numbers of samples")
        rows = {"sample": alignment(a["chi"], b["chi"])}
        ca, cb = a.get("per_class_chi"), b.get("per_class_chi")
        if ca and cb and len(ca) == len(cb):
            keep = [i for i in range(len(ca)) if ca[i] is not None and cb[i] is not None]
            if len(keep) >= 2:
                rows["class"] = alignment([ca[i] for i in keep], [cb[i] for i in keep])
        _summary(f"sample-level spearman={rows['sample']['spearman']:.4f}")
        return _envelope("report", args, None, {"alignment": rows})
    rep = _load_report(args.difficulty)
    if not args.external:
        raise UsageError("--difficulty needs --external with per-class accuracies")
    with open(args.external, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        acc = np.array([float(r[-1]) for r in rows if _is_float(r[-1])])
    except ValueError:
        raise FormatError(f"{args.external}: accuracies must be numeric") from None
    chi_c = rep.get("per_class_chi") or []
    if len(acc) != len(chi_c):
        raise ValidationError(f"{args.external}: {len(acc)} accuracies for {len(chi_c)} classes")
    err = np.clip(1.0 - acc, 1e-12, None)
    points = [{"class": i, "chi_c": chi_c[i], "error_rate": float(err[i]), "log_error_rate": float(np.log(err[i]))} for i in range(len(acc))]
    valid = [p for p in points if p["chi_c"] is not None]
    result = {"points": points}
    if len(valid) >= 2:
        x = [p["chi_c"] for p in valid]
        y = [p["log_error_rate"] for p in valid]
        result["pearson"] = pearson(x, y)
        result["spearman"] = spearman(x, y)
        _summary(f"pearson(chi_c, log error)={result['pearson']:.4f}")
    return _envelope("report", args, None, result)


def _is_float(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rerkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rerkit {__version__}")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", metavar="{fit,score,difficulty,scaling-curve,detect,inject-noise,synth,report}", parser_class=_Parser)

    def common(p, features=True, labels=True, config=True):
        if features:
            p.add_argument("--features", required=True, help="NPY or CSV feature matrix")
        if labels:
            p.add_argument("--labels", required=True, help="CSV (one label per line) or JSON labels")
        if config:
            p.add_argument("--config", help="JSON run config (autoencoder, ansatz, workers)")
            p.add_argument("--seed", type=int, help="root seed, overrides the config")
            p.add_argument("--workers", type=int, help="worker threads (default: RER_THREADS or all cores)")
        p.add_argument("--out", help="write the JSON result here instead of stdout")

    p = sub.add_parser("fit", help="train one reconstructor per class and save a model bundle")
    common(p)
    p.add_argument("--bundle", "--out-bundle", dest="bundle", required=True, help="model bundle path to write")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("score", help="chi statistics and noise estimate for a labeled set")
    common(p)
    p.add_argument("--bundle", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("difficulty", help="fit and score in one pass")
    common(p)
    p.add_argument("--bundle", help="also save the trained model here")
    p.set_defaults(func=cmd_difficulty)

    p = sub.add_parser("scaling-curve", help="chi_bar against samples per class, with the large-n fit")
    common(p)
    p.add_argument("--budgets", required=True, help="comma-separated samples per class, e.g. 20,50,100,200")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--csv", help="plot data: n, chi_bar, fitted")
    p.set_defaults(func=cmd_scaling_curve)

    p = sub.add_parser("detect", help="rank, flag and calibrate likely label mistakes")
    common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--mask", help="ground-truth mistake mask (0/1 per line) for metrics")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("inject-noise", help="corrupt labels and write the mistake mask")
    p.add_argument("--labels", required=True)
    p.add_argument("--kind", required=True, choices=["symmetric", "asymmetric", "confidence", "annotator"])
    p.add_argument("--rate", required=True, type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-classes", type=int, help="number of classes (default: distinct labels)")
    p.add_argument("--predictions", help="NPY N x N_c class probabilities (confidence kind)")
    p.add_argument("--annotator", help="CSV of annotator labels (annotator kind)")
    p.add_argument("--out-labels", required=True)
    p.add_argument("--out-mask", required=True)
    p.add_argument("--out", help="write the JSON result here instead of stdout")
    p.set_defaults(func=cmd_inject_noise)

    p = sub.add_parser("synth", help="generate a synthetic labeled feature set")
    p.add_argument("--spec", help="JSON synth spec (defaults when omitted)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-features", required=True)
    p.add_argument("--out-labels", required=True)
    p.add_argument("--out", help="write the JSON result here instead of stdout")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="compare score reports or correlate difficulty with accuracies")
    p.add_argument("--compare", nargs=2, metavar=("A", "B"))
    p.add_argument("--difficulty", metavar="REPORT")
    p.add_argument("--external", help="CSV of per-class accuracies, last column numeric")
    p.add_argument("--out", help="write the JSON result here instead of stdout")
    p.set_defaults(func=cmd_report)
    return parser


_ERRORS = (
    (UsageError, EXIT_USAGE),
    (FileNotFoundError, EXIT_MISSING_FILE),
    (ConfigError, EXIT_CONFIG),
    (TrainingError, EXIT_NUMERICAL),
    (ConvergenceError, EXIT_NUMERICAL),
    (DegenerateTableError, EXIT_NUMERICAL),
    (BundleError, EXIT_INVALID_INPUT),
    (FormatError, EXIT_INVALID_INPUT),
    (ValidationError, EXIT_INVALID_INPUT),
    (NoiseError, EXIT_INVALID_INPUT),
    (ValueError, EXIT_INVALID_INPUT),
)


_INPUT_PATHS = ("features", "labels", "config", "mask", "spec", "predictions", "annotator", "external", "difficulty")


def _check_inputs(args) -> None:
    """Fail fast on any missing input file before loading or training."""
    paths = [getattr(args, name, None) for name in _INPUT_PATHS]
    if args.command in ("score", "detect"):
        paths.append(args.bundle)
    paths.extend(getattr(args, "compare", None) or [])
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise FileNotFoundError(2, "no such file", str(p))


def _fail(exc: BaseException, code: int) -> int:
    if isinstance(exc, FileNotFoundError) and exc.filename is None and exc.args:
        exc = FileNotFoundError(2, "no such file", str(exc.args[0]))
    payload = {"error": {"type": type(exc).__name__, "message": str(exc), "exit_code": code}}
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")
    sys.stderr.write(f"error: {exc}\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(exc, EXIT_USAGE)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        _check_inputs(args)
        payload = args.func(args)
        _emit(payload, args.out)
    except Exception as exc:  # mapped to exit codes below
        for kind, code in _ERRORS:
            if isinstance(exc, kind):
                return _fail(exc, code)
        log.exception("unexpected failure")
        return _fail(exc, EXIT_INTERNAL)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
