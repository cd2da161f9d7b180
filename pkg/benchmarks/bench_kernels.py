#!/usr/bin/env python3
"""Time the numba kernels against their numpy fallbacks.

Both variants live side by side in ``rerkit.kernels`` (``*_nb`` and
``*_np``), so the per-kernel comparison runs in one process. With
``--pipeline`` the script also times a small end-to-end fit twice in
subprocesses, once with ``RER_DISABLE_JIT=1``, since the env flag is only
read at import.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--pipeline] [--json out.json]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from rerkit import kernels
from rerkit.graph import fit_similarity_curve


def _best_of(fn, repeat):
    fn()  # warm-up (and JIT compile on the first call)
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def _cases(rng):
    n, d, k = 1000, 512, 15
    X = rng.random((n, d))
    m = k + 16
    cand = np.stack([rng.choice(np.delete(np.arange(n), i), m, replace=False) for i in range(n)])
    dists = np.sort(rng.random((n, k)) * 3, axis=1)

    nb, r, latent = 64, 5, 2
    Z = rng.standard_normal((nb * (2 + r), latent))
    head = np.concatenate([np.arange(nb), np.repeat(np.arange(nb), r)])
    tail = np.concatenate([np.arange(nb, 2 * nb), 2 * nb + rng.integers(0, nb * r, nb * r)])
    negative = np.concatenate([np.zeros(nb, bool), np.ones(nb * r, bool)])
    curve = fit_similarity_curve(1.0, 0.1)

    samples = rng.random(5000)
    points = rng.random(5000)

    size = 300_000
    p32 = rng.standard_normal(size).astype(np.float32)
    g32 = rng.standard_normal(size).astype(np.float32)

    def adam(fn):
        p, m_, v = p32.copy(), np.zeros_like(p32), np.zeros_like(p32)
        return lambda: fn(p, g32, m_, v, 1e-3, 0.9, 0.999, 1e-7, 0.1, 0.001, p)

    return {
        "refine_knn (1000 x 512, k=15)": (
            lambda: kernels.refine_knn_nb(X, cand, k),
            lambda: kernels.refine_knn_np(X, cand, k),
        ),
        "smooth_knn (1000 rows, k=15)": (
            lambda: kernels.smooth_knn_nb(dists, 64, 1e-5),
            lambda: kernels.smooth_knn_np(dists, 64, 1e-5),
        ),
        "umap_pairs (one minibatch)": (
            lambda: kernels.umap_pairs_nb(Z, head, tail, negative, curve.a, curve.b, 1.0, 1e-12, 1 - 1e-12),
            lambda: kernels.umap_pairs_np(Z, head, tail, negative, curve.a, curve.b, 1.0, 1e-12, 1 - 1e-12),
        ),
        "kde_reflect (5000 x 5000)": (
            lambda: kernels.kde_reflect_nb(points, samples, 0.05, 1.0),
            lambda: kernels.kde_reflect_np(points, samples, 0.05, 1.0),
        ),
        "adam_update (300k float32)": (adam(kernels.adam_update_nb), adam(kernels.adam_update_np)),
    }


_PIPELINE = """
import time
from rerkit import SynthSpec, generate, fit_model
from rerkit._accel import backend
ds = generate(SynthSpec(n_classes=5, samples_per_class=400, dim=64, seed=0))
t = time.perf_counter()
fit_model(ds, workers=1)
print(backend(), time.perf_counter() - t)
"""


def _pipeline(disable_jit):
    env = dict(os.environ, RER_DISABLE_JIT="1" if disable_jit else "0")
    out = subprocess.run([sys.executable, "-c", _PIPELINE], env=env, capture_output=True, text=True, check=True)
    name, seconds = out.stdout.split()
    return name, float(seconds)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--pipeline", action="store_true", help="also time a 5-class fit under each backend")
    ap.add_argument("--json", help="write the timings here")
    args = ap.parse_args(argv)

    rows = []
    print(f"{'kernel':34s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, (fast, slow) in _cases(np.random.default_rng(args.seed)).items():
        t_nb = _best_of(fast, args.repeat)
        t_np = _best_of(slow, args.repeat)
        rows.append({"kernel": name, "numba_s": t_nb, "numpy_s": t_np})
        print(f"{name:34s} {t_nb * 1e3:10.3f} {t_np * 1e3:10.3f} {t_np / t_nb:7.1f}x")

    result = {"kernels": rows}
    if args.pipeline:
        timings = dict(_pipeline(flag) for flag in (False, True))
        result["pipeline_s"] = timings
        print(f"\nfit_model, 5 classes x 400 x 64: numba {timings['numba']:.2f}s, numpy {timings['numpy']:.2f}s")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(result, fh, indent=1)


if __name__ == "__main__":
    main()
