"""End-to-end acceptance checks, one test per criterion.

Every test records a PASS/FAIL line (shown in the session summary) and then
asserts at the stated tolerance.
"""

import json
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.stats import binomtest

from rerkit import SynthSpec, generate
from rerkit.graph import fit_similarity_curve, fuzzy_graph
from rerkit.mislabel import detect_mistakes, emulate_mistake_scores, metrics, weighted_f1
from rerkit.noise import inject_symmetric
from rerkit.pipeline import RerModel, fit_model
from rerkit.reconstructor import AutoencoderConfig, dropout_masks, init_reconstructor, loss_and_grad, sample_minibatch
from rerkit.rer import rer_report
from rerkit.rng import substream
from rerkit.scaling import fit_scaling, scaling_law

SEEDS = (0, 1, 2)
ETAS = (0.0, 0.1, 0.2, 0.3)


@pytest.fixture(scope="module")
def runs():
    """Error tables for the synthetic 5-class blobs under symmetric noise.

    Keyed by ``(seed, eta)``; every entry holds the dataset, noisy labels,
    mistake mask, error table, score report and training time.
    """
    out = {}
    for seed in SEEDS:
        ds = generate(SynthSpec(n_classes=5, samples_per_class=500, dim=16, cluster_std=1.0, separation=8.0, seed=seed))
        for eta in ETAS:
            noisy, mask = inject_symmetric(ds.clean_labels, 5, eta, seed=seed)
            t = time.perf_counter()
            model = fit_model(ds.with_labels(noisy), AutoencoderConfig(seed=seed))
            table = model.error_table(ds.features)
            out[seed, eta] = {
                "ds": ds,
                "noisy": noisy,
                "mask": mask,
                "table": table,
                "report": rer_report(table, noisy),
                "seconds": time.perf_counter() - t,
            }
    return out


# 1 -------------------------------------------------------------------------


def test_gradient_correctness(acceptance_log):
    t0 = time.perf_counter()
    cfg = AutoencoderConfig(hidden_dims=[8], latent_dim=3, n_neighbors=5, train_dtype="float64")
    curve = fit_similarity_curve(cfg.spread, cfg.min_dist)
    h = 1e-5
    worst = 0.0
    for trial in range(5):
        rng = substream(11, "acceptance-grad", trial)
        X = rng.random((40, 6))
        g = fuzzy_graph(X, cfg.n_neighbors)
        sel = rng.choice(g.n_edges, 16, replace=False)
        batch = sample_minibatch(X, g.head[sel], g.tail[sel], g.n_vertices, cfg, rng)
        rec = init_reconstructor(6, cfg, rng)
        rec.params += 0.05 * rng.standard_normal(rec.params.size)
        masks = dropout_masks(rec, batch, cfg.dropout, rng)
        _, _, grad = loss_and_grad(rec, batch, curve, cfg, masks)
        idx = rng.choice(rec.params.size, 50, replace=False)
        fd = np.empty(idx.size)
        for k, i in enumerate(idx):
            old = rec.params[i]
            rec.params[i] = old + h
            up = loss_and_grad(rec, batch, curve, cfg, masks)[0]
            rec.params[i] = old - h
            down = loss_and_grad(rec, batch, curve, cfg, masks)[0]
            rec.params[i] = old
            fd[k] = (up - down) / (2 * h)
        rel = np.linalg.norm(grad[idx] - fd) / max(np.linalg.norm(grad[idx]), np.linalg.norm(fd))
        worst = max(worst, rel)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 10
    acceptance_log(1, ok, f"max relative gradient error {worst:.2e} (< 1e-4), {elapsed:.2f}s (< 10s)")
    assert ok


# 2 -------------------------------------------------------------------------


def test_separation_assumption(runs, acceptance_log):
    failures = []
    gaps = []
    seconds = 0.0
    for seed in SEEDS:
        r = runs[seed, 0.0]
        seconds += r["seconds"]
        T, y = r["table"], r["noisy"]
        for c in range(5):
            inside = T[y == c, c].mean()
            outside = T[y != c, c].mean()
            gaps.append(outside - inside)
            if not inside < outside:
                failures.append((seed, c))
    ok = not failures and seconds < 120
    acceptance_log(2, ok, f"in-class < out-of-class for {15 - len(failures)}/15 (seed, class) pairs, min gap {min(gaps):.3f}, training {seconds:.1f}s (< 120s)")
    assert ok


# 3 -------------------------------------------------------------------------


def test_noise_rate_estimator(runs, acceptance_log):
    details = []
    ok = True
    for eta in (0.1, 0.2):
        offsets = [runs[s, eta]["report"].eta_hat_raw - runs[s, 0.0]["report"].eta_hat_raw for s in SEEDS]
        mean = float(np.mean(offsets))
        ok &= abs(mean - eta) <= 0.05
        details.append(f"eta={eta}: mean offset {mean:.4f}")
    acceptance_log(3, ok, "; ".join(details) + " (within +-0.05)")
    assert ok


# 4 -------------------------------------------------------------------------


def test_chi_bar_monotone(runs, acceptance_log):
    means = [float(np.mean([runs[s, eta]["report"].chi_bar for s in SEEDS])) for eta in ETAS]
    ok = all(b > a for a, b in zip(means, means[1:]))
    acceptance_log(4, ok, "mean chi_bar over eta 0/0.1/0.2/0.3 = " + ", ".join(f"{m:.4f}" for m in means))
    assert ok


# 5 -------------------------------------------------------------------------


def test_mislabel_detection_quality(runs, acceptance_log):
    rows = []
    ok = True
    for seed in SEEDS:
        r = runs[seed, 0.2]
        rep = detect_mistakes(r["table"], r["noisy"], seed=seed, mask=r["mask"])
        m = rep.metrics
        ok &= m["auroc"] >= 0.95 and m["f1"] >= 0.80
        rows.append(f"seed {seed}: AUROC {m['auroc']:.4f} F1 {m['f1']:.4f}")
    acceptance_log(5, ok, "; ".join(rows) + " (AUROC >= 0.95, F1 >= 0.80 each)")
    assert ok


# 6 -------------------------------------------------------------------------


def test_scaling_law_fit(acceptance_log):
    ns = np.array([20, 50, 100, 200, 350, 500, 750, 1000, 1500, 2000])
    truth = (0.85, 2e4, 2.01e4)
    exact = scaling_law(ns, *truth)
    fit_exact = fit_scaling(list(zip(ns, exact)))
    exact_rel = abs(fit_exact.chi_inf - truth[0]) / truth[0]
    rng = np.random.default_rng(2024)
    noisy = exact * (1 + 0.005 * rng.standard_normal(ns.size))
    fit = fit_scaling(list(zip(ns, noisy)))
    ok = abs(fit.chi_inf - truth[0]) <= 0.02 and fit.r_squared >= 0.99 and exact_rel <= 1e-6
    acceptance_log(
        6, ok, f"noisy chi_inf {fit.chi_inf:.4f} (truth 0.85 +-0.02), R^2 {fit.r_squared:.4f} (>= 0.99); exact-data rel error {exact_rel:.1e} (<= 1e-6)"
    )
    assert ok


# 7 -------------------------------------------------------------------------


def test_metric_identities(acceptance_log):
    rng = np.random.default_rng(7)
    const_err = 0.0
    sign_ok = True
    for _ in range(200):
        n = int(rng.integers(5, 300))
        pred = rng.random(n) < rng.random()
        mask = rng.random(n) < rng.random()
        m = metrics(pred, mask, weights=np.full(n, rng.uniform(0.01, 3)))
        const_err = max(const_err, abs(m["f1_weighted"] - m["f1"]))
        mw = metrics(pred, mask, weights=rng.random(n))
        if mw["ncfd"] is not None:
            sign_ok &= np.sign(mw["ncfd"]) == np.sign(mw["f1_weighted"] - mw["f1"])
    n = 50_000
    pred = rng.random(n) < 0.3
    mask = np.where(rng.random(n) < 0.85, pred, ~pred)
    w = rng.random(n)
    s = 2 * w[pred & mask].sum() + w[pred & ~mask].sum() + w[~pred & mask].sum()
    base = weighted_f1(pred, mask, w)
    worst_inc = 0.0
    for wn in (0.05, 0.5, 1.0):
        assert wn / s < 1e-3
        exact = weighted_f1(np.append(pred, True), np.append(mask, True), np.append(w, wn)) - base
        approx = (1 - base) * 2 * wn / s
        worst_inc = max(worst_inc, abs(exact - approx) / abs(exact))
    ok = const_err <= 1e-12 and sign_ok and worst_inc < 0.05
    acceptance_log(7, ok, f"|F1w - F1| const weights {const_err:.1e} (<= 1e-12); NCFD sign {'ok' if sign_ok else 'wrong'}; increment rel error {worst_inc:.1e} (< 5%)")
    assert ok


# 8 -------------------------------------------------------------------------


def test_posterior_calibration(runs, acceptance_log):
    rows = []
    ok = True
    for seed in SEEDS:
        r = runs[seed, 0.2]
        rep = detect_mistakes(r["table"], r["noisy"], seed=seed)
        edges = np.linspace(rep.scores.min(), rep.scores.max(), 21)
        bins = np.clip(np.digitize(rep.scores, edges) - 1, 0, 19)
        devs = [
            abs(rep.probabilities[bins == b].mean() - r["mask"][bins == b].mean())
            for b in range(20)
            if np.sum(bins == b) >= 20
        ]
        mad = float(np.mean(devs))
        ok &= mad < 0.1
        rows.append(f"seed {seed}: MAD {mad:.4f} over {len(devs)} bins")
    acceptance_log(8, ok, "; ".join(rows) + " (< 0.1)")
    assert ok


# 9 -------------------------------------------------------------------------


def test_emulation_rate(acceptance_log):
    nc, eta = 10, 0.1
    ds = generate(SynthSpec(n_classes=nc, samples_per_class=1000, dim=16, seed=5))
    noisy, _ = inject_symmetric(ds.clean_labels, nc, eta, seed=5)
    # only the emulated labels matter here; the error table content is irrelevant
    delta = np.random.default_rng(0).random((noisy.size, nc)) + 0.1
    _, fake = emulate_mistake_scores(delta, noisy, seed=5)
    hits = int(np.sum(fake != ds.clean_labels))
    expected = (1 - eta) + eta * (nc - 1) / nc
    ci = binomtest(hits, noisy.size, expected).proportion_ci(0.99, method="exact")
    rate = hits / noisy.size
    # the CI is around the observed frequency; it must cover the stated rate
    ok = ci.low <= expected <= ci.high
    acceptance_log(9, ok, f"emulated mistake rate {rate:.4f}, 99% CI [{ci.low:.4f}, {ci.high:.4f}] vs {expected:.4f} (N={noisy.size})")
    assert ok


# 10 ------------------------------------------------------------------------


def test_determinism_and_round_trip(tmp_path, acceptance_log):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"n_classes": 3, "samples_per_class": 150, "dim": 12, "seed": 9}))
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_epochs": 5, "seed": 3}))

    def cli(*argv):
        res = subprocess.run([sys.executable, "-m", "rerkit.cli", *map(str, argv)], capture_output=True, text=True)
        assert res.returncode == 0, res.stdout + res.stderr

    cli("synth", "--spec", spec, "--out-features", tmp_path / "f.npy", "--out-labels", tmp_path / "l.csv")
    # identical arguments apart from --out, which is not echoed into the report
    for name in ("a", "b"):
        cli("difficulty", "--features", tmp_path / "f.npy", "--labels", tmp_path / "l.csv", "--config", cfg,
            "--out", tmp_path / f"{name}.json")
    same_report = (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    cli("fit", "--features", tmp_path / "f.npy", "--labels", tmp_path / "l.csv", "--config", cfg, "--bundle", tmp_path / "a.rer")

    model = RerModel.load(tmp_path / "a.rer")
    model.save(tmp_path / "c.rer")
    again = RerModel.load(tmp_path / "c.rer")
    same_weights = all(x.params.tobytes() == y.params.tobytes() for x, y in zip(model.reconstructors, again.reconstructors))
    ok = same_report and same_weights
    acceptance_log(10, ok, f"byte-identical reports: {same_report}; bundle weights round-trip exactly: {same_weights}")
    assert ok


# 11 ------------------------------------------------------------------------


@pytest.mark.slow
def test_performance_envelope(tmp_path, acceptance_log):
    import os

    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"n_classes": 10, "samples_per_class": 1000, "dim": 512, "seed": 0}))
    subprocess.run(
        [sys.executable, "-m", "rerkit.cli", "synth", "--spec", spec, "--out-features", tmp_path / "f.npy", "--out-labels", tmp_path / "l.csv"],
        check=True, capture_output=True,
    )
    t = time.perf_counter()
    res = subprocess.run(
        [sys.executable, "-m", "rerkit.cli", "difficulty", "--features", tmp_path / "f.npy", "--labels", tmp_path / "l.csv"],
        capture_output=True, text=True,
    )
    elapsed = time.perf_counter() - t
    assert res.returncode == 0, res.stdout + res.stderr
    cores = os.cpu_count()
    ok = elapsed < 60
    acceptance_log(11, ok, f"difficulty on 10 x 1000 x 512 took {elapsed:.1f}s on {cores} core(s) (< 60s; stated for 8 cores)")
    assert ok
