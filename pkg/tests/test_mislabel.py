import json

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rerkit.mislabel import (
    MistakePosterior,
    ThresholdAnsatz,
    auroc,
    confidence_weights,
    detect_mistakes,
    emulate_mistake_scores,
    kde_reflect,
    metrics,
    mistake_posterior,
    predict,
    silverman_bandwidth,
    threshold,
    weighted_f1,
)


def test_ansatz_defaults():
    a = ThresholdAnsatz()
    assert (a.gamma4, a.gamma5, a.gamma6) == (1.01, 1.5, 13.8)


@pytest.mark.parametrize("eta", [0.0, 0.2, 5.0])
def test_threshold_at_chi0_one(eta):
    assert threshold(1.0, eta) == pytest.approx(1.01)


def test_threshold_high_precision_oracle():
    mpmath.mp.dps = 40
    expect = mpmath.mpf("1.01") * mpmath.mpf("0.9") ** mpmath.mpf("-1.5")
    assert threshold(0.9, 0.0) == pytest.approx(float(expect), rel=1e-14)


def test_threshold_decreases_toward_gamma4():
    vals = [threshold(0.8, eta) for eta in (0.0, 0.1, 0.5, 2.0, 1e6)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(1.01, rel=1e-4)


def test_threshold_negative_eta_floored():
    assert threshold(0.8, -0.3) == threshold(0.8, 0.0)
    clamped = ThresholdAnsatz(use_raw_eta=False)
    assert threshold(0.8, 3.0, clamped) == threshold(0.8, 1.0)


@given(st.lists(st.floats(0, 3), max_size=40), st.floats(0, 3))
def test_predict_vs_loop(scores, thr):
    out = predict(scores, thr)
    assert list(out) == [s >= thr for s in scores]


def test_emulation_two_classes_deterministic():
    delta = np.random.default_rng(0).random((20, 2))
    labels = np.arange(20) % 2
    _, fake = emulate_mistake_scores(delta, labels, seed=1)
    np.testing.assert_array_equal(fake, 1 - labels)


def test_emulation_same_seed():
    delta = np.random.default_rng(0).random((50, 5))
    labels = np.arange(50) % 5
    a = emulate_mistake_scores(delta, labels, seed=4)
    b = emulate_mistake_scores(delta, labels, seed=4)
    np.testing.assert_array_equal(a[1], b[1])
    assert np.all(a[1] != labels)


def test_silverman_bandwidth():
    x = np.random.default_rng(0).normal(size=1000)
    sd = x.std(ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25])) / 1.34
    assert silverman_bandwidth(x) == pytest.approx(0.9 * min(sd, iqr) * 1000 ** (-0.2))


def test_reflected_kde_integrates_to_one_below_boundary():
    s = np.random.default_rng(0).random(500)
    grid = np.linspace(-3, 1, 8001)
    dens = kde_reflect(grid, s, 0.05, 1.0)
    assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=2e-3)


def test_posterior_zero_when_no_noise(caplog):
    p = mistake_posterior(np.array([0.5, 1.2]), np.array([1.0, 1.5]), 0.0)
    np.testing.assert_array_equal(p, [0.0, 0.0])
    assert "not positive" in caplog.text


def test_posterior_clamped_far_in_tail():
    rng = np.random.default_rng(0)
    post = MistakePosterior(rng.normal(0.6, 0.1, 500), rng.normal(1.3, 0.1, 500), 0.3)
    p = post(np.array([0.0, 0.6, 1.3, 50.0]))
    assert np.all((p >= 0) & (p <= 1))
    assert p[0] < 0.01 and p[2] > 0.9


def test_confidence_weights():
    np.testing.assert_allclose(confidence_weights([0.3, 1.0, 0.0], 0.3), [0.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        confidence_weights([0.5], 1.0)


def _brute_auroc(scores, mask):
    pos, neg = scores[mask], scores[~mask]
    return np.mean([(p > n) + 0.5 * (p == n) for p in pos for n in neg])


@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=40))
def test_auroc_vs_pairwise(pairs):
    scores = np.array([p[0] for p in pairs], dtype=float)
    mask = np.array([p[1] for p in pairs])
    if mask.all() or not mask.any():
        assert auroc(scores, mask) is None
    else:
        assert auroc(scores, mask) == pytest.approx(_brute_auroc(scores, mask))


def test_auroc_perfect():
    assert auroc([0.1, 0.2, 0.8, 0.9], [False, False, True, True]) == 1.0


def test_f1_conventions():
    m = metrics([False, False], [False, False])
    assert m == {"precision": 0.0, "recall": 0.0, "f1": 0.0, "auroc": None}
    m = metrics([True, False, True], [True, False, False], weights=[0.9, 0.1, 0.2])
    assert m["precision"] == 0.5 and m["recall"] == 1.0 and m["f1"] == pytest.approx(2 / 3)
    assert m["f1_weighted"] == pytest.approx(2 * 0.9 / (2 * 0.9 + 0.2))
    perfect = metrics([True, False], [True, False], weights=[1.0, 1.0])
    assert perfect["ncfd"] is None


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=60), st.floats(0.01, 5))
def test_constant_weights_reduce_to_f1(pairs, c):
    pred = np.array([p[0] for p in pairs])
    mask = np.array([p[1] for p in pairs])
    m = metrics(pred, mask, weights=np.full(pred.size, c))
    assert abs(m["f1_weighted"] - m["f1"]) < 1e-12


@given(
    st.lists(st.tuples(st.booleans(), st.booleans(), st.floats(0.0, 1.0)), min_size=2, max_size=60)
)
def test_ncfd_sign(rows):
    pred = np.array([r[0] for r in rows])
    mask = np.array([r[1] for r in rows])
    w = np.array([r[2] for r in rows])
    m = metrics(pred, mask, weights=w)
    if m["ncfd"] is not None:
        assert np.sign(m["ncfd"]) == np.sign(m["f1_weighted"] - m["f1"])


def test_true_positive_increment_first_order():
    rng = np.random.default_rng(0)
    n = 20_000
    pred = rng.random(n) < 0.3
    mask = np.where(rng.random(n) < 0.8, pred, ~pred)
    w = rng.random(n)
    s = 2 * w[pred & mask].sum() + w[pred & ~mask].sum() + w[~pred & mask].sum()
    before = weighted_f1(pred, mask, w)
    for wnew in (1e-3, 0.5, 1.0):
        assert wnew / s < 1e-3
        after = weighted_f1(np.append(pred, True), np.append(mask, True), np.append(w, wnew))
        approx = (1 - before) * 2 * wnew / s
        assert abs((after - before) - approx) / approx < 0.05


def test_detect_mistakes_report():
    rng = np.random.default_rng(3)
    n, nc = 400, 4
    clean = np.arange(n) % nc
    delta = rng.uniform(0.8, 1.2, (n, nc))
    delta[np.arange(n), clean] = rng.uniform(0.2, 0.4, n)
    labels = clean.copy()
    flip = rng.random(n) < 0.2
    labels[flip] = (clean[flip] + 1) % nc
    rep = detect_mistakes(delta, labels, seed=0, mask=flip)
    assert rep.metrics["auroc"] > 0.99 and rep.metrics["f1"] > 0.9
    assert 0 < rep.p_star < 1
    assert rep.ranking[0] in np.flatnonzero(flip)
    json.dumps(rep.to_json(), allow_nan=False)
    bare = detect_mistakes(delta, labels, with_posterior=False)
    assert bare.probabilities is None and bare.metrics == {}


def test_emulation_exact_mistake_rate():
    # a flip away from the noisy label lands back on the clean class with
    # probability 1/(N_c - 1) for every already-mistaken sample
    nc, eta, n = 10, 0.1, 400_000
    rng = np.random.default_rng(1)
    clean = rng.integers(0, nc, n)
    flip = rng.random(n) < eta
    noisy = np.where(flip, (clean + rng.integers(1, nc, n)) % nc, clean)
    _, fake = emulate_mistake_scores(np.ones((n, nc)), noisy, seed=2)
    realized = np.mean(flip)
    exact = (1 - realized) + realized * (nc - 2) / (nc - 1)
    assert abs(np.mean(fake != clean) - exact) < 3 * np.sqrt(exact * (1 - exact) / n)
