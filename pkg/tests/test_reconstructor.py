import dataclasses

import numpy as np
import pytest

from rerkit.graph import fit_similarity_curve, fuzzy_graph
from rerkit.reconstructor import (
    AutoencoderConfig,
    ConfigError,
    Minibatch,
    Reconstructor,
    TrainingError,
    bernoulli_positions,
    dropout_masks,
    error_table,
    fit_reconstructors,
    init_reconstructor,
    layer_sizes,
    loss_and_grad,
    reconstruction_error,
    reconstruction_errors,
    sample_minibatch,
    train_class_reconstructor,
)
from rerkit.rng import substream

TINY = AutoencoderConfig(hidden_dims=[8], latent_dim=3, n_neighbors=5, dropout=0.1, train_dtype="float64")


def test_default_hyperparameters():
    c = AutoencoderConfig()
    assert c.hidden_dims == [256] and c.latent_dim == 10
    assert c.recon_loss_weight == 20.0 and c.batch_size == 64
    assert c.l2_reg == 1e-6 and c.dropout == 0.01 and c.n_epochs == 20
    assert c.n_neighbors == 40 and c.spread == 25.0 and c.min_dist == 24.0
    assert (c.fallback_spread, c.fallback_min_dist) == (24.0, 23.0)


def test_config_rejects_unknown_key():
    with pytest.raises(ConfigError, match="'hiden_dims'"):
        AutoencoderConfig.from_dict({"hiden_dims": [3]})


@pytest.mark.parametrize(
    "kw", [{"latent_dim": 300}, {"dropout": 1.0}, {"batch_size": 0}, {"train_dtype": "float16"}, {"learning_rate": 0}]
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        AutoencoderConfig(**kw)


def test_config_dict_round_trip():
    c = AutoencoderConfig(hidden_dims=[32, 16], latent_dim=4)
    assert AutoencoderConfig.from_dict(c.to_dict()) == c


def _tiny_batch(seed, dtype=np.float64):
    rng = np.random.default_rng(seed)
    X = rng.random((40, 6))
    g = fuzzy_graph(X, 5)
    sel = rng.choice(g.n_edges, 12, replace=False)
    return sample_minibatch(X.astype(dtype), g.head[sel], g.tail[sel], g.n_vertices, TINY, rng)


def gradient_check(rec, batch, curve, config, masks, idx, h=1e-5):
    """``||g - g_fd|| / max(||g||, ||g_fd||)`` over the parameters ``idx``.

    A vector norm rather than a per-entry ratio: entries whose gradient is
    ~1e-7 sit at the float64 rounding floor of a central difference.
    """
    _, _, grad = loss_and_grad(rec, batch, curve, config, masks)
    fds = []
    for i in idx:
        old = rec.params[i]
        rec.params[i] = old + h
        up = loss_and_grad(rec, batch, curve, config, masks)[0]
        rec.params[i] = old - h
        down = loss_and_grad(rec, batch, curve, config, masks)[0]
        rec.params[i] = old
        fds.append((up - down) / (2 * h))
    g, fd = grad[idx], np.array(fds)
    return np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd))


@pytest.mark.parametrize("pair", [(25.0, 24.0), (1.0, 0.1)])
def test_gradient_matches_finite_differences(pair):
    curve = fit_similarity_curve(*pair)
    worst = 0.0
    for trial in range(5):
        rng = substream(7, "gradcheck", trial)
        rec = init_reconstructor(6, TINY, rng)
        rec.params += 0.05 * rng.standard_normal(rec.params.size)
        batch = _tiny_batch(trial)
        masks = dropout_masks(rec, batch, TINY.dropout, rng)
        idx = rng.choice(rec.params.size, 50, replace=False)
        worst = max(worst, gradient_check(rec, batch, curve, TINY, masks, idx))
    assert worst < 1e-4


def test_l2_gradient_closed_form(rng):
    curve = fit_similarity_curve(25.0, 24.0)
    rec = init_reconstructor(6, TINY, rng)
    batch = _tiny_batch(1)
    g0 = loss_and_grad(rec, batch, curve, dataclasses.replace(TINY, l2_reg=0.0))[2]
    g1 = loss_and_grad(rec, batch, curve, dataclasses.replace(TINY, l2_reg=0.3))[2]
    diff = rec.grad_views(g1 - g0)
    for (W, b), (dW, db) in zip(rec.layers, diff):
        np.testing.assert_allclose(dW, 0.6 * W, atol=1e-12)
        np.testing.assert_allclose(db, 0.0, atol=1e-12)


def test_zero_recon_weight_leaves_only_l2_on_decoder(rng):
    curve = fit_similarity_curve(25.0, 24.0)
    cfg = dataclasses.replace(TINY, recon_loss_weight=0.0, l2_reg=0.01)
    rec = init_reconstructor(6, cfg, rng)
    _, _, grad = loss_and_grad(rec, _tiny_batch(2), curve, cfg)
    views = rec.grad_views(grad)
    dW, db = views[-1]
    np.testing.assert_allclose(dW, 2 * 0.01 * rec.decoder[-1][0], atol=1e-14)
    np.testing.assert_allclose(db, 0.0, atol=1e-14)


def _oracle_forward(rec, x):
    h = x
    for i, (W, b) in enumerate(rec.encoder):
        h = np.array([sum(h[k] * W[k, j] for k in range(W.shape[0])) + b[j] for j in range(W.shape[1])])
        if i < len(rec.encoder) - 1:
            h = np.array([max(v, 0.0) for v in h])
    for i, (W, b) in enumerate(rec.decoder):
        h = np.array([sum(h[k] * W[k, j] for k in range(W.shape[0])) + b[j] for j in range(W.shape[1])])
        if i < len(rec.decoder) - 1:
            h = np.array([max(v, 0.0) for v in h])
    return np.array([1.0 / (1.0 + np.exp(-v)) for v in h])


def test_forward_matches_loop_oracle(rng):
    rec = init_reconstructor(6, TINY, rng)
    rec.params += 0.1 * rng.standard_normal(rec.params.size)
    x = rng.random(6)
    out = _oracle_forward(rec, x)
    assert reconstruction_error(rec, x) == pytest.approx(np.linalg.norm(out - x), abs=1e-10)


def test_zero_decoder_gives_half():
    enc, dec = layer_sizes(4, [3], 2)
    rec = Reconstructor(enc, dec)
    x = np.array([0.0, 0.2, 0.9, 1.0])
    assert reconstruction_error(rec, x) == pytest.approx(np.linalg.norm(0.5 - x))
    assert reconstruction_error(rec, np.full(4, 0.5)) == 0.0


def test_error_table_vs_loop(rng):
    recs = [init_reconstructor(6, TINY, substream(0, "t", c), c) for c in range(3)]
    X = rng.random((100, 6))
    table = error_table(recs, X, workers=2)
    loop = np.array([[reconstruction_error(r, x) for r in recs] for x in X])
    np.testing.assert_allclose(table, loop, rtol=1e-12)
    single = error_table(recs[:1], X)
    np.testing.assert_allclose(single[:, 0], reconstruction_errors(recs[0], X))
    same = error_table([recs[0], recs[0]], X)
    np.testing.assert_array_equal(same[:, 0], same[:, 1])


def test_error_table_dimension_check(rng):
    rec = init_reconstructor(6, TINY, rng)
    with pytest.raises(ValueError, match="d=5"):
        error_table([rec], rng.random((3, 5)))


def test_bernoulli_positions_rate():
    rng = np.random.default_rng(3)
    pos = bernoulli_positions(200_000, 0.01, rng)
    assert np.all(np.diff(pos) > 0) and pos.max() < 200_000
    assert abs(pos.size / 200_000 - 0.01) < 0.001
    np.testing.assert_array_equal(bernoulli_positions(5, 1.0, rng), np.arange(5))


def test_dropout_masks_shape_and_scale(rng):
    rec = init_reconstructor(6, TINY, rng)
    batch = _tiny_batch(0)
    enc, dec = dropout_masks(rec, batch, 0.25, rng)
    assert enc[0].shape == (batch.x.shape[0], 8)
    assert dec[0].shape == (batch.n_recon, 8)
    assert set(np.unique(enc[0])) <= {0.0, 1 / 0.75}
    assert dropout_masks(rec, batch, 0.0, rng) is None


@pytest.fixture(scope="module")
def blob():
    return np.random.default_rng(0).normal(0.5, 0.1, size=(200, 16)).clip(0, 1)


def test_training_beats_untrained_net(blob):
    cfg = AutoencoderConfig(hidden_dims=[32], latent_dim=4, n_epochs=10, learning_rate=1e-3)
    untrained = init_reconstructor(16, cfg, substream(cfg.seed, "train", 0))
    trained = train_class_reconstructor(blob, cfg)
    assert reconstruction_errors(trained, blob).mean() < reconstruction_errors(untrained, blob).mean()
    d = trained.diagnostics
    assert d["epochs_run"] == len(d["loss_history"]) and np.isfinite(d["final_loss"])


def test_training_is_deterministic(blob, small_config):
    a = train_class_reconstructor(blob, small_config, class_id=1)
    b = train_class_reconstructor(blob, small_config, class_id=1)
    assert a.params.tobytes() == b.params.tobytes()


def test_pure_umap_objective_trains(blob, small_config):
    rec = train_class_reconstructor(blob, dataclasses.replace(small_config, recon_loss_weight=0.0))
    assert np.all(np.isfinite(rec.params))


def test_float64_training_path(blob, small_config):
    rec = train_class_reconstructor(blob, dataclasses.replace(small_config, train_dtype="float64"))
    assert rec.params.dtype == np.float64 and np.all(np.isfinite(rec.params))


def test_full_loss_tracking(blob, small_config):
    rec = train_class_reconstructor(blob, small_config, track_full_loss=True)
    assert len(rec.diagnostics["full_loss_history"]) == rec.diagnostics["epochs_run"]


def test_small_class_lowers_k(small_config, caplog):
    X = np.random.default_rng(1).random((6, 8))
    rec = train_class_reconstructor(X, small_config)
    assert rec.diagnostics["n_neighbors"] == 5
    assert "lowering n_neighbors" in caplog.text


def test_empty_class_raises(small_config):
    X = np.random.default_rng(1).random((30, 4))
    with pytest.raises(TrainingError, match="class 1"):
        fit_reconstructors(X, np.zeros(30, dtype=int), 3, small_config, workers=1)


def test_parallel_fit_matches_serial(small_config):
    rng = np.random.default_rng(2)
    X = rng.random((90, 5))
    y = np.repeat(np.arange(3), 30)
    a = fit_reconstructors(X, y, 3, small_config, workers=1)
    b = fit_reconstructors(X, y, 3, small_config, workers=3)
    for ra, rb in zip(a, b):
        assert ra.class_id == rb.class_id
        assert ra.params.tobytes() == rb.params.tobytes()


def test_minibatch_structure(blob):
    rng = np.random.default_rng(0)
    g = fuzzy_graph(blob, 10)
    b = sample_minibatch(blob, g.head[:64], g.tail[:64], g.n_vertices, AutoencoderConfig(), rng)
    assert isinstance(b, Minibatch)
    assert b.x.shape == (192, 16) and b.n_recon == 64 and b.n_edges == 64
    assert b.head.size == 64 * 6 and b.negative.sum() == 64 * 5
    assert np.all(b.tail[~b.negative] == np.arange(64, 128))
