"""Per-class shallow autoencoders regularized with a UMAP graph-layout loss."""

import dataclasses
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import kernels
from .graph import FuzzyGraph, SimilarityCurve, fit_similarity_curve, fuzzy_graph
from .rng import substream

log = logging.getLogger(__name__)

Q_LO = 1e-12
Q_HI = 1.0 - 1e-12


class TrainingError(RuntimeError):
    def __init__(self, class_id, message):
        super().__init__(f"class {class_id}: {message}")
        self.class_id = class_id


class ConfigError(ValueError):
    pass


@dataclass
class AutoencoderConfig:
    hidden_dims: list = field(default_factory=lambda: [256])
    latent_dim: int = 10
    recon_loss_weight: float = 20.0
    batch_size: int = 64
    l2_reg: float = 1e-6
    dropout: float = 0.01
    n_epochs: int = 20
    learning_rate: float = 5e-5
    n_neighbors: int = 40
    spread: float = 25.0
    min_dist: float = 24.0
    negative_sample_rate: int = 5
    repulsion_strength: float = 1.0
    seed: int = 0
    fallback_spread: float = 24.0
    fallback_min_dist: float = 23.0
    early_stop_tol: float = 1e-4
    early_stop_patience: int = 3
    train_dtype: str = "float32"

    def __post_init__(self):
        self.hidden_dims = [int(h) for h in self.hidden_dims]
        if self.latent_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ConfigError("layer sizes must be positive")
        if self.hidden_dims and self.latent_dim >= min(self.hidden_dims):
            raise ConfigError("latent_dim must be smaller than every hidden dimension")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.batch_size < 1 or self.n_epochs < 1 or self.n_neighbors < 1:
            raise ConfigError("batch_size, n_epochs and n_neighbors must be positive")
        if self.negative_sample_rate < 0:
            raise ConfigError("negative_sample_rate must be non-negative")
        if self.train_dtype not in ("float32", "float64"):
            raise ConfigError("train_dtype must be 'float32' or 'float64'")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")

    @classmethod
    def from_dict(cls, obj: dict) -> "AutoencoderConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        for key in obj:
            if key not in names:
                raise ConfigError(f"unknown config key {key!r}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def sigmoid(x):
    """Logistic function via ``tanh``; overflow-free and several times faster
    than a masked ``exp`` formulation."""
    out = np.multiply(x, 0.5)
    np.tanh(out, out=out)
    out *= 0.5
    out += 0.5
    return out


def layer_sizes(d: int, hidden_dims, latent_dim: int):
    """``(encoder_sizes, decoder_sizes)`` as node counts per layer."""
    enc = [int(d)] + [int(h) for h in hidden_dims] + [int(latent_dim)]
    return enc, enc[::-1]


def _split(flat, enc_sizes, dec_sizes):
    pos = 0
    out = []
    for sizes in (enc_sizes, dec_sizes):
        layers = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            W = flat[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
            pos += fan_in * fan_out
            b = flat[pos : pos + fan_out]
            pos += fan_out
            layers.append([W, b])
        out.append(layers)
    return out[0], out[1]


def n_params(enc_sizes, dec_sizes) -> int:
    return sum(a * b + b for s in (enc_sizes, dec_sizes) for a, b in zip(s[:-1], s[1:]))


class Reconstructor:
    """Encoder/decoder weights for one class.

    All weights live in one contiguous vector ``params``; ``encoder`` and
    ``decoder`` are lists of ``[W, b]`` views into it, ``W`` shaped
    ``(fan_in, fan_out)``. Hidden layers use ReLU, the latent layer is linear
    and the decoder output is a sigmoid.
    """

    def __init__(self, enc_sizes, dec_sizes, params=None, class_id: int = 0, diagnostics=None):
        self.enc_sizes = [int(v) for v in enc_sizes]
        self.dec_sizes = [int(v) for v in dec_sizes]
        size = n_params(self.enc_sizes, self.dec_sizes)
        if params is None:
            params = np.zeros(size)
        params = np.ascontiguousarray(params)
        if params.dtype not in (np.float32, np.float64):
            params = params.astype(np.float64)
        if params.shape != (size,):
            raise ValueError(f"expected {size} parameters, got shape {params.shape}")
        self.params = params
        self.encoder, self.decoder = _split(params, self.enc_sizes, self.dec_sizes)
        self.class_id = class_id
        self.diagnostics = diagnostics if diagnostics is not None else {}

    @property
    def dim(self) -> int:
        return self.enc_sizes[0]

    @property
    def latent_dim(self) -> int:
        return self.enc_sizes[-1]

    @property
    def layers(self) -> list:
        return self.encoder + self.decoder

    def grad_views(self, flat):
        """Split a gradient vector shaped like ``params`` into per-layer views."""
        enc, dec = _split(flat, self.enc_sizes, self.dec_sizes)
        return enc + dec

    def encode(self, X):
        h = np.asarray(X, dtype=np.float64)
        for i, (W, b) in enumerate(self.encoder):
            h = h @ W + b
            if i < len(self.encoder) - 1:
                np.maximum(h, 0.0, out=h)
        return h

    def decode(self, Z):
        h = Z
        for i, (W, b) in enumerate(self.decoder):
            h = h @ W + b
            if i < len(self.decoder) - 1:
                np.maximum(h, 0.0, out=h)
        return sigmoid(h)

    def reconstruct(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise ValueError(f"reconstructor expects d={self.dim}, got d={X.shape[1]}")
        return self.decode(self.encode(X))

    def flat_params(self) -> np.ndarray:
        return self.params.copy()

    def set_flat_params(self, flat) -> None:
        self.params[:] = flat

    def l2_norm_sq(self) -> float:
        return float(sum(np.dot(W.ravel(), W.ravel()) for W, _ in self.layers))


def init_reconstructor(d: int, config: AutoencoderConfig, rng, class_id: int = 0) -> Reconstructor:
    """Glorot-uniform weights, zero biases."""
    enc_sizes, dec_sizes = layer_sizes(d, config.hidden_dims, config.latent_dim)
    rec = Reconstructor(enc_sizes, dec_sizes, class_id=class_id)
    for W, _ in rec.layers:
        limit = math.sqrt(6.0 / (W.shape[0] + W.shape[1]))
        W[...] = rng.uniform(-limit, limit, size=W.shape)
    return rec


# ---------------------------------------------------------------------------
# loss and analytic gradient
# ---------------------------------------------------------------------------


@dataclass
class Minibatch:
    """Encoder inputs plus the pair structure over their rows.

    The first ``n_recon`` rows of ``x`` also enter the reconstruction loss.
    Pairs ``(head[p], tail[p])`` index rows of ``x``; ``negative[p]`` marks
    repulsive pairs. The UMAP term is averaged over ``n_edges``.
    """

    x: np.ndarray
    n_recon: int
    head: np.ndarray
    tail: np.ndarray
    negative: np.ndarray
    n_edges: int


def bernoulli_positions(n: int, p: float, rng) -> np.ndarray:
    """Indices in ``[0, n)`` of successes in ``n`` independent Bernoulli(p) trials.

    Gaps between successes are geometric, so only about ``n * p`` random
    numbers are drawn instead of ``n``.
    """
    if p >= 1.0:
        return np.arange(n)
    out = []
    pos = -1
    chunk = max(16, int(n * p * 1.2) + 16)
    while True:
        steps = np.cumsum(rng.geometric(p, size=chunk)) + pos
        out.append(steps[steps < n])
        if steps[-1] >= n:
            break
        pos = steps[-1]
    return np.concatenate(out)


def dropout_masks(rec: Reconstructor, batch: Minibatch, rate: float, rng):
    """Inverted-dropout multipliers for every hidden activation, or ``None``."""
    if rate <= 0.0:
        return None
    keep = 1.0 - rate
    hidden = rec.enc_sizes[1:-1]
    dtype = batch.x.dtype

    def draw(rows, width):
        m = np.full(rows * width, 1.0 / keep, dtype=dtype)
        m[bernoulli_positions(rows * width, rate, rng)] = 0.0
        return m.reshape(rows, width)

    enc = [draw(batch.x.shape[0], w) for w in hidden]
    dec = [draw(batch.n_recon, w) for w in hidden[::-1]]
    return enc, dec


def loss_and_grad(rec: Reconstructor, batch: Minibatch, curve: SimilarityCurve, config: AutoencoderConfig, masks=None, out=None):
    """Total loss ``L_umap + w * L_recon + l2 * sum ||W||^2`` and its gradient.

    Returns ``(loss, parts, grad)`` where ``grad`` is a vector shaped like
    ``rec.params`` (written into ``out`` when given).
    """
    enc_masks, dec_masks = masks if masks is not None else (None, None)
    grad = np.empty_like(rec.params) if out is None else out
    gviews = rec.grad_views(grad)
    n_enc = len(rec.encoder)
    l2w = config.l2_reg

    # encoder forward
    acts = [batch.x]
    h = batch.x
    for i, (W, b) in enumerate(rec.encoder):
        h = h @ W
        h += b
        if i < n_enc - 1:
            np.maximum(h, 0.0, out=h)
            if enc_masks is not None:
                h *= enc_masks[i]
        acts.append(h)
    Z = h

    # decoder forward on reconstruction rows
    nr = batch.n_recon
    h = Z[:nr]
    d_acts = [h]
    for i, (W, b) in enumerate(rec.decoder):
        h = h @ W
        h += b
        if i < len(rec.decoder) - 1:
            np.maximum(h, 0.0, out=h)
            if dec_masks is not None:
                h *= dec_masks[i]
        else:
            h = sigmoid(h)
        d_acts.append(h)
    R = h
    target = batch.x[:nr]

    n_out = max(R.size, 1)
    err = R - target
    recon = float(np.dot(err.ravel(), err.ravel())) / n_out

    umap_sum, dZ = kernels.umap_pairs(
        Z,
        batch.head,
        batch.tail,
        batch.negative,
        curve.a,
        curve.b,
        config.repulsion_strength,
        Q_LO,
        Q_HI,
    )
    scale = 1.0 / max(batch.n_edges, 1)
    umap = umap_sum * scale
    dZ *= scale

    l2 = rec.l2_norm_sq()
    loss = umap + config.recon_loss_weight * recon + l2w * l2

    # decoder backward; a post-ReLU activation is zero exactly where the
    # unit was inactive or dropped, which is the mask the backward pass needs
    g = err
    g *= (config.recon_loss_weight * 2.0 / n_out) * R * (1.0 - R)
    for i in range(len(rec.decoder) - 1, -1, -1):
        W, _ = rec.decoder[i]
        gW, gb = gviews[n_enc + i]
        np.matmul(d_acts[i].T, g, out=gW)
        gW += (2.0 * l2w) * W
        np.sum(g, axis=0, out=gb)
        g = g @ W.T
        if i > 0:
            if dec_masks is not None:
                g *= dec_masks[i - 1]
            g *= d_acts[i] > 0
    dZ[:nr] += g

    # encoder backward
    g = dZ
    for i in range(n_enc - 1, -1, -1):
        W, _ = rec.encoder[i]
        gW, gb = gviews[i]
        np.matmul(acts[i].T, g, out=gW)
        gW += (2.0 * l2w) * W
        np.sum(g, axis=0, out=gb)
        if i > 0:
            g = g @ W.T
            if enc_masks is not None:
                g *= enc_masks[i - 1]
            g *= acts[i] > 0

    parts = {"umap": umap, "recon": recon, "l2": l2}
    return loss, parts, grad


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


class Adam:
    """Adam over one flat parameter vector, updated in place."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-7, shadow=None):
        # ``shadow`` (optional) receives a copy of every update, e.g. in another dtype
        self.params = params
        self.shadow = params if shadow is None else shadow
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros_like(self.shadow)
        self.v = np.zeros_like(self.shadow)
        self.t = 0

    def step(self, grad):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        kernels.adam_update(
            self.params, grad, self.m, self.v, self.lr, self.beta1, self.beta2, self.eps, c1, c2, self.shadow
        )


def sample_minibatch(X, heads, tails, n_vertices: int, config: AutoencoderConfig, rng) -> Minibatch:
    """Rows: edge heads, edge tails, then a uniform pool of negative vertices.

    Each head is paired with its tail (attractive) and with
    ``negative_sample_rate`` vertices from the pool (repulsive).
    """
    nb = heads.shape[0]
    pool = rng.integers(0, n_vertices, size=nb)
    r = config.negative_sample_rate
    picks = rng.integers(0, nb, size=nb * r)
    idx = np.arange(nb)
    head = np.concatenate([idx, np.repeat(idx, r)])
    tail = np.concatenate([nb + idx, 2 * nb + picks])
    negative = np.concatenate([np.zeros(nb, dtype=np.bool_), np.ones(nb * r, dtype=np.bool_)])
    x = X[np.concatenate([heads, tails, pool])]
    return Minibatch(x, nb, head, tail, negative, nb)


def full_loss(rec: Reconstructor, X, graph: FuzzyGraph, curve: SimilarityCurve, config: AutoencoderConfig, seed: int = 0) -> float:
    """Dropout-free loss over the whole class with a fixed negative sample.

    Edge terms are weighted by membership strength, which is what the
    Bernoulli edge sampling averages to.
    """
    rng = substream(seed, "full-loss")
    Z = rec.encode(X)
    R = rec.decode(Z)
    recon = float(np.mean((R - X) ** 2))
    r = config.negative_sample_rate
    n_e = graph.n_edges
    head = np.concatenate([graph.head, np.repeat(graph.head, r)])
    tail = np.concatenate([graph.tail, rng.integers(0, graph.n_vertices, size=n_e * r)])
    negative = np.concatenate([np.zeros(n_e, dtype=np.bool_), np.ones(n_e * r, dtype=np.bool_)])
    weights = np.concatenate([graph.weight, np.repeat(graph.weight, r)])
    s = np.sum((Z[head] - Z[tail]) ** 2, axis=1)
    q = np.clip(curve.q(np.sqrt(s)), Q_LO, Q_HI)
    q = np.where(np.isfinite(q), q, Q_HI)
    terms = np.where(negative, -config.repulsion_strength * np.log1p(-q), -np.log(q))
    total = float(np.sum(weights * terms) / max(graph.weight.sum(), 1e-300))
    l2 = rec.l2_norm_sq()
    return total + config.recon_loss_weight * recon + config.l2_reg * l2


def _train_once(X, graph, curve, config, rng, class_id, track_full_loss):
    rec = init_reconstructor(X.shape[1], config, rng, class_id)
    # optimisation runs entirely in the training dtype; the result is widened
    # back into the float64 weights at the end
    dtype = np.dtype(config.train_dtype)
    if dtype == rec.params.dtype:
        work, Xw = rec, X
    else:
        work = Reconstructor(rec.enc_sizes, rec.dec_sizes, rec.params.astype(dtype), class_id)
        Xw = X.astype(dtype)
    opt = Adam(work.params, config.learning_rate)
    grad = np.empty_like(work.params)
    # the graph is symmetric, so each undirected edge is visited once per
    # epoch with a random orientation
    und = np.flatnonzero(graph.head < graph.tail)
    und_w = graph.weight[und]
    history, full_history = [], []
    patience = 0
    early = False
    for epoch in range(config.n_epochs):
        keep = und[rng.random(und.shape[0]) < und_w]
        if keep.size == 0:
            keep = und
        order = rng.permutation(keep)
        flip = rng.random(order.shape[0]) < 0.5
        heads = np.where(flip, graph.tail[order], graph.head[order])
        tails = np.where(flip, graph.head[order], graph.tail[order])
        total, count = 0.0, 0
        for start in range(0, order.shape[0], config.batch_size):
            stop = start + config.batch_size
            batch = sample_minibatch(Xw, heads[start:stop], tails[start:stop], graph.n_vertices, config, rng)
            masks = dropout_masks(work, batch, config.dropout, rng)
            loss, _, _ = loss_and_grad(work, batch, curve, config, masks, out=grad)
            if not math.isfinite(loss):
                return None, history
            opt.step(grad)
            total += loss * batch.n_edges
            count += batch.n_edges
        epoch_loss = total / count
        if not np.all(np.isfinite(work.params)):
            return None, history
        if history:
            prev = history[-1]
            gain = (prev - epoch_loss) / max(abs(prev), 1e-300)
            patience = patience + 1 if gain < config.early_stop_tol else 0
        history.append(epoch_loss)
        if track_full_loss:
            if work is not rec:
                rec.params[:] = work.params
            full_history.append(full_loss(rec, X, graph, curve, config, seed=class_id))
        if patience >= config.early_stop_patience:
            early = True
            break
    if work is not rec:
        rec.params[:] = work.params
    rec.diagnostics = {
        "final_loss": history[-1],
        "epochs_run": len(history),
        "early_stopped": early,
        "loss_history": history,
    }
    if track_full_loss:
        rec.diagnostics["full_loss_history"] = full_history
    return rec, history


def train_class_reconstructor(
    X,
    config: AutoencoderConfig | None = None,
    class_id: int = 0,
    rng=None,
    track_full_loss: bool = False,
) -> Reconstructor:
    """Fit one reconstructor on the normalized features of a single class.

    Retries once with the fallback ``(spread, min_dist)`` pair when the loss
    goes non-finite; raises :class:`TrainingError` if that fails too.
    """
    config = config or AutoencoderConfig()
    X = np.ascontiguousarray(X, dtype=np.float64)
    m = X.shape[0]
    if rng is None:
        rng = substream(config.seed, "train", class_id)
    if m < 2:
        raise TrainingError(class_id, f"need at least 2 samples, got {m}")
    k = config.n_neighbors
    if m < k + 1:
        log.warning("class %s has %d samples; lowering n_neighbors from %d to %d", class_id, m, k, m - 1)
        k = m - 1
    graph = fuzzy_graph(X, k)
    attempts = [(config.spread, config.min_dist), (config.fallback_spread, config.fallback_min_dist)]
    for attempt, (spread, min_dist) in enumerate(attempts):
        curve = fit_similarity_curve(spread, min_dist)
        rec, history = _train_once(X, graph, curve, config, rng, class_id, track_full_loss)
        if rec is not None:
            rec.diagnostics.update(
                n_neighbors=k,
                n_samples=m,
                curve={"a": curve.a, "b": curve.b, "spread": spread, "min_dist": min_dist},
                retried=attempt > 0,
            )
            return rec
        log.warning("class %s: non-finite loss with spread=%g min_dist=%g", class_id, spread, min_dist)
    raise TrainingError(class_id, "loss became non-finite after the fallback retry")


def default_workers() -> int:
    env = os.environ.get("RER_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def fit_reconstructors(X, labels, n_classes: int, config: AutoencoderConfig | None = None, workers: int | None = None) -> list:
    """Train one reconstructor per class; class ``c`` draws from stream ``(seed, "train", c)``."""
    config = config or AutoencoderConfig()
    labels = np.asarray(labels)
    workers = workers or default_workers()

    def job(c):
        rows = np.flatnonzero(labels == c)
        if rows.size == 0:
            raise TrainingError(c, "no samples carry this label")
        return train_class_reconstructor(X[rows], config, class_id=c)

    if workers == 1 or n_classes == 1:
        return [job(c) for c in range(n_classes)]
    with threadpool_limits(limits=1, user_api="blas"):
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(job, range(n_classes)))


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


def reconstruction_error(rec: Reconstructor, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.linalg.norm(rec.reconstruct(x[None, :])[0] - x))


def reconstruction_errors(rec: Reconstructor, X, block: int = 4096) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    out = np.empty(X.shape[0])
    for start in range(0, X.shape[0], block):
        xb = X[start : start + block]
        diff = rec.reconstruct(xb) - xb
        out[start : start + block] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return out


def error_table(reconstructors: list, X, workers: int | None = None) -> np.ndarray:
    """``N x N_c`` matrix with entry ``[j, c]`` the error of reconstructor ``c`` on row ``j``."""
    X = np.asarray(X, dtype=np.float64)
    for rec in reconstructors:
        if rec.dim != X.shape[1]:
            raise ValueError(f"features have d={X.shape[1]} but reconstructors expect d={rec.dim}")
    workers = workers or default_workers()
    if workers == 1 or len(reconstructors) == 1:
        cols = [reconstruction_errors(r, X) for r in reconstructors]
    else:
        with threadpool_limits(limits=1, user_api="blas"):
            with ThreadPoolExecutor(max_workers=workers) as pool:
                cols = list(pool.map(lambda r: reconstruction_errors(r, X), reconstructors))
    return np.column_stack(cols)
