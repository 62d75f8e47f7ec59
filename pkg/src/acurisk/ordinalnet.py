"""Chunked note encoding and a cumulative-link ordinal head.

The transformer encoder is replaced by :class:`HashingEncoder`, a seeded
hashed bag-of-tokens projection. Anything with the same ``encode`` contract
(list of at most 256 tokens -> fixed-length float vector, deterministic) can
be dropped in instead.

Ordinal head: score ``s = w . x`` and three ordered thresholds
``t1 < t2 < t3`` built as ``t1 = r0``, ``t(k+1) = tk + exp(rk)``.
``P(category <= k) = sigmoid(tk - s)``; the four slice probabilities are the
successive differences.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy.special import expit

CHUNK_LEN = 256
MAX_CHUNKS = 25
EMBED_DIM = 128
PROB_FLOOR = 1e-12


class Encoder(Protocol):
    dim: int

    def encode(self, chunk: Sequence[str]) -> np.ndarray: ...


@dataclass(frozen=True)
class ChunkSet:
    chunks: tuple[tuple[str, ...], ...]
    truncated: bool = False

    def __len__(self):
        return len(self.chunks)


def chunk(tokens: Sequence[str], size: int = CHUNK_LEN, max_chunks: int = MAX_CHUNKS) -> ChunkSet:
    """Greedy split into ``size``-token chunks, keeping at most ``max_chunks``."""
    if len(tokens) == 0:
        raise ValueError("cannot chunk an empty token stream")
    tokens = tuple(tokens)
    limit = size * max_chunks
    truncated = len(tokens) > limit
    tokens = tokens[:limit]
    return ChunkSet(tuple(tokens[i:i + size] for i in range(0, len(tokens), size)), truncated)


class HashingEncoder:
    """Deterministic stand-in encoder.

    Tokens are hashed (keyed BLAKE2b) into ``n_buckets`` count bins; the
    L2-normalised count vector is projected by a seeded Gaussian matrix and
    squashed with tanh. Token order inside a chunk does not matter.
    """

    def __init__(self, dim: int = EMBED_DIM, n_buckets: int = 4096, seed: int = 0):
        self.dim = dim
        self.n_buckets = n_buckets
        self.seed = seed
        self._key = seed.to_bytes(8, "little", signed=False)
        self.projection = np.random.default_rng(seed).standard_normal((n_buckets, dim))
        self._cache: dict[str, int] = {}

    def bucket(self, token: str) -> int:
        b = self._cache.get(token)
        if b is None:
            h = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=self._key).digest()
            b = int.from_bytes(h, "little") % self.n_buckets
            self._cache[token] = b
        return b

    def encode(self, chunk_tokens: Sequence[str]) -> np.ndarray:
        if len(chunk_tokens) > CHUNK_LEN:
            raise ValueError(f"chunk longer than {CHUNK_LEN} tokens")
        if not chunk_tokens:
            return np.zeros(self.dim)
        idx = np.fromiter((self.bucket(t) for t in chunk_tokens), dtype=np.int64, count=len(chunk_tokens))
        counts = np.bincount(idx, minlength=self.n_buckets).astype(float)
        counts /= np.linalg.norm(counts)
        return np.tanh(counts @ self.projection)


def average_embeddings(embeddings: Sequence[np.ndarray]) -> np.ndarray:
    if len(embeddings) == 0:
        raise ValueError("no embeddings to average")
    return np.mean(np.stack(embeddings), axis=0)


def embed_document(tokens: Sequence[str], encoder: Encoder) -> tuple[np.ndarray, bool]:
    """Chunk, encode and average; returns (embedding, truncated)."""
    cs = chunk(tokens)
    return average_embeddings([encoder.encode(c) for c in cs.chunks]), cs.truncated


def fuse(note_embedding: np.ndarray, shd) -> np.ndarray:
    """Concatenate a note embedding with (standardised) SHD values."""
    e = np.asarray(note_embedding, dtype=float)
    s = np.asarray(shd, dtype=float)
    if e.ndim != s.ndim or (e.ndim == 2 and e.shape[0] != s.shape[0]):
        raise ValueError(f"dimension mismatch: {e.shape} vs {s.shape}")
    return np.concatenate([e, s], axis=-1)


def thresholds(theta_raw) -> np.ndarray:
    r = np.asarray(theta_raw, dtype=float)
    return r[0] + np.r_[0.0, np.cumsum(np.exp(r[1:]))]


def _slice_probs(th: np.ndarray, s: np.ndarray) -> np.ndarray:
    """(n, 4) slice probabilities, accurate in the tails.

    A middle slice sigmoid(a) - sigmoid(b) (a > b) is evaluated as
    sigmoid(a) * sigmoid(-b) * (1 - exp(b - a)).
    """
    a = th[None, :] - s[:, None]  # (n, 3)
    out = np.empty((s.size, 4))
    out[:, 0] = expit(a[:, 0])
    for k in (1, 2):
        out[:, k] = expit(a[:, k]) * expit(-a[:, k - 1]) * -np.expm1(a[:, k - 1] - a[:, k])
    out[:, 3] = expit(-a[:, 2])
    return out


@dataclass(frozen=True)
class OrdinalProbabilities:
    slices: np.ndarray      # P(x<=30), P(30<x<=180), P(180<x<=365), P(x>365)
    cumulative: np.ndarray  # P(x<=30), P(x<=180), P(x<=365)


@dataclass
class OrdinalModel:
    w: np.ndarray
    theta_raw: np.ndarray
    fusion: bool = False
    embed_dim: int = EMBED_DIM
    encoder_seed: int = 0
    shd_names: list[str] = field(default_factory=list)
    shd_mean: list[float] = field(default_factory=list)
    shd_std: list[float] = field(default_factory=list)
    train_config: dict = field(default_factory=dict)

    @property
    def thresholds(self) -> np.ndarray:
        return thresholds(self.theta_raw)

    def to_json(self) -> str:
        d = {
            "w": [float(v) for v in self.w],
            "theta_raw": [float(v) for v in self.theta_raw],
            "d": self.embed_dim,
            "fusion": self.fusion,
            "encoder_seed": self.encoder_seed,
            "shd_names": self.shd_names,
            "shd_mean": self.shd_mean,
            "shd_std": self.shd_std,
            "training": self.train_config,
        }
        return json.dumps(d, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "OrdinalModel":
        d = json.loads(text)
        return cls(np.array(d["w"]), np.array(d["theta_raw"]), d["fusion"], d["d"],
                   d["encoder_seed"], d["shd_names"], d["shd_mean"], d["shd_std"], d["training"])


def forward(model: OrdinalModel, x) -> OrdinalProbabilities:
    """Probabilities for one input vector or a (n, dim) batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != model.w.size:
        raise ValueError(f"input has {X.shape[1]} dims, model expects {model.w.size}")
    s = X @ model.w
    th = model.thresholds
    cum = expit(th[None, :] - s[:, None])
    sl = _slice_probs(th, s)
    if single:
        return OrdinalProbabilities(sl[0], cum[0])
    return OrdinalProbabilities(sl, cum)


def cll_loss(probs: OrdinalProbabilities, category) -> float:
    """Mean negative log-likelihood of the observed category (1-based)."""
    sl = np.atleast_2d(probs.slices)
    cat = np.atleast_1d(np.asarray(getattr(category, "category", category), dtype=int))
    p = sl[np.arange(cat.size), cat - 1]
    return float(-np.mean(np.log(np.maximum(p, PROB_FLOOR))))


def loss_and_grad(w: np.ndarray, theta_raw: np.ndarray, X: np.ndarray, cat: np.ndarray
                  ) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cumulative-link loss and its analytic gradient in (w, theta_raw).

    Uses d(-log p)/d(a) for the slice p = sigmoid(a_k) - sigmoid(a_{k-1}),
    a_k = t_k - s; slices below the probability floor contribute no gradient.
    """
    n = X.shape[0]
    s = X @ w
    th = thresholds(theta_raw)
    a = th[None, :] - s[:, None]
    sl = _slice_probs(th, s)
    idx = cat - 1
    p = sl[np.arange(n), idx]
    floored = p < PROB_FLOOR
    loss = float(-np.mean(np.log(np.maximum(p, PROB_FLOOR))))

    dens = expit(a) * expit(-a)  # sigmoid'(a_k), (n, 3)
    # dp/d t_k for the upper (k = cat) and lower (k = cat - 1) threshold
    dp_dth = np.zeros((n, 3))
    rows = np.arange(n)
    upper = idx <= 2
    lower = idx >= 1
    dp_dth[rows[upper], idx[upper]] = dens[rows[upper], idx[upper]]
    dp_dth[rows[lower], idx[lower] - 1] = -dens[rows[lower], idx[lower] - 1]
    dp_ds = -dp_dth.sum(axis=1)
    coef = np.where(floored, 0.0, -1.0 / np.maximum(p, PROB_FLOOR)) / n
    g_w = X.T @ (coef * dp_ds)
    g_th = (coef[:, None] * dp_dth).sum(axis=0)
    # chain rule through t1 = r0, t2 = r0 + e^r1, t3 = r0 + e^r1 + e^r2
    e = np.exp(theta_raw[1:])
    g_r = np.array([g_th.sum(), (g_th[1] + g_th[2]) * e[0], g_th[2] * e[1]])
    return loss, g_w, g_r


@dataclass
class TrainConfig:
    lr: float = 0.5
    max_epochs: int = 5000
    patience: int = 50
    val_fraction: float = 0.2
    seed: int = 0
    min_delta: float = 1e-7


@dataclass
class TrainResult:
    model: OrdinalModel
    train_loss: list[float]
    val_loss: list[float]
    best_epoch: int


def _init_theta(cat: np.ndarray) -> np.ndarray:
    # thresholds at the empirical cumulative log-odds
    cum = np.array([(cat <= k).mean() for k in (1, 2, 3)])
    cum = np.clip(cum, 1e-3, 1 - 1e-3)
    th = np.log(cum / (1 - cum))
    th = np.maximum.accumulate(th)
    gaps = np.maximum(np.diff(th), 1e-2)
    return np.r_[th[0], np.log(gaps)]


def train(X: np.ndarray, categories, config: TrainConfig | None = None, *,
          fusion: bool = False, **model_kw) -> TrainResult:
    """Full-batch gradient descent on the cumulative-link loss.

    A random ``val_fraction`` of rows is held out for early stopping; a step
    that raises the training loss is undone and the step size halved.
    """
    cfg = config or TrainConfig()
    X = np.asarray(X, dtype=float)
    cat = np.asarray(getattr(categories, "category", categories), dtype=int).ravel()
    if X.shape[0] != cat.size:
        raise ValueError("X and categories differ in length")
    if np.unique(cat).size < 2:
        raise ValueError("training data holds a single category")
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(cat.size)
    n_val = int(round(cfg.val_fraction * cat.size))
    val, tr = perm[:n_val], perm[n_val:]
    Xtr, ctr = X[tr], cat[tr]
    Xva, cva = X[val], cat[val]

    w = np.zeros(X.shape[1])
    r = _init_theta(ctr)
    lr = cfg.lr
    loss, gw, gr = loss_and_grad(w, r, Xtr, ctr)

    def val_loss(w_, r_):
        if n_val == 0:
            return loss_and_grad(w_, r_, Xtr, ctr)[0]
        return loss_and_grad(w_, r_, Xva, cva)[0]

    best = (val_loss(w, r), w.copy(), r.copy(), 0)
    train_hist, val_hist = [loss], [best[0]]
    since_best = 0
    for epoch in range(1, cfg.max_epochs + 1):
        w_new, r_new = w - lr * gw, r - lr * gr
        loss_new, gw_new, gr_new = loss_and_grad(w_new, r_new, Xtr, ctr)
        while loss_new > loss and lr > 1e-12:
            lr *= 0.5
            w_new, r_new = w - lr * gw, r - lr * gr
            loss_new, gw_new, gr_new = loss_and_grad(w_new, r_new, Xtr, ctr)
        if loss_new > loss:
            break
        w, r, loss, gw, gr = w_new, r_new, loss_new, gw_new, gr_new
        v = val_loss(w, r)
        train_hist.append(loss)
        val_hist.append(v)
        if v < best[0] - cfg.min_delta:
            best = (v, w.copy(), r.copy(), epoch)
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    _, w_best, r_best, best_epoch = best
    model = OrdinalModel(w_best, r_best, fusion=fusion, train_config=asdict(cfg), **model_kw)
    return TrainResult(model, train_hist, val_hist, best_epoch)


def used_shd_count(model: OrdinalModel, threshold: float = 1e-3) -> int:
    """SHD-aligned weights with magnitude at least ``threshold``."""
    if not model.fusion:
        raise ValueError("used_shd_count needs a fusion model")
    shd_w = model.w[model.embed_dim:]
    return int(np.sum(np.abs(shd_w) >= threshold))


def predict_cumulative(model: OrdinalModel, X) -> np.ndarray:
    return np.atleast_2d(forward(model, X).cumulative)


def log_likelihood_terms(model: OrdinalModel, X, categories) -> np.ndarray:
    """Per-row log-probability of the observed category (for diagnostics)."""
    probs = forward(model, X)
    cat = np.asarray(categories, dtype=int)
    sl = np.atleast_2d(probs.slices)
    return np.log(np.maximum(sl[np.arange(cat.size), cat - 1], PROB_FLOOR))
