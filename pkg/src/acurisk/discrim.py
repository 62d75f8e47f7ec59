"""Discrimination metrics (AUROC, AUPRC, cross-entropy) and percentile
bootstrap confidence intervals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

CLIP = 1e-12


class MetricUndefined(ValueError):
    """The metric has no value on this input (e.g. a single class)."""


@dataclass(frozen=True)
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray
    groups: np.ndarray | None = None

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float).ravel()
        y = np.asarray(self.labels).ravel().astype(np.int8)
        if s.size != y.size:
            raise ValueError("scores and labels differ in length")
        if not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be binary")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)
        if self.groups is not None:
            g = np.asarray(self.groups)
            if g.size != s.size:
                raise ValueError("groups length mismatch")
            object.__setattr__(self, "groups", g)

    def __len__(self):
        return self.scores.size

    def take(self, idx) -> "ScoredSet":
        g = None if self.groups is None else self.groups[idx]
        return ScoredSet(self.scores[idx], self.labels[idx], g)


def auroc(s: ScoredSet) -> float:
    """Mann-Whitney AUROC with midranks for ties."""
    y = s.labels
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefined("AUROC needs both classes")
    ranks = rankdata(s.scores)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(s: ScoredSet) -> float:
    """Average precision; tied scores enter the ranking as one block."""
    y = s.labels
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricUndefined("AUPRC needs at least one positive")
    order = np.argsort(-s.scores, kind="mergesort")
    sc = s.scores[order]
    yy = y[order]
    # last index of every block of equal scores
    ends = np.r_[np.flatnonzero(np.diff(sc) != 0), sc.size - 1]
    tp = np.cumsum(yy)[ends]
    fp = (ends + 1) - tp
    precision = tp / (tp + fp)
    d_recall = np.diff(np.r_[0, tp]) / n_pos
    return float(np.sum(precision * d_recall))


def cross_entropy(s: ScoredSet) -> float:
    p = np.clip(s.scores, CLIP, 1 - CLIP)
    y = s.labels
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


METRICS: dict[str, Callable[[ScoredSet], float]] = {
    "auroc": auroc,
    "auprc": auprc,
    "cross_entropy": cross_entropy,
}


@dataclass(frozen=True)
class MetricWithCi:
    point: float
    lo: float
    hi: float
    n_boot: int
    seed: int
    n_skipped: int = 0


def bootstrap_ci(s: ScoredSet, metric: Callable[[ScoredSet], float], n_boot: int = 1000,
                 seed: int = 0, level: float = 0.95) -> MetricWithCi:
    """Percentile bootstrap over rows.

    Resample ``b`` draws its indices from a generator seeded with
    ``(seed, b)``, so every resample is reproducible on its own. Resamples
    on which the metric is undefined are skipped; more than half skipped is
    an error.
    """
    if n_boot < 1:
        raise ValueError("n_boot must be >= 1")
    point = metric(s)
    n = len(s)
    values = []
    skipped = 0
    for b in range(n_boot):
        rng = np.random.default_rng([seed, b])
        idx = rng.integers(0, n, size=n)
        try:
            values.append(metric(s.take(idx)))
        except MetricUndefined:
            skipped += 1
    if skipped > n_boot / 2:
        raise MetricUndefined(f"metric undefined on {skipped}/{n_boot} resamples")
    alpha = (1 - level) / 2
    lo, hi = np.percentile(np.asarray(values), [100 * alpha, 100 * (1 - alpha)])
    return MetricWithCi(float(point), float(lo), float(hi), n_boot, seed, skipped)
