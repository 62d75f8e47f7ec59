"""Clinical-utility analytics: calibration, decision curves, risk tertiles,
Kaplan-Meier / log-rank, and subgroup ECDFs of risk percentiles."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

Z95 = 1.959963984540054


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

def wilson_interval(k: int, n: int, z: float = Z95) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


@dataclass
class CalibrationBin:
    mean_predicted: float
    observed_rate: float
    n: int
    ci_lo: float
    ci_hi: float


@dataclass
class CalibrationCurve:
    bins: list[CalibrationBin]
    edges: np.ndarray
    smooth_x: np.ndarray | None = None
    smooth_y: np.ndarray | None = None


def tricube_smoother(scores, labels, grid, bandwidth: float = 0.1) -> np.ndarray:
    """Local-constant regression of labels on scores with tricube weights.

    Grid points with no observation inside the bandwidth get NaN.
    """
    s = np.asarray(scores, float)
    y = np.asarray(labels, float)
    out = np.full(len(grid), np.nan)
    for i, g in enumerate(grid):
        u = np.abs(s - g) / bandwidth
        w = np.where(u < 1, (1 - u ** 3) ** 3, 0.0)
        tot = w.sum()
        if tot > 0:
            out[i] = float(w @ y / tot)
    return out


def calibration(scores, labels, n_bins: int = 10, smooth: bool = True,
                bandwidth: float = 0.1) -> CalibrationCurve:
    """Quantile-binned reliability table with Wilson 95% intervals.

    Bin edges are score quantiles; duplicate edges collapse, so heavily tied
    scores produce fewer occupied bins. The outer edges are 0 and 1.
    """
    s = np.asarray(scores, float)
    y = np.asarray(labels).astype(int)
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    if s.size < n_bins:
        raise ValueError(f"need at least n_bins={n_bins} observations, got {s.size}")
    inner = np.quantile(s, np.linspace(0, 1, n_bins + 1)[1:-1])
    edges = np.unique(np.r_[0.0, inner, 1.0])
    # right-closed bins: (e_{k-1}, e_k], first bin also holds 0
    idx = np.clip(np.searchsorted(edges, s, side="left") - 1, 0, edges.size - 2)
    bins = []
    for k in range(edges.size - 1):
        m = idx == k
        cnt = int(m.sum())
        if cnt == 0:
            continue
        pos = int(y[m].sum())
        lo, hi = wilson_interval(pos, cnt)
        bins.append(CalibrationBin(float(s[m].mean()), pos / cnt, cnt, lo, hi))
    curve = CalibrationCurve(bins, edges)
    if smooth:
        grid = np.linspace(0.005, 0.995, 100)
        curve.smooth_x = grid
        curve.smooth_y = tricube_smoother(s, y, grid, bandwidth)
    return curve


# ---------------------------------------------------------------------------
# Decision curves
# ---------------------------------------------------------------------------

DEFAULT_DCA_GRID = np.round(np.linspace(0.01, 0.99, 99), 2)


@dataclass
class DecisionCurve:
    thresholds: np.ndarray
    net_benefit_model: np.ndarray
    net_benefit_all: np.ndarray
    net_benefit_none: np.ndarray


def decision_curve(scores, labels, grid=None) -> DecisionCurve:
    """Net benefit TP/n - FP/n * t/(1-t), classifying score >= t as positive."""
    s = np.asarray(scores, float)
    y = np.asarray(labels).astype(int)
    t = DEFAULT_DCA_GRID if grid is None else np.asarray(grid, float)
    if np.any((t <= 0) | (t >= 1)):
        raise ValueError("thresholds must lie in (0, 1)")
    n = s.size
    prev = y.mean()
    odds = t / (1 - t)
    pos = s[None, :] >= t[:, None]
    tp = (pos & (y[None, :] == 1)).sum(axis=1)
    fp = (pos & (y[None, :] == 0)).sum(axis=1)
    nb_model = tp / n - fp / n * odds
    nb_all = prev - (1 - prev) * odds
    return DecisionCurve(t, nb_model, nb_all, np.zeros_like(t))


# ---------------------------------------------------------------------------
# Risk tertiles
# ---------------------------------------------------------------------------

def stratify_tertiles(scores) -> np.ndarray:
    """Assign "low" / "medium" / "high" at the 1/3 and 2/3 empirical
    percentiles (linear interpolation). Scores equal to a cut go to the
    lower-risk group."""
    s = np.asarray(scores, float)
    if s.size < 3:
        raise ValueError("need at least 3 scores")
    q1, q2 = np.percentile(s, [100 / 3, 200 / 3])
    groups = np.where(s <= q1, "low", np.where(s <= q2, "medium", "high")).astype(object)
    if q1 == q2 or np.unique(s).size < 3:
        warnings.warn("tied scores collapse the tertile groups", stacklevel=2)
    return groups


# ---------------------------------------------------------------------------
# Survival
# ---------------------------------------------------------------------------

@dataclass
class KmCurve:
    times: np.ndarray        # distinct observed times (events or censorings)
    survival: np.ndarray
    variance: np.ndarray     # Greenwood
    lo: np.ndarray
    hi: np.ndarray
    n_at_risk: np.ndarray
    n_events: np.ndarray
    label: str = ""

    def at(self, t: float) -> float:
        """S(t), right-continuous step function."""
        k = np.searchsorted(self.times, t, side="right") - 1
        return 1.0 if k < 0 else float(self.survival[k])


def kaplan_meier(times, events, label: str = "") -> KmCurve:
    """Product-limit estimator with Greenwood variance and a
    log(-log) 95% band."""
    t = np.asarray(times, float)
    e = np.asarray(events).astype(bool)
    if t.size == 0:
        raise ValueError("empty input")
    if np.any(t < 0):
        raise ValueError("times must be >= 0")
    uniq = np.unique(t)
    d = np.array([int(e[t == u].sum()) for u in uniq])
    c = np.array([int((t == u).sum()) for u in uniq])
    at_risk = t.size - np.r_[0, np.cumsum(c)[:-1]]
    factor = 1.0 - d / at_risk
    surv = np.cumprod(factor)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(at_risk > d, d / (at_risk * (at_risk - d)), 0.0)
    cum = np.cumsum(terms)
    var = surv ** 2 * cum
    lo = np.empty_like(surv)
    hi = np.empty_like(surv)
    for i, (sv, cv) in enumerate(zip(surv, cum)):
        if sv <= 0.0 or sv >= 1.0 or cv == 0.0:
            lo[i] = hi[i] = sv
            continue
        se = math.sqrt(cv) / abs(math.log(sv))
        lo[i] = sv ** math.exp(Z95 * se)
        hi[i] = sv ** math.exp(-Z95 * se)
    return KmCurve(uniq, surv, var, lo, hi, at_risk, d, label)


def _regularized_gamma_q(a: float, x: float) -> float:
    """Upper regularised incomplete gamma Q(a, x): power series for
    x < a + 1, Lentz continued fraction otherwise."""
    if x < 0 or a <= 0:
        raise ValueError("invalid arguments")
    if x == 0:
        return 1.0
    log_pref = -x + a * math.log(x) - math.lgamma(a)
    if x < a + 1:
        term = total = 1.0 / a
        ap = a
        for _ in range(10_000):
            ap += 1
            term *= x / ap
            total += term
            if abs(term) < abs(total) * 1e-16:
                break
        return max(0.0, 1.0 - total * math.exp(log_pref))
    tiny = 1e-300
    b = x + 1 - a
    c = 1 / tiny
    d = 1 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1 / d
        delta = d * c
        h *= delta
        if abs(delta - 1) < 1e-16:
            break
    return min(1.0, h * math.exp(log_pref))


def chi2_sf(x: float, df: int) -> float:
    """Upper tail of the chi-square distribution."""
    if x <= 0:
        return 1.0
    return _regularized_gamma_q(df / 2.0, x / 2.0)


def log_rank(groups: Sequence[tuple[Sequence[float], Sequence[bool]]]) -> tuple[float, float]:
    """k-sample log-rank test; returns (chi2, p) with k-1 degrees of freedom."""
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    t_all, e_all, g_all = [], [], []
    for g, (t, e) in enumerate(groups):
        t = np.asarray(t, float)
        e = np.asarray(e).astype(bool)
        if t.size == 0:
            raise ValueError(f"group {g} is empty")
        t_all.append(t)
        e_all.append(e)
        g_all.append(np.full(t.size, g))
    t = np.concatenate(t_all)
    e = np.concatenate(e_all)
    g = np.concatenate(g_all)
    k = len(groups)
    event_times = np.unique(t[e])
    O = np.zeros(k)
    E = np.zeros(k)
    V = np.zeros((k, k))
    for u in event_times:
        at_risk = np.array([np.sum((g == j) & (t >= u)) for j in range(k)], float)
        deaths = np.array([np.sum((g == j) & (t == u) & e) for j in range(k)], float)
        n_tot = at_risk.sum()
        d_tot = deaths.sum()
        if n_tot == 0:
            continue
        O += deaths
        E += d_tot * at_risk / n_tot
        if n_tot > 1:
            f = d_tot * (n_tot - d_tot) / (n_tot * n_tot * (n_tot - 1))
            V += f * (np.diag(at_risk * n_tot) - np.outer(at_risk, at_risk))
    if E.sum() == 0:
        return 0.0, 1.0
    diff = (O - E)[:-1]
    Vr = V[:-1, :-1]
    if np.allclose(diff, 0.0, atol=1e-12):
        return 0.0, 1.0
    chi2 = float(diff @ np.linalg.pinv(Vr) @ diff)
    chi2 = max(chi2, 0.0)
    return chi2, chi2_sf(chi2, k - 1)


def format_p(p: float) -> str:
    return "<0.001" if p < 0.001 else f"{p:.3f}"


# ---------------------------------------------------------------------------
# Subgroup ECDFs
# ---------------------------------------------------------------------------

@dataclass
class SubgroupEcdf:
    group: str
    percentiles: np.ndarray   # sorted
    ecdf: np.ndarray          # ECDF value at each percentile point
    n: int

    def at(self, x: float) -> float:
        return float(np.searchsorted(self.percentiles, x, side="right") / self.n)


def risk_percentiles(scores) -> np.ndarray:
    """Population percentile rank in [0, 1): (midrank - 1) / n."""
    s = np.asarray(scores, float)
    return (rankdata(s) - 1.0) / s.size


def subgroup_ecdf(scores, tags) -> list[SubgroupEcdf]:
    s = np.asarray(scores, float)
    tags = np.asarray(tags, dtype=object)
    if tags.size != s.size:
        raise ValueError("tags must cover every patient")
    pct = risk_percentiles(s)
    out = []
    for grp in sorted(set(tags.tolist()), key=str):
        m = tags == grp
        if not m.any():
            raise ValueError(f"empty group {grp!r}")
        x = np.sort(pct[m])
        n = x.size
        out.append(SubgroupEcdf(str(grp), x, np.arange(1, n + 1) / n, n))
    return out


def ks_distance_to_uniform(e: SubgroupEcdf) -> float:
    """Sup distance between a subgroup ECDF and the diagonal."""
    x = e.percentiles
    n = e.n
    upper = np.arange(1, n + 1) / n - x
    lower = x - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))
