"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import csv
import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.special import expit
from scipy.stats import norm

from acurisk import clinutil, discrim
from acurisk.cohort import DEFAULT_VOCAB_HIGH
from acurisk.notetext import TERM_PREFIX, lemmatize
from acurisk.ordinalnet import OrdinalModel, forward, loss_and_grad
from acurisk.pipeline import RunConfig, run_pipeline
from acurisk.sparselinear import Design, fit_lasso, lambda_max

CURVE_TABLES = ("calibration.csv", "dca.csv", "km.csv", "ecdf.csv", "logrank.csv")


# -- 1: AUROC against pair counting ------------------------------------------------

def brute_auroc(s, y):
    pos = s[y == 1]
    neg = s[y == 0]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p, q in itertools.product(pos, neg))
    return wins / (pos.size * neg.size)


def test_criterion_1_auroc_oracle(acceptance):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(200):
        n = int(rng.integers(2, 201))
        s = rng.integers(0, max(2, n // 4), n).astype(float) if i % 2 else rng.random(n)
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        worst = max(worst, abs(discrim.auroc(discrim.ScoredSet(s, y)) - brute_auroc(s, y)))
    dt = time.perf_counter() - t0
    acceptance(1, worst <= 1e-12 and dt < 10,
               f"AUROC vs brute force on 200 instances: max diff {worst:.1e}, {dt:.1f}s")


# -- 2: LASSO optimality -----------------------------------------------------------

def kkt_residual(X, y, model):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    free = sd > 1e-12
    Z = np.where(free, (X - mu) / np.where(free, sd, 1), 0.0)
    b = np.array([model.coef_std.get(f"x{j}", 0.0) for j in range(X.shape[1])])
    r = expit(model.intercept_std + Z @ b) - y
    g = Z.T @ r / y.size
    res = np.where(b != 0, np.abs(g + model.lam * np.sign(b)),
                   np.maximum(np.abs(g) - model.lam, 0.0))
    return max(float(res[free].max(initial=0.0)), abs(r.mean()))


def test_criterion_2_lasso_kkt(acceptance):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = 0.0
    nonzero_above = 0
    for _ in range(50):
        n, p = 200, 50
        X = rng.standard_normal((n, p)) * (rng.random((n, p)) < 0.4)
        beta = np.zeros(p)
        beta[:8] = rng.standard_normal(8) * 1.5
        y = (rng.random(n) < expit(X @ beta)).astype(int)
        y[:2] = (0, 1)
        d = Design(X, [f"x{j}" for j in range(p)], ["shd"] * p)
        lmax = lambda_max(d, y)
        m = fit_lasso(d, y, lmax * 10 ** rng.uniform(-2.5, -0.05))
        worst = max(worst, kkt_residual(X, y, m))
        for scale in (1.0, 1.7):
            above = fit_lasso(d, y, lmax * scale)
            nonzero_above += sum(1 for v in above.coef_std.values() if v != 0.0)
    dt = time.perf_counter() - t0
    acceptance(2, worst <= 1e-6 and nonzero_above == 0 and dt < 60,
               f"50 problems: max KKT residual {worst:.1e}, nonzero above lambda_max "
               f"{nonzero_above}, {dt:.1f}s")


# -- 3: ordinal structure ----------------------------------------------------------

def test_criterion_3_ordinal_invariants(acceptance):
    rng = np.random.default_rng(3)
    bad = 0
    for i in range(10_000):
        d = int(rng.integers(1, 20))
        scale = 10.0 ** rng.uniform(-2, 2.5)
        raw = np.r_[rng.normal(0, scale), rng.uniform(-12, 4, 2)]
        m = OrdinalModel(rng.normal(0, scale, d), raw)
        p = forward(m, rng.normal(0, scale, d))
        ok = (abs(p.slices.sum() - 1.0) <= 1e-9 and np.all(p.slices >= 0)
              and np.all(np.diff(p.cumulative) >= 0))
        bad += not ok
    acceptance(3, bad == 0, f"10,000 random draws: {bad} violations")


# -- 4: gradient check -------------------------------------------------------------

def test_criterion_4_gradient_check(acceptance):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(20):
        n, d = int(rng.integers(10, 60)), int(rng.integers(1, 10))
        X = rng.standard_normal((n, d))
        cat = rng.integers(1, 5, n)
        cat[:4] = (1, 2, 3, 4)
        w = rng.standard_normal(d) * 0.5
        r = np.r_[rng.normal(-0.5, 0.5), rng.normal(0, 0.5, 2)]
        _, gw, gr = loss_and_grad(w, r, X, cat)
        h = 1e-5
        num = []
        for v, j in [(w, j) for j in range(d)] + [(r, j) for j in range(3)]:
            old = v[j]
            v[j] = old + h
            fp = loss_and_grad(w, r, X, cat)[0]
            v[j] = old - h
            fm = loss_and_grad(w, r, X, cat)[0]
            v[j] = old
            num.append((fp - fm) / (2 * h))
        ana = np.r_[gw, gr]
        num = np.array(num)
        rel = np.abs(ana - num) / np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-8)
        worst = max(worst, float(rel.max()))
    acceptance(4, worst < 1e-5, f"20 configurations: max relative error {worst:.1e}")


# -- 5: survival oracles -----------------------------------------------------------

def test_criterion_5_survival(acceptance):
    km = clinutil.kaplan_meier([2, 4, 4, 6], [1, 1, 1, 0])
    km_ok = km.at(2) == 3 / 4 and km.at(4) == 3 / 4 * (1 / 3) and km.at(6) == km.at(4)
    none_ok = np.all(clinutil.kaplan_meier([1, 2, 3], [0, 0, 0]).survival == 1.0)
    t = np.array([3.0, 1.0, 7.0, 5.0, 2.0])
    u = clinutil.kaplan_meier(t, np.ones(5))
    # product of ratios vs one ratio: equal up to rounding
    ecdf_ok = all(abs(u.at(x) - (1 - np.mean(t <= x))) <= 1e-12 for x in t)
    g = ([1, 3, 5, 7, 9], [1, 0, 1, 1, 0])
    chi2, p_same = clinutil.log_rank([g, g])
    p = clinutil.chi2_sf(3.841, 1)
    ok = km_ok and none_ok and ecdf_ok and chi2 == 0.0 and p_same == 1.0 and abs(p - 0.05) <= 1e-3
    acceptance(5, ok, f"KM hand fixtures exact={km_ok and none_ok}, uncensored = 1-ECDF={ecdf_ok}, "
                      f"identical-group chi2={chi2}, p(3.841, 1)={p:.4f}")


# -- 6: decision-curve identities ----------------------------------------------------

def test_criterion_6_dca_identities(acceptance):
    rng = np.random.default_rng(6)
    worst = 0.0
    none_zero = True
    for _ in range(20):
        n = int(rng.integers(20, 500))
        s = rng.random(n)
        y = (rng.random(n) < rng.uniform(0.05, 0.6)).astype(int)
        dc = clinutil.decision_curve(s, y, np.r_[1e-12, clinutil.DEFAULT_DCA_GRID])
        none_zero &= bool(np.all(dc.net_benefit_none == 0.0))
        prev = y.mean()
        worst = max(worst, abs(dc.net_benefit_model[0] - prev), abs(dc.net_benefit_all[0] - prev))
    acceptance(6, none_zero and worst <= 1e-9,
               f"20 scored sets: treat-none identically 0={none_zero}, "
               f"max |NB(t->0) - prevalence| {worst:.1e}")


# -- 7: bootstrap ------------------------------------------------------------------

def test_criterion_7_bootstrap(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    s = discrim.ScoredSet(rng.random(300), rng.integers(0, 2, 300))
    a = discrim.bootstrap_ci(s, discrim.auroc, n_boot=500, seed=11)
    b = discrim.bootstrap_ci(s, discrim.auroc, n_boot=500, seed=11)
    identical = repr((a.lo, a.hi)) == repr((b.lo, b.hi))
    mu = 1.0
    truth = norm.cdf(mu / math.sqrt(2))
    covered = 0
    for sim in range(100):
        r = np.random.default_rng([7, sim])
        y = (r.random(500) < 0.3).astype(int)
        x = r.standard_normal(500) + mu * y
        ci = discrim.bootstrap_ci(discrim.ScoredSet(x, y), discrim.auroc, n_boot=1000, seed=sim)
        covered += ci.lo <= truth <= ci.hi
    dt = time.perf_counter() - t0
    acceptance(7, identical and covered >= 88 and dt < 300,
               f"byte-identical={identical}, coverage {covered}/100 of AUROC {truth:.4f}, {dt:.1f}s")


# -- 8 and 9: end-to-end -----------------------------------------------------------

@pytest.fixture(scope="module")
def full_runs(tmp_path_factory):
    out = []
    for name in ("first", "second"):
        root = tmp_path_factory.mktemp(name)
        cfg = RunConfig.from_dict({
            "cohort_path": str(root / "data" / "cohort.csv"),
            "notes_path": str(root / "data" / "notes.jsonl"),
            "output_dir": str(root / "out"),
        })
        t0 = time.perf_counter()
        run_pipeline(cfg)
        out.append((root / "out", time.perf_counter() - t0))
    return out


def rows(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_criterion_8_planted_signal(full_runs, acceptance):
    out, seconds = full_runs[0]
    auroc = {(r["model"], r["horizon"]): float(r["point"])
             for r in rows(out / "metrics.csv") if r["metric"] == "auroc"}
    lang = auroc[("language_lasso", "180")]
    fusion = auroc[("fusion_lasso", "180")]
    top = {r["feature"].removeprefix(TERM_PREFIX) for r in rows(out / "top_coefficients.csv")
           if r["model"] == "language_lasso" and r["horizon"] == "180"
           and r["direction"] == "positive" and int(r["rank"]) <= 20}
    planted = {lemmatize(w) for w in DEFAULT_VOCAB_HIGH}
    hits = len(planted & top)
    logrank = rows(out / "logrank.csv")
    p_max = max(float(r["p"]) for r in logrank)
    ok = lang >= 0.70 and hits >= 8 and p_max < 0.001 and fusion >= lang - 0.01 and seconds < 600
    acceptance(8, ok, f"language AUROC@180 {lang:.4f}, planted words in top 20 {hits}/10, "
                      f"max tertile log-rank p {p_max:.1e} over {len(logrank)} tests, "
                      f"fusion AUROC@180 {fusion:.4f}, run {seconds:.0f}s")


def test_criterion_9_determinism(full_runs, acceptance):
    (a, _), (b, _) = full_runs
    differing = [n for n in ("metrics.csv",) + CURVE_TABLES
                 if (a / n).read_bytes() != (b / n).read_bytes()]
    acceptance(9, not differing,
               f"two full runs: metrics.csv and {len(CURVE_TABLES)} curve tables identical"
               if not differing else f"differing files: {differing}")
