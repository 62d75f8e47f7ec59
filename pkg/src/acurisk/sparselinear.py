"""L1-penalised logistic regression on named, source-tagged designs.

Objective (columns standardised with training statistics, intercept free)::

    (1/n) * sum_i logloss(y_i, b0 + x_i . b) + lam * ||b||_1

Solved by accelerated proximal gradient with backtracking and a monotone
restart (a step that would raise the objective is replaced by a plain
proximal-gradient step), inside a working-set loop that only optimises
columns that can be non-zero and re-checks the KKT conditions on the rest.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

SOURCES = ("shd", "language")
PROB_CLIP = 1e-12


class SchemaError(ValueError):
    pass


class ConvergenceWarning(UserWarning):
    pass


def soft_threshold(z, t):
    """sign(z) * max(|z| - t, 0); works on scalars and arrays."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("threshold must be >= 0")
    out = np.sign(z) * np.maximum(np.abs(z) - t, 0.0)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class Design:
    """Row-major design matrix with unique column names and source tags."""

    X: sp.csr_matrix
    names: list[str]
    sources: list[str]
    row_ids: list[str] | None = None

    def __post_init__(self):
        if not sp.issparse(self.X):
            self.X = sp.csr_matrix(np.asarray(self.X, dtype=float))
        self.X = self.X.tocsr().astype(float)
        if len(set(self.names)) != len(self.names):
            raise SchemaError("column names must be unique")
        if len(self.names) != self.X.shape[1] or len(self.sources) != len(self.names):
            raise SchemaError("names/sources do not match the number of columns")
        bad = set(self.sources) - set(SOURCES)
        if bad:
            raise SchemaError(f"unknown sources {sorted(bad)}")
        if not np.all(np.isfinite(self.X.data)):
            raise ValueError("design contains NaN or infinite values")

    @property
    def shape(self):
        return self.X.shape

    def rows(self, idx) -> "Design":
        idx = np.asarray(idx)
        ids = None if self.row_ids is None else [self.row_ids[i] for i in idx]
        return Design(self.X[idx], list(self.names), list(self.sources), ids)

    def columns(self, names: Sequence[str]) -> "Design":
        pos = {n: j for j, n in enumerate(self.names)}
        missing = [n for n in names if n not in pos]
        if missing:
            raise SchemaError(f"design lacks columns {missing[:5]}")
        idx = [pos[n] for n in names]
        X = self.X[:, idx].tocsr()
        X.sort_indices()
        return Design(X, list(names), [self.sources[j] for j in idx], self.row_ids)

    def hstack(self, other: "Design") -> "Design":
        if self.X.shape[0] != other.X.shape[0]:
            raise SchemaError("row count mismatch")
        return Design(sp.hstack([self.X, other.X], format="csr"), self.names + other.names,
                      self.sources + other.sources, self.row_ids)

    def schema_hash(self) -> str:
        blob = "\n".join(f"{n}\t{s}" for n, s in zip(self.names, self.sources))
        return hashlib.sha1(blob.encode()).hexdigest()

    def standardisation(self) -> tuple[np.ndarray, np.ndarray]:
        """Column means and population std (0 for constant columns)."""
        n = self.X.shape[0]
        mean = np.asarray(self.X.mean(axis=0)).ravel()
        sq = np.asarray(self.X.multiply(self.X).sum(axis=0)).ravel() / n
        var = np.maximum(sq - mean ** 2, 0.0)
        std = np.sqrt(var)
        std[std <= 1e-12 * np.maximum(1.0, np.abs(mean))] = 0.0
        return mean, std


def _check_labels(y) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    if y.min() == y.max():
        raise ValueError("labels contain a single class")
    return y


def _logloss_from_eta(eta: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta))


class _Standardised:
    """Implicitly standardised view of a sparse matrix: (X - mean) / std,
    with zero-variance columns mapped to zero."""

    def __init__(self, X: sp.csr_matrix, mean: np.ndarray, std: np.ndarray):
        self.X = X.tocsc()
        self.n = X.shape[0]
        self.mean = mean
        self.inv = np.where(std > 0, 1.0 / np.where(std > 0, std, 1.0), 0.0)
        self.free = std > 0

    def sub(self, cols: np.ndarray) -> "_Sub":
        return _Sub(self.X[:, cols].tocsr(), self.mean[cols], self.inv[cols])

    def full_grad(self, r: np.ndarray) -> np.ndarray:
        """(1/n) Xs^T r for every column."""
        g = (self.X.T @ r - self.mean * r.sum()) * self.inv
        return g / self.n


class _Sub:
    def __init__(self, X, mean, inv):
        self.X = X
        self.XT = X.T.tocsr()
        self.mean = mean
        self.inv = inv

    def lin(self, b: np.ndarray) -> np.ndarray:
        c = b * self.inv
        return self.X @ c - float(self.mean @ c)

    def grad(self, r: np.ndarray) -> np.ndarray:
        return (self.XT @ r - self.mean * r.sum()) * self.inv


@dataclass
class _SolveResult:
    b0: float
    b: np.ndarray
    n_iter: int
    converged: bool
    history: list


def _solve(sub: _Sub | None, y: np.ndarray, lam: float, b0: float, b: np.ndarray,
           tol: float, max_iter: int, record: bool = False, L0: float = 0.25) -> _SolveResult:
    n = y.size
    ybar = y.mean()
    if sub is None or b.size == 0:
        b0 = math.log(ybar / (1 - ybar))
        return _SolveResult(b0, b, 0, True, [])

    def smooth(b0_, b_):
        eta = b0_ + sub.lin(b_)
        return _logloss_from_eta(eta, y), eta

    def gradient(eta):
        r = expit(eta) - y
        return float(r.mean()), sub.grad(r) / n

    def prox_step(b0_, b_, g0, gb, L):
        return b0_ - g0 / L, soft_threshold(b_ - gb / L, lam / L)

    L = L0
    f_x, eta_x = smooth(b0, b)
    F_x = f_x + lam * np.abs(b).sum()
    history = [F_x] if record else []
    # momentum point
    yb0, yb = b0, b.copy()
    f_y, eta_y = f_x, eta_x
    prev_b0, prev_b = b0, b.copy()
    t = 1.0
    at_x = True
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        g0, gb = gradient(eta_y)
        while True:
            z0, zb = prox_step(yb0, yb, g0, gb, L)
            f_z, eta_z = smooth(z0, zb)
            d0, db = z0 - yb0, zb - yb
            quad = f_y + g0 * d0 + float(gb @ db) + 0.5 * L * (d0 * d0 + float(db @ db))
            if f_z <= quad + 1e-13 * max(1.0, abs(f_y)):
                break
            L *= 2.0
        F_z = f_z + lam * np.abs(zb).sum()
        if F_z > F_x:
            if at_x:
                # no representable descent left from the iterate itself
                converged = max(abs(z0 - b0), float(np.max(np.abs(zb - b)))) < tol
                break
            # restart from the last accepted iterate with a plain step
            at_x = True
            t = 1.0
            yb0, yb, f_y, eta_y = b0, b.copy(), f_x, eta_x
            continue
        prev_b0, prev_b = b0, b
        b0, b, f_x, eta_x, F_x = z0, zb, f_z, eta_z, F_z
        if record:
            history.append(F_x)
        change = max(abs(b0 - prev_b0), float(np.max(np.abs(b - prev_b))) if b.size else 0.0)
        if change < tol:
            # confirm with a plain proximal-gradient step from the iterate
            g0x, gbx = gradient(eta_x)
            while True:
                c0, cb = prox_step(b0, b, g0x, gbx, L)
                f_c, eta_c = smooth(c0, cb)
                d0, db = c0 - b0, cb - b
                quad = f_x + g0x * d0 + float(gbx @ db) + 0.5 * L * (d0 * d0 + float(db @ db))
                if f_c <= quad + 1e-13 * max(1.0, abs(f_x)):
                    break
                L *= 2.0
            step = max(abs(c0 - b0), float(np.max(np.abs(cb - b))))
            F_c = f_c + lam * np.abs(cb).sum()
            if F_c <= F_x:
                b0, b, f_x, eta_x, F_x = c0, cb, f_c, eta_c, F_c
                if record:
                    history.append(F_x)
            if step < tol:
                converged = True
                break
            t = 1.0
            at_x = True
            yb0, yb, f_y, eta_y = b0, b.copy(), f_x, eta_x
            continue
        at_x = False
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        mom = (t - 1.0) / t_next
        yb0 = b0 + mom * (b0 - prev_b0)
        yb = b + mom * (b - prev_b)
        t = t_next
        f_y, eta_y = smooth(yb0, yb)
    return _SolveResult(b0, b, it, converged, history)


@dataclass
class LassoModel:
    intercept: float
    coef: dict[str, float]
    intercept_std: float
    coef_std: dict[str, float]
    lam: float
    c_equiv: float
    horizon: int | None
    feature_names: list[str]
    sources: dict[str, str]
    means: dict[str, float]
    stds: dict[str, float]
    n_train: int
    converged: bool = True
    diverging: bool = False
    n_iter: int = 0
    schema_hash: str = ""
    history: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "intercept_std": self.intercept_std,
            "coef": {k: self.coef[k] for k in sorted(self.coef)},
            "coef_std": {k: self.coef_std[k] for k in sorted(self.coef_std)},
            "lambda": self.lam,
            "c_equiv": self.c_equiv,
            "horizon": self.horizon,
            "feature_names": self.feature_names,
            "sources": [self.sources[n] for n in self.feature_names],
            "means": {k: self.means[k] for k in sorted(self.coef)},
            "stds": {k: self.stds[k] for k in sorted(self.coef)},
            "n_train": self.n_train,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "schema_hash": self.schema_hash,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "LassoModel":
        d = json.loads(text)
        names = list(d["feature_names"])
        return cls(
            intercept=d["intercept"], coef=dict(d["coef"]), intercept_std=d["intercept_std"],
            coef_std=dict(d["coef_std"]), lam=d["lambda"], c_equiv=d["c_equiv"],
            horizon=d["horizon"], feature_names=names,
            sources=dict(zip(names, d["sources"])), means=dict(d["means"]),
            stds=dict(d["stds"]), n_train=d["n_train"], converged=d["converged"],
            n_iter=d["n_iter"], schema_hash=d["schema_hash"],
        )


class _Fitter:
    """Shared state for fitting many lambdas on the same rows."""

    def __init__(self, design: Design, y):
        self.design = design
        self.y = _check_labels(y)
        if design.X.shape[0] != self.y.size:
            raise SchemaError("label count does not match design rows")
        if design.X.shape[0] < 2:
            raise ValueError("need at least 2 rows")
        self.mean, self.std = design.standardisation()
        self.S = _Standardised(design.X, self.mean, self.std)
        ybar = self.y.mean()
        self.null_b0 = math.log(ybar / (1 - ybar))
        self.null_grad = self.S.full_grad(expit(np.full(self.y.size, self.null_b0)) - self.y)

    @property
    def lambda_max(self) -> float:
        return float(np.max(np.abs(self.null_grad))) if self.null_grad.size else 0.0

    def grad_at(self, b0: float, b: np.ndarray) -> np.ndarray:
        nz = np.flatnonzero(b)
        eta = np.full(self.y.size, b0)
        if nz.size:
            eta = eta + self.S.sub(nz).lin(b[nz])
        return self.S.full_grad(expit(eta) - self.y)

    def solve(self, lam: float, b0: float | None = None, b: np.ndarray | None = None,
              lam_prev: float | None = None, tol: float = 1e-7, max_iter: int = 10_000,
              record: bool = False, working_set: bool = True):
        p = self.design.X.shape[1]
        free = self.S.free
        if b is None:
            b0, b = self.null_b0, np.zeros(p)
            grad = self.null_grad
        else:
            b = b.copy()
            grad = self.grad_at(b0, b)
        if not working_set:
            W = np.flatnonzero(free)
        else:
            thresh = lam if lam_prev is None else max(2 * lam - lam_prev, 0.0)
            W = np.flatnonzero(free & ((np.abs(grad) > thresh) | (b != 0)))
        total_iter = 0
        history: list = []
        converged = True
        while True:
            sub = self.S.sub(W) if W.size else None
            res = _solve(sub, self.y, lam, b0, b[W], tol, max_iter, record)
            total_iter += res.n_iter
            history.extend(res.history)
            converged = res.converged
            b = np.zeros(p)
            b[W] = res.b
            b0 = res.b0
            if not working_set or W.size == free.sum():
                break
            grad = self.grad_at(b0, b)
            outside = np.ones(p, dtype=bool)
            outside[W] = False
            viol = np.flatnonzero(outside & free & (np.abs(grad) > lam + 1e-9))
            if viol.size == 0 or not converged:
                break
            W = np.union1d(W, viol)
        return b0, b, total_iter, converged, history

    def model(self, lam: float, b0: float, b: np.ndarray, horizon, n_iter, converged,
              history=()) -> LassoModel:
        names = self.design.names
        nz = np.flatnonzero(b)
        coef_std = {names[j]: float(b[j]) for j in nz}
        coef = {names[j]: float(b[j] / self.std[j]) for j in nz}
        intercept = float(b0 - sum(b[j] * self.mean[j] / self.std[j] for j in nz))
        n = self.y.size
        diverging = (not converged) and lam == 0.0 and bool(nz.size) and float(np.max(np.abs(b))) > 5.0
        if not converged:
            warnings.warn(f"lasso did not converge at lambda={lam:g} after {n_iter} iterations",
                          ConvergenceWarning, stacklevel=3)
        return LassoModel(
            intercept=intercept, coef=coef, intercept_std=float(b0), coef_std=coef_std,
            lam=float(lam), c_equiv=(1.0 / (lam * n)) if lam > 0 else math.inf,
            horizon=horizon, feature_names=list(names),
            sources=dict(zip(names, self.design.sources)),
            means={names[j]: float(self.mean[j]) for j in range(len(names))},
            stds={names[j]: float(self.std[j]) for j in range(len(names))},
            n_train=n, converged=converged, diverging=diverging, n_iter=n_iter,
            schema_hash=self.design.schema_hash(), history=list(history),
        )


def lambda_max(design: Design, y) -> float:
    """Smallest penalty for which the all-zero coefficient vector is optimal."""
    return _Fitter(design, y).lambda_max


def fit_lasso(design: Design, y, lam: float, horizon: int | None = None, *,
              tol: float = 1e-7, max_iter: int = 10_000, record_history: bool = False,
              working_set: bool = True) -> LassoModel:
    """Fit one L1-penalised logistic regression.

    ``record_history`` keeps the objective value after every accepted
    iteration (used to check monotone descent).
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    f = _Fitter(design, y)
    if lam >= f.lambda_max:
        p = design.X.shape[1]
        return f.model(lam, f.null_b0, np.zeros(p), horizon, 0, True)
    b0, b, it, conv, hist = f.solve(lam, tol=tol, max_iter=max_iter, record=record_history,
                                    working_set=working_set)
    return f.model(lam, b0, b, horizon, it, conv, hist)


def kkt_violation(design: Design, y, model: LassoModel) -> float:
    """Largest KKT residual on the standardised scale.

    Non-zero j: |g_j + lam*sign(b_j)|; zero j: max(|g_j| - lam, 0), where g
    is the gradient of the mean logistic loss. Also includes |g_0| for the
    intercept.
    """
    f = _Fitter(design, y)
    names = design.names
    b = np.array([model.coef_std.get(n, 0.0) for n in names])
    nz = np.flatnonzero(b)
    eta = np.full(f.y.size, model.intercept_std)
    if nz.size:
        eta = eta + f.S.sub(nz).lin(b[nz])
    r = expit(eta) - f.y
    g = f.S.full_grad(r)
    lam = model.lam
    res = np.where(b != 0, np.abs(g + lam * np.sign(b)), np.maximum(np.abs(g) - lam, 0.0))
    res = res[f.S.free] if res.size else res
    return float(max(np.max(res, initial=0.0), abs(r.mean())))


def lambda_grid(lmax: float, n: int = 50, ratio: float = 1e-3) -> list[float]:
    return list(np.geomspace(lmax, lmax * ratio, n))


def _stratified_folds(y: np.ndarray, n_folds: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    folds = np.empty(y.size, dtype=np.int64)
    offset = 0
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(idx.size)]
        folds[idx] = (np.arange(idx.size) + offset) % n_folds
        offset += idx.size
    return folds


def _clipped_logloss(y: np.ndarray, p: np.ndarray) -> float:
    p = np.clip(p, PROB_CLIP, 1 - PROB_CLIP)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


@dataclass
class CvResult:
    grid: list[float]
    fold_loss: np.ndarray  # (n_folds, n_grid)
    chosen_lambda: float
    rule: str
    folds: np.ndarray
    flagged_folds: list[int]
    warnings: list[str]

    @property
    def mean_loss(self) -> np.ndarray:
        return self.fold_loss.mean(axis=0)

    def to_csv(self) -> str:
        lines = ["lambda,fold,val_logloss"]
        for k in range(self.fold_loss.shape[0]):
            for j, lam in enumerate(self.grid):
                lines.append(f"{lam!r},{k},{self.fold_loss[k, j]!r}")
        return "\n".join(lines) + "\n"


class _FoldPath:
    """Warm-started path on one training fold, advanced one lambda at a time."""

    def __init__(self, design: Design, y: np.ndarray, train_idx, val_idx, tol, max_iter):
        self.yval = y[val_idx]
        self.Xval = design.X[val_idx]
        ytr = y[train_idx]
        self.tol, self.max_iter = tol, max_iter
        self.constant = None
        self.lam_prev = None
        if ytr.min() == ytr.max():
            # degenerate training fold: constant prediction
            self.constant = float(np.clip(ytr.mean(), PROB_CLIP, 1 - PROB_CLIP))
            return
        self.f = _Fitter(design.rows(train_idx), ytr)
        self.b0, self.b = self.f.null_b0, np.zeros(design.X.shape[1])

    def step(self, lam: float) -> float:
        if self.constant is not None:
            return _clipped_logloss(self.yval, np.full(self.yval.size, self.constant))
        f = self.f
        if lam >= f.lambda_max and not self.b.any():
            self.b0, self.b = f.null_b0, np.zeros_like(self.b)
        else:
            self.b0, self.b, _, _, _ = f.solve(lam, self.b0, self.b, lam_prev=self.lam_prev,
                                               tol=self.tol, max_iter=self.max_iter)
        self.lam_prev = lam
        c = self.b * f.S.inv
        eta = self.b0 + self.Xval @ c - float(f.mean @ c)
        return _clipped_logloss(self.yval, expit(eta))


def cv_grid_search(design: Design, y, grid: Sequence[float] | None = None, *,
                   n_folds: int = 10, seed: int = 0, n_grid: int = 50,
                   tol: float = 1e-7, max_iter: int = 10_000,
                   patience: int | None = None) -> CvResult:
    """Stratified k-fold search; picks the lambda minimising mean validation log-loss.

    All folds walk the descending grid together. With ``patience`` set, the
    walk stops once the mean loss has failed to improve on its minimum for
    that many consecutive grid points; the unvisited tail is dropped from the
    result. ``patience=None`` evaluates the whole grid.
    """
    y = _check_labels(y)
    notes: list[str] = []
    if grid is None:
        grid = lambda_grid(lambda_max(design, y), n_grid)
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("empty lambda grid")
    if any(g < 0 for g in grid):
        raise ValueError("lambda grid must be non-negative")
    if patience is not None and patience < 1:
        raise ValueError("patience must be >= 1")
    uniq = sorted(set(grid), reverse=True)
    if len(uniq) != len(grid):
        msg = f"removed {len(grid) - len(uniq)} duplicate lambda values"
        warnings.warn(msg, stacklevel=2)
        notes.append(msg)
    grid = uniq
    folds = _stratified_folds(y, n_folds, seed)
    flagged = []
    for k in range(n_folds):
        val = y[folds == k]
        if val.size and val.min() == val.max():
            flagged.append(k)
    if flagged:
        msg = f"folds {flagged} hold one class; their losses use clipped probabilities"
        warnings.warn(msg, stacklevel=2)
        notes.append(msg)

    paths = [_FoldPath(design, y, np.flatnonzero(folds != k), np.flatnonzero(folds == k),
                       tol, max_iter) for k in range(n_folds)]
    columns = []
    best, since_best = math.inf, 0
    for lam in grid:
        col = [p.step(lam) for p in paths]
        columns.append(col)
        m = float(np.mean(col))
        if m < best:
            best, since_best = m, 0
        else:
            since_best += 1
        if patience is not None and since_best >= patience:
            break
    if len(columns) < len(grid):
        notes.append(f"path stopped after {len(columns)} of {len(grid)} lambda values")
        grid = grid[:len(columns)]
    fold_loss = np.array(columns).T
    mean = fold_loss.mean(axis=0)
    chosen = grid[int(np.argmin(mean))]
    return CvResult(grid, fold_loss, chosen, "min", folds, flagged, notes)


def fit_path_to(design: Design, y, lam: float, grid: Sequence[float], horizon=None,
                tol: float = 1e-7, max_iter: int = 10_000) -> LassoModel:
    """Fit at ``lam`` by walking the (descending) grid with warm starts."""
    f = _Fitter(design, y)
    p = design.X.shape[1]
    b0, b = f.null_b0, np.zeros(p)
    lam_prev = None
    it_total, conv = 0, True
    steps = [g for g in sorted(set(grid), reverse=True) if g > lam] + [lam]
    for g in steps:
        if g >= f.lambda_max and not b.any():
            b0, b = f.null_b0, np.zeros(p)
        else:
            b0, b, it, conv, _ = f.solve(g, b0, b, lam_prev=lam_prev, tol=tol, max_iter=max_iter)
            it_total += it
        lam_prev = g
    return f.model(lam, b0, b, horizon, it_total, conv)


def predict_proba(model: LassoModel, row: Mapping[str, float]) -> float:
    """Probability for one row given as a name -> value mapping."""
    unknown = set(row) - set(model.sources)
    if unknown:
        raise SchemaError(f"row has features outside the model schema: {sorted(unknown)[:5]}")
    missing = [n for n in model.coef if n not in row]
    if missing:
        raise SchemaError(f"row lacks model features {missing[:5]}")
    eta = model.intercept
    for name in sorted(model.coef):
        eta += model.coef[name] * float(row[name])
    return float(expit(eta))


def predict_proba_design(model: LassoModel, design: Design) -> np.ndarray:
    """Probabilities for every row; columns are matched by name."""
    names = sorted(model.coef)
    if not names:
        return expit(np.full(design.X.shape[0], model.intercept))
    sub = design.columns(names)
    for n, s in zip(sub.names, sub.sources):
        if model.sources.get(n) != s:
            raise SchemaError(f"source tag mismatch for {n!r}")
    c = np.array([model.coef[n] for n in names])
    return expit(model.intercept + sub.X @ c)


def count_shd_used(model: LassoModel) -> int | None:
    """Non-zero SHD coefficients; ``None`` when the design has no SHD columns."""
    if not any(s == "shd" for s in model.sources.values()):
        return None
    return sum(1 for n, v in model.coef_std.items() if v != 0.0 and model.sources[n] == "shd")


def top_coefficients(model: LassoModel, k: int = 10) -> tuple[list[tuple[str, float]], list[tuple[str, float]]]:
    """k largest and k smallest non-zero standardised coefficients."""
    items = [(n, v) for n, v in model.coef_std.items() if v != 0.0]
    high = sorted(items, key=lambda kv: (-kv[1], kv[0]))[:k]
    low = sorted(items, key=lambda kv: (kv[1], kv[0]))[:k]
    return high, low
