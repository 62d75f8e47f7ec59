"""End-to-end orchestration: cohort -> features -> models -> evaluation -> report.

Every stage reads its prerequisites from the output directory and writes its
artefacts back there, so any stage can be re-run on its own. All randomness
comes from the named seeds in :class:`RunConfig`.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import clinutil, cohort, discrim, notetext, ordinalnet, sparselinear
from .cohort import HORIZONS, CohortRecord, SyntheticConfig
from .svg import line_chart

MODELS = ("tabular_lasso", "language_lasso", "fusion_lasso", "language_ordinal", "fusion_ordinal")
LASSO_MODELS = ("tabular_lasso", "language_lasso", "fusion_lasso")
ORDINAL_MODELS = ("language_ordinal", "fusion_ordinal")
FUSION_MODELS = ("fusion_lasso", "fusion_ordinal")
METRIC_NAMES = ("auroc", "auprc", "cross_entropy")
FAIRNESS_ATTRIBUTES = ("race", "insurance", "cancer_stage", "sex", "ethnicity", "cancer_type")
CURVE_HEADER = ("model", "horizon", "series", "x", "y", "lo", "hi")
SEED_NAMES = ("fold", "bootstrap", "generator", "encoder")

# stage -> files it produces (relative to the output dir)
PRODUCERS = {
    "prep": ("vocab.json", "features_lang.csv"),
    "train": ("predictions.csv", "top_coefficients.csv"),
    "eval": ("metrics.csv", "calibration.csv"),
    "dca": ("dca.csv",),
    "km": ("km.csv", "logrank.csv"),
    "fairness": ("ecdf.csv",),
}
FILE_PRODUCER = {f: stage for stage, files in PRODUCERS.items() for f in files}
FILE_PRODUCER.update({"shd_used.csv": "train", "calibration.csv": "eval", "report.md": "report"})


class ConfigError(ValueError):
    """Invalid configuration or inputs, detected before any compute."""


class MissingPrerequisite(ConfigError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException, rerun: str):
        super().__init__(f"stage '{stage}' failed: {cause}\n  re-run with: {rerun}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class Seeds:
    fold: int = 0
    bootstrap: int = 0
    generator: int = 7
    encoder: int = 0


@dataclass
class LassoSettings:
    n_grid: int = 50
    grid_ratio: float = 1e-3
    n_folds: int = 10
    cv_patience: int | None = 10
    tol: float = 1e-7
    max_iter: int = 10_000
    top_k: int = 20


@dataclass
class OrdinalSettings:
    lr: float = 0.5
    max_epochs: int = 5000
    patience: int = 50
    val_fraction: float = 0.2
    used_threshold: float = 1e-3


@dataclass
class RunConfig:
    cohort_path: str = "data/cohort.csv"
    notes_path: str = "data/notes.jsonl"
    output_dir: str = "out"
    horizons: tuple[int, ...] = HORIZONS
    models: tuple[str, ...] = MODELS
    seeds: Seeds = field(default_factory=Seeds)
    vocab_size: int = notetext.DEFAULT_MAX_TERMS
    n_boot: int = 1000
    ci_level: float = 0.95
    dca_grid: tuple[float, float, int] = (0.01, 0.99, 99)
    calibration_bins: int = 10
    tertile_models: tuple[str, ...] = MODELS
    fairness_by: tuple[str, ...] = ("race", "insurance", "cancer_stage")
    lasso: LassoSettings = field(default_factory=LassoSettings)
    ordinal: OrdinalSettings = field(default_factory=OrdinalSettings)
    synthetic: dict = field(default_factory=dict)

    # -- (de)serialisation -------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        raw = dict(raw)
        nested = {"seeds": Seeds, "lasso": LassoSettings, "ordinal": OrdinalSettings}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, typ in nested.items():
            if key in raw:
                sub = raw[key]
                if not isinstance(sub, dict):
                    raise ConfigError(f"'{key}' must be an object")
                allowed = {f.name for f in dataclasses.fields(typ)}
                bad = set(sub) - allowed
                if bad:
                    raise ConfigError(f"unknown keys in '{key}': {sorted(bad)}")
                raw[key] = typ(**sub)
        for key in ("horizons", "models", "dca_grid", "tertile_models", "fairness_by"):
            if key in raw:
                raw[key] = tuple(raw[key])
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        cfg = cls.from_dict(raw)
        # relative paths are relative to the config file
        base = Path(path).resolve().parent
        for key in ("cohort_path", "notes_path", "output_dir"):
            p = Path(getattr(cfg, key))
            if not p.is_absolute():
                setattr(cfg, key, str(base / p))
        return cfg

    def with_seed(self, name: str, value: int) -> "RunConfig":
        if name not in SEED_NAMES:
            raise ConfigError(f"unknown seed '{name}'; expected one of {', '.join(SEED_NAMES)}")
        return dataclasses.replace(self, seeds=dataclasses.replace(self.seeds, **{name: int(value)}))

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        if not self.horizons or not set(self.horizons) <= set(HORIZONS):
            raise ConfigError(f"horizons must be a non-empty subset of {HORIZONS}")
        if len(set(self.horizons)) != len(self.horizons):
            raise ConfigError("duplicate horizons")
        if not self.models or not set(self.models) <= set(MODELS):
            raise ConfigError(f"models must be a non-empty subset of {MODELS}")
        if len(set(self.models)) != len(self.models):
            raise ConfigError("duplicate models")
        if not set(self.tertile_models) <= set(MODELS):
            raise ConfigError("tertile_models must name known models")
        for name in SEED_NAMES:
            v = getattr(self.seeds, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ConfigError(f"seed '{name}' must be a non-negative integer")
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be >= 1")
        if self.n_boot < 1:
            raise ConfigError("n_boot must be >= 1")
        if not 0 < self.ci_level < 1:
            raise ConfigError("ci_level must lie in (0, 1)")
        lo, hi, n = self.dca_grid
        if not (0 < lo <= hi < 1) or int(n) < 1:
            raise ConfigError("dca_grid must be (start, stop, count) with 0 < start <= stop < 1")
        if self.calibration_bins < 2:
            raise ConfigError("calibration_bins must be >= 2")
        bad = set(self.fairness_by) - set(FAIRNESS_ATTRIBUTES)
        if bad:
            raise ConfigError(f"unknown fairness attributes {sorted(bad)}; "
                              f"choose from {', '.join(FAIRNESS_ATTRIBUTES)}")
        if self.lasso.n_grid < 1 or self.lasso.n_folds < 2 or not 0 < self.lasso.grid_ratio < 1:
            raise ConfigError("invalid lasso settings")
        if self.lasso.cv_patience is not None and self.lasso.cv_patience < 1:
            raise ConfigError("lasso.cv_patience must be >= 1 or null")
        if not 0 <= self.ordinal.val_fraction < 1 or self.ordinal.max_epochs < 1:
            raise ConfigError("invalid ordinal settings")

    def synthetic_config(self) -> SyntheticConfig:
        raw = dict(self.synthetic)
        raw["seed"] = self.seeds.generator
        try:
            return SyntheticConfig.from_json(json.dumps(raw))
        except (TypeError, cohort.CohortError) as exc:
            raise ConfigError(f"invalid synthetic settings: {exc}") from exc

    def dca_thresholds(self) -> np.ndarray:
        lo, hi, n = self.dca_grid
        return np.round(np.linspace(lo, hi, int(n)), 6)


# ---------------------------------------------------------------------------
# Small I/O helpers
# ---------------------------------------------------------------------------

def git_blob_sha1(path: str | os.PathLike) -> str:
    """Content hash as computed by ``git hash-object``."""
    h = hashlib.sha1()
    size = os.path.getsize(path)
    h.update(f"blob {size}\0".encode("ascii"))
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _num(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _opt_float(s: str) -> float:
    return float(s) if s != "" else math.nan


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

@dataclass
class _Data:
    records: list[CohortRecord]
    notes: list
    shd_names: list[str]


class Pipeline:
    """Runs stages against one output directory.

    ``config_path`` is only used to print re-runnable command lines.
    """

    def __init__(self, config: RunConfig, *, config_path: str | None = None, jobs: int = 1,
                 svg: bool = False, log: Callable[[str], None] | None = None):
        config.validate()
        self.cfg = config
        self.out = Path(config.output_dir)
        self.config_path = config_path
        self.jobs = max(1, int(jobs))
        self.svg = svg
        self.log = log or (lambda msg: None)
        self._data: _Data | None = None

    # -- paths and bookkeeping --------------------------------------------

    def path(self, name: str) -> Path:
        return self.out / name

    def rerun_command(self, stage: str) -> str:
        cmd = f"acurisk {stage}"
        if self.config_path:
            cmd += f" --config {self.config_path}"
        return cmd

    def _require(self, *names: str) -> None:
        missing = [n for n in names if not self.path(n).exists()]
        if missing:
            raise MissingPrerequisite("missing prerequisite files:\n" + "\n".join(
                f"  {self.path(n)} (produced by `{self.rerun_command(FILE_PRODUCER.get(n, 'train'))}`)"
                for n in missing))

    def _require_inputs(self) -> None:
        missing = [p for p in (self.cfg.cohort_path, self.cfg.notes_path) if not Path(p).exists()]
        if missing:
            raise MissingPrerequisite(
                "missing input files: " + ", ".join(missing)
                + f" (produced by `{self.rerun_command('generate')}`)")

    def _ensure_out(self) -> None:
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"output dir {self.out} is not writable: {exc}") from exc
        if not os.access(self.out, os.W_OK):
            raise ConfigError(f"output dir {self.out} is not writable")

    def _update_manifest(self, stage: str, seconds: float) -> None:
        mpath = self.path("manifest.json")
        manifest = {}
        if mpath.exists():
            try:
                manifest = json.loads(mpath.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                manifest = {}
        inputs = {}
        for p in (self.cfg.cohort_path, self.cfg.notes_path):
            if Path(p).exists():
                inputs[str(p)] = git_blob_sha1(p)
        from . import __version__

        manifest.update({
            "config": self.cfg.to_dict(),
            "config_hash": self.cfg.config_hash(),
            "inputs": inputs,
            "versions": {
                "acurisk": __version__,
                "numpy": np.__version__,
                "scipy": __import__("scipy").__version__,
                "python": platform.python_version(),
            },
        })
        manifest.setdefault("stages", {})[stage] = round(seconds, 3)
        _write_text(mpath, json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    def check_inputs(self) -> None:
        """Cheap pre-compute validation of config against the input schema."""
        self._require_inputs()
        shd = cohort.read_schema(self.cfg.cohort_path)
        wants = [m for m in self.cfg.models if m in FUSION_MODELS or m == "tabular_lasso"]
        if wants and not shd:
            raise ConfigError(f"models {wants} need SHD columns but {self.cfg.cohort_path} has none")

    def data(self) -> _Data:
        if self._data is None:
            self._require_inputs()
            recs, notes = cohort.load_cohort(self.cfg.cohort_path, self.cfg.notes_path)
            self._data = _Data(recs, notes, cohort.read_schema(self.cfg.cohort_path))
        return self._data

    def run_stage(self, stage: str, **kw) -> None:
        fn = getattr(self, f"stage_{stage}", None)
        if fn is None:
            raise ConfigError(f"unknown stage '{stage}'")
        self._ensure_out()
        t0 = time.perf_counter()
        self.log(f"[{stage}] start")
        try:
            fn(**kw)
        except ConfigError:
            raise
        except Exception as exc:  # noqa: BLE001 - rewrapped with the stage name
            raise StageError(stage, exc, self.rerun_command(stage)) from exc
        dt = time.perf_counter() - t0
        self._update_manifest(stage, dt)
        self.log(f"[{stage}] done in {dt:.1f}s")

    def lock(self):
        from filelock import FileLock

        self._ensure_out()
        return FileLock(str(self.path(".lock")), timeout=0)

    # -- generate ----------------------------------------------------------

    def stage_generate(self) -> None:
        scfg = self.cfg.synthetic_config()
        cpath, npath = Path(self.cfg.cohort_path), Path(self.cfg.notes_path)
        cpath.parent.mkdir(parents=True, exist_ok=True)
        npath.parent.mkdir(parents=True, exist_ok=True)
        records, notes = cohort.generate_synthetic_cohort(scfg)
        cohort.write_cohort(records, notes, cpath, npath, cohort.shd_schema(scfg))
        _write_text(cpath.parent / "synthetic.json", scfg.to_json())
        self._data = None

    # -- prep --------------------------------------------------------------

    def _prep_hash(self) -> str:
        h = hashlib.sha256()
        for p in (self.cfg.cohort_path, self.cfg.notes_path):
            h.update(git_blob_sha1(p).encode("ascii"))
        h.update(f"k={self.cfg.vocab_size}".encode("ascii"))
        return h.hexdigest()

    def stage_prep(self) -> None:
        d = self.data()
        docs = notetext.patient_documents(d.notes)
        ids = [r.patient_id for r in d.records]
        streams = notetext.preprocess_documents({pid: docs[pid] for pid in ids})
        key = self._prep_hash()
        vpath = self.path("vocab.json")
        vocab = None
        if vpath.exists():
            try:
                obj = json.loads(vpath.read_text(encoding="utf-8"))
                if obj.get("input_hash") == key:
                    vocab = notetext.Vocabulary.from_json(vpath.read_text(encoding="utf-8"))
                    self.log("[prep] input hash unchanged; reusing vocab.json")
            except (json.JSONDecodeError, KeyError, ValueError):
                vocab = None
        if vocab is None:
            train_ids = [r.patient_id for r in d.records if r.split == "train"]
            vocab = notetext.build_vocabulary([streams[p] for p in train_ids], self.cfg.vocab_size)
            obj = json.loads(vocab.to_json())
            obj["input_hash"] = key
            _write_text(vpath, json.dumps(obj, indent=1) + "\n")
        X = notetext.tfidf_matrix([streams[p] for p in ids], vocab)
        tmp = self.path("features_lang.csv.tmp")
        notetext.write_features_csv(tmp, ids, X, vocab)
        os.replace(tmp, self.path("features_lang.csv"))

    # -- train -------------------------------------------------------------

    def _language_design(self, records: Sequence[CohortRecord]) -> sparselinear.Design:
        self._require("features_lang.csv")
        ids, terms, X = notetext.read_features_csv(self.path("features_lang.csv"))
        row = {pid: i for i, pid in enumerate(ids)}
        missing = [r.patient_id for r in records if r.patient_id not in row]
        if missing:
            raise ConfigError(f"features_lang.csv lacks patients {missing[:5]}; re-run "
                              f"`{self.rerun_command('prep')}`")
        idx = [row[r.patient_id] for r in records]
        names = [notetext.TERM_PREFIX + t for t in terms]
        return sparselinear.Design(X[idx], names, ["language"] * len(names),
                                   [r.patient_id for r in records])

    def _shd_design(self, records: Sequence[CohortRecord]) -> sparselinear.Design:
        names = self.data().shd_names
        S = cohort.shd_matrix(records)
        return sparselinear.Design(S, list(names), ["shd"] * len(names),
                                   [r.patient_id for r in records])

    def _design(self, model: str, records) -> sparselinear.Design:
        if model == "tabular_lasso":
            return self._shd_design(records)
        if model == "language_lasso":
            return self._language_design(records)
        return self._language_design(records).hstack(self._shd_design(records))

    def _embeddings(self, records: Sequence[CohortRecord]) -> np.ndarray:
        docs = notetext.patient_documents(self.data().notes)
        enc = ordinalnet.HashingEncoder(seed=self.cfg.seeds.encoder)
        out = np.empty((len(records), enc.dim))
        for i, r in enumerate(records):
            out[i], _ = ordinalnet.embed_document(notetext.simple_tokens(docs[r.patient_id]), enc)
        return out

    def _train_lasso(self, model: str, horizon: int, train, test) -> dict:
        ls = self.cfg.lasso
        dtr, dte = self._design(model, train), self._design(model, test)
        ytr = cohort.binary_labels(train, horizon)
        grid = sparselinear.lambda_grid(sparselinear.lambda_max(dtr, ytr), ls.n_grid, ls.grid_ratio)
        cv = sparselinear.cv_grid_search(dtr, ytr, grid, n_folds=ls.n_folds, seed=self.cfg.seeds.fold,
                                         tol=ls.tol, max_iter=ls.max_iter, patience=ls.cv_patience)
        fit = sparselinear.fit_path_to(dtr, ytr, cv.chosen_lambda, cv.grid, horizon=horizon,
                                       tol=ls.tol, max_iter=ls.max_iter)
        tag = f"{model}_{horizon}"
        _write_text(self.path(f"models/{tag}.json"), fit.to_json())
        _write_text(self.path(f"cv/{tag}.csv"), cv.to_csv())
        pos, neg = sparselinear.top_coefficients(fit, ls.top_k)
        return {
            "scores": {horizon: sparselinear.predict_proba_design(fit, dte)},
            "n_shd": sparselinear.count_shd_used(fit),
            "top": [(model, horizon, "positive", i + 1, n, c)
                    for i, (n, c) in enumerate(x for x in pos if x[1] > 0)]
                   + [(model, horizon, "negative", i + 1, n, c)
                      for i, (n, c) in enumerate(x for x in neg if x[1] < 0)],
        }

    def _train_ordinal(self, model: str, train, test) -> dict:
        os_ = self.cfg.ordinal
        emb_tr, emb_te = self._embeddings(train), self._embeddings(test)
        kw = {"encoder_seed": self.cfg.seeds.encoder, "embed_dim": emb_tr.shape[1]}
        fusion = model == "fusion_ordinal"
        if fusion:
            S_tr, S_te = cohort.shd_matrix(train), cohort.shd_matrix(test)
            mu = S_tr.mean(axis=0)
            sd = S_tr.std(axis=0)
            sd = np.where(sd > 0, sd, 1.0)
            Xtr = ordinalnet.fuse(emb_tr, (S_tr - mu) / sd)
            Xte = ordinalnet.fuse(emb_te, (S_te - mu) / sd)
            kw.update(shd_names=list(self.data().shd_names), shd_mean=[float(v) for v in mu],
                      shd_std=[float(v) for v in sd])
        else:
            Xtr, Xte = emb_tr, emb_te
        tc = ordinalnet.TrainConfig(lr=os_.lr, max_epochs=os_.max_epochs, patience=os_.patience,
                                    val_fraction=os_.val_fraction, seed=self.cfg.seeds.fold)
        res = ordinalnet.train(Xtr, cohort.ordinal_labels(train), tc, fusion=fusion, **kw)
        _write_text(self.path(f"models/{model}.json"), res.model.to_json())
        cum = ordinalnet.predict_cumulative(res.model, Xte)
        scores = {h: cum[:, HORIZONS.index(h)] for h in self.cfg.horizons}
        n_shd = ordinalnet.used_shd_count(res.model, os_.used_threshold) if fusion else None
        return {"scores": scores, "n_shd": n_shd, "top": []}

    def _train_task(self, model: str, horizon: int | None) -> tuple[str, dict]:
        train, test = cohort.split_records(self.data().records)
        if model in ORDINAL_MODELS:
            return model, self._train_ordinal(model, train, test)
        return model, self._train_lasso(model, horizon, train, test)

    def stage_train(self, models: Sequence[str] | None = None,
                    horizons: Sequence[int] | None = None) -> None:
        models = tuple(models or self.cfg.models)
        horizons = tuple(horizons or self.cfg.horizons)
        for m in models:
            if m not in self.cfg.models:
                raise ConfigError(f"model '{m}' is not in the config's model set")
        self.check_inputs()
        if any(m in ("language_lasso", "fusion_lasso") for m in models):
            self._require("features_lang.csv")
        train, test = cohort.split_records(self.data().records)
        if not train or not test:
            raise ConfigError("cohort needs both train and test rows")
        for sub in ("models", "cv"):
            self.path(sub).mkdir(exist_ok=True)
        tasks = [(m, None) if m in ORDINAL_MODELS else (m, h)
                 for m in models for h in ((None,) if m in ORDINAL_MODELS else horizons)]
        if self.jobs > 1 and len(tasks) > 1:
            from joblib import Parallel, delayed

            self.data()
            results = Parallel(n_jobs=self.jobs, prefer="processes")(
                delayed(self._train_task)(m, h) for m, h in tasks)
        else:
            results = [self._train_task(m, h) for m, h in tasks]

        # merge with existing predictions so single-model re-runs keep the rest
        pred_rows: dict[tuple[str, int], list] = {}
        shd_used: dict[tuple[str, int], str] = {}
        top_rows: dict[tuple[str, int], list] = {}
        if self.path("predictions.csv").exists():
            for row in _read_csv(self.path("predictions.csv")):
                k = (row["model"], int(row["horizon"]))
                pred_rows.setdefault(k, []).append(
                    [row["model"], row["horizon"], row["patient_id"], row["score"], row["label"]])
        if self.path("shd_used.csv").exists():
            for row in _read_csv(self.path("shd_used.csv")):
                shd_used[(row["model"], int(row["horizon"]))] = row["n_shd"]
        if self.path("top_coefficients.csv").exists():
            for row in _read_csv(self.path("top_coefficients.csv")):
                k = (row["model"], int(row["horizon"]))
                top_rows.setdefault(k, []).append(list(row.values()))
        for model, res in results:
            for h, s in res["scores"].items():
                if h not in horizons:
                    continue
                k = (model, h)
                y = cohort.binary_labels(test, h)
                pred_rows[k] = [[model, h, r.patient_id, _num(v), int(lab)]
                                for r, v, lab in zip(test, s, y)]
                shd_used[k] = "" if res["n_shd"] is None else str(res["n_shd"])
                top_rows[k] = [[a, b, c, d, e, _num(f)] for a, b, c, d, e, f in res["top"]
                               if b == h]
        order = sorted(pred_rows, key=lambda k: (MODELS.index(k[0]), k[1]))
        _write_csv(self.path("predictions.csv"), ("model", "horizon", "patient_id", "score", "label"),
                   [r for k in order for r in pred_rows[k]])
        _write_csv(self.path("shd_used.csv"), ("model", "horizon", "n_shd"),
                   [(k[0], k[1], shd_used.get(k, "")) for k in order])
        _write_csv(self.path("top_coefficients.csv"),
                   ("model", "horizon", "direction", "rank", "feature", "coefficient"),
                   [r for k in sorted(top_rows, key=lambda k: (MODELS.index(k[0]), k[1]))
                    for r in top_rows[k]])

    # -- shared loaders ----------------------------------------------------

    def predictions(self) -> dict[tuple[str, int], discrim.ScoredSet]:
        self._require("predictions.csv")
        by: dict[tuple[str, int], tuple[list, list]] = {}
        for row in _read_csv(self.path("predictions.csv")):
            k = (row["model"], int(row["horizon"]))
            s, y = by.setdefault(k, ([], []))
            s.append(float(row["score"]))
            y.append(int(row["label"]))
        out = {}
        for k in sorted(by, key=lambda k: (MODELS.index(k[0]), k[1])):
            if k[0] in self.cfg.models and k[1] in self.cfg.horizons:
                out[k] = discrim.ScoredSet(np.array(by[k][0]), np.array(by[k][1]))
        missing = [(m, h) for m in self.cfg.models for h in self.cfg.horizons if (m, h) not in out]
        if missing:
            raise MissingPrerequisite(
                f"predictions.csv lacks {missing}; produced by `{self.rerun_command('train')}`")
        return out

    def _pred_ids(self) -> dict[tuple[str, int], list[str]]:
        ids: dict[tuple[str, int], list[str]] = {}
        for row in _read_csv(self.path("predictions.csv")):
            ids.setdefault((row["model"], int(row["horizon"])), []).append(row["patient_id"])
        return ids

    # -- eval --------------------------------------------------------------

    def stage_eval(self) -> None:
        preds = self.predictions()
        self._require("shd_used.csv")
        n_shd = {(r["model"], int(r["horizon"])): r["n_shd"]
                 for r in _read_csv(self.path("shd_used.csv"))}
        rows, cal_rows = [], []
        seed = self.cfg.seeds.bootstrap
        for (model, h), s in preds.items():
            for metric in METRIC_NAMES:
                ci = discrim.bootstrap_ci(s, discrim.METRICS[metric], self.cfg.n_boot, seed,
                                          self.cfg.ci_level)
                rows.append((model, h, metric, _num(ci.point), _num(ci.lo), _num(ci.hi),
                             ci.n_boot, ci.seed, n_shd.get((model, h), "")))
            curve = clinutil.calibration(s.scores, s.labels, self.cfg.calibration_bins)
            for b in curve.bins:
                cal_rows.append((model, h, "binned", _num(b.mean_predicted), _num(b.observed_rate),
                                 _num(b.ci_lo), _num(b.ci_hi)))
            for x, y in zip(curve.smooth_x, curve.smooth_y):
                cal_rows.append((model, h, "smoothed", _num(x), _num(y), "", ""))
        _write_csv(self.path("metrics.csv"),
                   ("model", "horizon", "metric", "point", "lo", "hi", "n_boot", "seed", "n_shd"), rows)
        _write_csv(self.path("calibration.csv"), CURVE_HEADER, cal_rows)
        if self.svg:
            self._render("calibration.csv", diagonal=True, x_label="predicted risk",
                         y_label="observed rate", skip_series=("smoothed",))

    # -- dca ---------------------------------------------------------------

    def stage_dca(self) -> None:
        preds = self.predictions()
        grid = self.cfg.dca_thresholds()
        rows = []
        for (model, h), s in preds.items():
            dc = clinutil.decision_curve(s.scores, s.labels, grid)
            for series, nb in (("model", dc.net_benefit_model), ("treat_all", dc.net_benefit_all),
                               ("treat_none", dc.net_benefit_none)):
                rows.extend((model, h, series, _num(t), _num(v), "", "")
                            for t, v in zip(dc.thresholds, nb))
        _write_csv(self.path("dca.csv"), CURVE_HEADER, rows)
        if self.svg:
            self._render("dca.csv", x_label="threshold probability", y_label="net benefit")

    # -- km ----------------------------------------------------------------

    def stage_km(self) -> None:
        preds = self.predictions()
        ids = self._pred_ids()
        surv = {r.patient_id: r.survival() for r in self.data().records}
        rows, lr_rows = [], []
        for (model, h), s in preds.items():
            if model not in self.cfg.tertile_models:
                continue
            groups = clinutil.stratify_tertiles(s.scores)
            tv = np.array([surv[p][0] for p in ids[(model, h)]], float)
            ev = np.array([surv[p][1] for p in ids[(model, h)]], bool)
            sets = []
            for g in ("low", "medium", "high"):
                m = groups == g
                if not m.any():
                    continue
                km = clinutil.kaplan_meier(tv[m], ev[m], g)
                rows.append((model, h, g, _num(0.0), _num(1.0), _num(1.0), _num(1.0)))
                rows.extend((model, h, g, _num(t), _num(sv), _num(lo), _num(hi))
                            for t, sv, lo, hi in zip(km.times, km.survival, km.lo, km.hi))
                sets.append((tv[m], ev[m]))
            if len(sets) >= 2:
                chi2, p = clinutil.log_rank(sets)
            else:
                chi2, p = 0.0, 1.0
            lr_rows.append((model, h, _num(chi2), len(sets) - 1, _num(p), clinutil.format_p(p)))
        _write_csv(self.path("km.csv"), CURVE_HEADER, rows)
        _write_csv(self.path("logrank.csv"), ("model", "horizon", "chi2", "df", "p", "p_display"),
                   lr_rows)
        if self.svg:
            self._render("km.csv", step=True, x_label="days since chemotherapy start",
                         y_label="event-free probability")

    # -- fairness ----------------------------------------------------------

    def stage_fairness(self, by: Sequence[str] | None = None) -> None:
        by = tuple(by or self.cfg.fairness_by)
        bad = set(by) - set(FAIRNESS_ATTRIBUTES)
        if bad:
            raise ConfigError(f"unknown fairness attributes {sorted(bad)}")
        preds = self.predictions()
        ids = self._pred_ids()
        rec = {r.patient_id: r for r in self.data().records}
        rows = []
        for (model, h), s in preds.items():
            for attr in by:
                tags = [getattr(rec[p], attr) for p in ids[(model, h)]]
                for e in clinutil.subgroup_ecdf(s.scores, tags):
                    series = f"{attr}={e.group}"
                    rows.extend((model, h, series, _num(x), _num(y), "", "")
                                for x, y in zip(e.percentiles, e.ecdf))
        _write_csv(self.path("ecdf.csv"), CURVE_HEADER, rows)
        if self.svg:
            self._render("ecdf.csv", step=True, diagonal=True, x_label="risk percentile",
                         y_label="cumulative fraction", split_prefix=True)

    # -- svg ---------------------------------------------------------------

    def _render(self, table: str, *, step=False, diagonal=False, x_label="", y_label="",
                skip_series: Sequence[str] = (), split_prefix=False) -> None:
        fig_dir = self.path("figures")
        fig_dir.mkdir(exist_ok=True)
        charts: dict[tuple, dict[str, tuple[list, list]]] = {}
        for row in _read_csv(self.path(table)):
            series = row["series"]
            if series in skip_series:
                continue
            key = (row["model"], row["horizon"])
            if split_prefix:
                key += (series.split("=", 1)[0],)
            xs, ys = charts.setdefault(key, {}).setdefault(series, ([], []))
            xs.append(_opt_float(row["x"]))
            ys.append(_opt_float(row["y"]))
        stem = table.rsplit(".", 1)[0]
        for key, series in charts.items():
            name = "_".join([stem, *key]) + ".svg"
            svg = line_chart(series, title=" / ".join([stem, *key]), x_label=x_label,
                             y_label=y_label, step=step, diagonal=diagonal)
            _write_text(fig_dir / name, svg)

    # -- report ------------------------------------------------------------

    def stage_report(self) -> None:
        needed = ["metrics.csv", "calibration.csv", "dca.csv", "km.csv", "logrank.csv", "ecdf.csv",
                  "top_coefficients.csv"]
        self._require(*needed)
        _write_text(self.path("report.md"), self._report_markdown())

    def _report_markdown(self) -> str:
        metrics = _read_csv(self.path("metrics.csv"))
        table: dict[tuple[str, int], dict] = {}
        for r in metrics:
            k = (r["model"], int(r["horizon"]))
            table.setdefault(k, {"n_shd": r["n_shd"]})[r["metric"]] = (
                float(r["point"]), float(r["lo"]), float(r["hi"]))
        lines = ["# ACU risk prediction report", ""]
        lines += [f"Config hash: `{self.cfg.config_hash()}`", ""]
        lines += ["## Discrimination (test split, bootstrap CIs)", "",
                  "| Model | Horizon (days) | No. SHD | AUROC | AUPRC | Cross-entropy |",
                  "|---|---|---|---|---|---|"]

        def cell(v):
            return "" if v is None else f"{v[0]:.3f} ({v[1]:.3f}-{v[2]:.3f})"

        for k in sorted(table, key=lambda k: (k[1], MODELS.index(k[0]))):
            row = table[k]
            n_shd = row["n_shd"] if row["n_shd"] != "" else "N/A"
            lines.append(f"| {k[0]} | {k[1]} | {n_shd} | {cell(row.get('auroc'))} | "
                         f"{cell(row.get('auprc'))} | {cell(row.get('cross_entropy'))} |")
        lines += ["", "## Risk tertiles (log-rank across low / medium / high)", "",
                  "| Model | Horizon | chi2 | df | p |", "|---|---|---|---|---|"]
        for r in _read_csv(self.path("logrank.csv")):
            lines.append(f"| {r['model']} | {r['horizon']} | {float(r['chi2']):.2f} | {r['df']} | "
                         f"{r['p_display']} |")
        lines += ["", "## Largest coefficients", ""]
        top = _read_csv(self.path("top_coefficients.csv"))
        groups: dict[tuple, list] = {}
        for r in top:
            groups.setdefault((r["model"], r["horizon"], r["direction"]), []).append(r)
        for (m, h, d), rs in groups.items():
            terms = ", ".join(f"{r['feature']} ({float(r['coefficient']):+.3f})" for r in rs)
            lines.append(f"- **{m}, {h} days, {d}:** {terms}")
        lines += ["", "## Curve tables", ""]
        for name in ("calibration.csv", "dca.csv", "km.csv", "ecdf.csv"):
            lines.append(f"- `{name}`")
        figs = sorted(p.name for p in self.path("figures").glob("*.svg")) if self.path("figures").exists() else []
        if figs:
            lines += ["", "## Figures", ""]
            lines += [f"![{f}](figures/{f})" for f in figs]
        return "\n".join(lines) + "\n"

    # -- full run ----------------------------------------------------------

    STAGES = ("prep", "train", "eval", "dca", "km", "fairness", "report")

    def run(self) -> None:
        """Every stage in order; generates the synthetic cohort when the inputs
        are absent."""
        self._ensure_out()
        if not (Path(self.cfg.cohort_path).exists() and Path(self.cfg.notes_path).exists()):
            self.run_stage("generate")
        self.check_inputs()
        for stage in self.STAGES:
            self.run_stage(stage)


def run_pipeline(config: RunConfig, **kw) -> Path:
    """Run all stages under the output-directory lock; returns the output dir."""
    p = Pipeline(config, **kw)
    with p.lock():
        p.run()
    return p.out
