"""Cohort data model, CSV/JSONL persistence, label construction and the
synthetic cohort generator.

The generator is a stand-in for private EHR data. Each patient gets a
latent risk score that drives three things at once: the time-to-event
category, the relative frequency of "high-risk" vs "low-risk" words in the
generated notes, and a designated subset of structured (SHD) columns.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

HORIZONS = (30, 180, 365)
SPLITS = ("train", "test")
NOTE_TYPES = ("progress", "history_and_physical")

BASE_COLUMNS = (
    "patient_id",
    "age_at_chemo",
    "sex",
    "race",
    "ethnicity",
    "insurance",
    "cancer_type",
    "cancer_stage",
    "event_day",
    "followup_days",
    "split",
)
SHD_PREFIX = "shd_"


class CohortError(ValueError):
    """Raised for malformed or inconsistent cohort inputs."""


@dataclass(frozen=True)
class CohortRecord:
    patient_id: str
    age_at_chemo: float
    sex: str
    race: str
    ethnicity: str
    insurance: str
    cancer_type: str
    cancer_stage: str
    shd: tuple[float, ...]
    note_ids: tuple[str, ...] = ()
    event_day: int | None = None
    followup_days: int = 365
    split: str = "train"

    def __post_init__(self):
        if self.event_day is not None and not 0 <= self.event_day <= self.followup_days:
            raise CohortError(
                f"{self.patient_id}: event_day {self.event_day} outside [0, {self.followup_days}]"
            )
        if self.split not in SPLITS:
            raise CohortError(f"{self.patient_id}: unknown split {self.split!r}")

    def survival(self) -> tuple[int, bool]:
        """(time, event) pair with censoring at ``followup_days``."""
        if self.event_day is None:
            return self.followup_days, False
        return self.event_day, True


@dataclass(frozen=True)
class NoteDocument:
    note_id: str
    patient_id: str
    note_type: str
    offset_day: int
    text: str

    def __post_init__(self):
        if self.note_type not in NOTE_TYPES:
            raise CohortError(f"{self.note_id}: unknown note_type {self.note_type!r}")

    @property
    def word_count(self) -> int:
        return len(self.text.split())


@dataclass(frozen=True)
class OrdinalLabel:
    category: int

    def __post_init__(self):
        if self.category not in (1, 2, 3, 4):
            raise CohortError(f"ordinal category must be 1..4, got {self.category}")


@dataclass(frozen=True)
class BinaryLabel:
    horizon: int
    value: int


def make_ordinal_label(event_day: int | None) -> OrdinalLabel:
    """Time-to-event category with inclusive cut-points 30/180/365 days."""
    if event_day is None:
        return OrdinalLabel(4)
    if event_day < 0:
        raise CohortError(f"negative event_day {event_day}")
    for category, cut in enumerate(HORIZONS, start=1):
        if event_day <= cut:
            return OrdinalLabel(category)
    return OrdinalLabel(4)


def make_binary_label(event_day: int | None, horizon: int) -> BinaryLabel:
    if horizon not in HORIZONS:
        raise CohortError(f"unsupported horizon {horizon}; expected one of {HORIZONS}")
    if event_day is not None and event_day < 0:
        raise CohortError(f"negative event_day {event_day}")
    value = int(event_day is not None and event_day <= horizon)
    return BinaryLabel(horizon, value)


def binary_labels(records: Sequence[CohortRecord], horizon: int) -> np.ndarray:
    return np.array([make_binary_label(r.event_day, horizon).value for r in records], dtype=np.int8)


def ordinal_labels(records: Sequence[CohortRecord]) -> np.ndarray:
    return np.array([make_ordinal_label(r.event_day).category for r in records], dtype=np.int8)


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

def _proportions(counts: Mapping[str, int]) -> dict[str, float]:
    total = sum(counts.values())
    return {k: v / total for k, v in counts.items()}


# Category counts of the full study cohort (N=6,938).
DEFAULT_DEMOGRAPHIC_MIX = {
    "sex": _proportions({"female": 3659, "male": 6938 - 3659}),
    "race": _proportions({"white": 3804, "asian": 1619, "black": 188, "other": 1327}),
    "ethnicity": _proportions({"non_hispanic": 5989, "hispanic": 855, "unknown": 94}),
    "insurance": _proportions({"medicare": 2683, "private": 2450, "medicaid": 599, "other": 1206}),
    "cancer_type": _proportions({
        "breast": 1321, "gastrointestinal": 819, "thoracic": 774, "lymphoma": 700,
        "head_and_neck": 658, "pancreas": 585, "prostate": 520, "gynecologic": 513,
        "genitourinary": 461, "other": 587,
    }),
    "cancer_stage": _proportions({"I": 1099, "II": 1415, "III": 964, "IV": 1898, "unknown": 1562}),
}

# Additive shifts of the latent risk score; signs follow the event-rate
# differences between subgroups in the source cohort.
LATENT_SHIFTS = {
    "race": {"black": 0.45, "other": 0.1},
    "ethnicity": {"hispanic": 0.2},
    "insurance": {"medicaid": 0.4, "medicare": -0.05},
    "cancer_type": {"breast": -0.4, "prostate": -0.9, "lymphoma": 0.45, "pancreas": 0.2},
    "cancer_stage": {"I": -0.25, "II": -0.3, "III": 0.15, "IV": 0.35},
}

DEFAULT_VOCAB_HIGH = (
    "admission", "failure", "pain", "palliative", "hospice",
    "dyspnea", "nausea", "fatigue", "weakness", "fever",
)
DEFAULT_VOCAB_LOW = (
    "breast", "psa", "prostate", "nourished", "stable",
    "active", "ambulatory", "independent", "asymptomatic", "healthy",
)

_FILLER_WORDS = (
    "patient", "history", "exam", "reports", "plan", "follow", "clinic", "visit",
    "chemotherapy", "cycle", "oncology", "review", "systems", "medication", "dose",
    "labs", "blood", "count", "imaging", "scan", "results", "treatment", "regimen",
    "discussed", "options", "family", "support", "social", "diet", "appetite",
    "sleep", "weight", "vital", "signs", "pressure", "heart", "rate", "lungs",
    "clear", "abdomen", "soft", "extremities", "skin", "neuro", "intact", "mood",
    "tumor", "mass", "biopsy", "pathology", "surgery", "radiation", "infusion",
    "port", "line", "schedule", "week", "month", "consult", "referral", "nurse",
    "physician", "team", "note", "assessment", "problem", "list", "continue",
    "monitor", "return", "call", "questions", "education", "consent", "risk",
    "benefit", "goals", "care", "daily", "oral", "intravenous", "tablet", "mg",
)

_SYLLABLES = (
    "ba", "ce", "di", "fo", "gu", "ha", "ke", "li", "mo", "nu", "pa", "re",
    "si", "to", "vu", "za", "lo", "mi", "ne", "ra", "tu", "ve", "xo", "dy",
)

_TEMPLATE_STOPS = ("the", "of", "and", "with", "for", "was", "is", "in", "to", "a", "on", "at")


def filler_vocabulary(n_pseudo: int = 3000, seed: int = 0) -> list[str]:
    """Neutral words used as background text: a short clinical list plus
    pronounceable pseudo-words. Pseudo-words end in a vowel or 'y' so that
    the lemmatiser leaves them unchanged."""
    rng = np.random.default_rng(seed)
    seen = set(_FILLER_WORDS)
    words = list(_FILLER_WORDS)
    while len(words) < len(_FILLER_WORDS) + n_pseudo:
        k = int(rng.integers(2, 5))
        w = "".join(_SYLLABLES[i] for i in rng.integers(0, len(_SYLLABLES), size=k))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


@dataclass
class SyntheticConfig:
    n_patients: int = 5000
    seed: int = 7
    event_rates: tuple[float, float, float] = (0.135, 0.317, 0.390)
    demographic_mix: dict = field(default_factory=lambda: json.loads(json.dumps(DEFAULT_DEMOGRAPHIC_MIX)))
    signal_strength: float = 1.0
    vocab_high: tuple[str, ...] = DEFAULT_VOCAB_HIGH
    vocab_low: tuple[str, ...] = DEFAULT_VOCAB_LOW
    n_shd: int = 40
    n_shd_signal: int = 10
    shd_loading: float = 0.6
    planted_rate: float = 0.03
    negated_sentence_rate: float = 0.08
    distractor_rate: float = 0.1
    test_fraction: float = 0.2
    followup_days: int = 365

    def validate(self) -> None:
        if self.n_patients < 10:
            raise CohortError("n_patients must be >= 10")
        if self.signal_strength < 0:
            raise CohortError("signal_strength must be >= 0")
        rates = tuple(self.event_rates)
        if len(rates) != 3 or not all(0 < r < 1 for r in rates):
            raise CohortError(f"event_rates must be three values in (0, 1), got {rates}")
        if not rates[0] <= rates[1] <= rates[2]:
            raise CohortError(f"event_rates must be non-decreasing, got {rates}")
        for attr, props in self.demographic_mix.items():
            if abs(sum(props.values()) - 1.0) > 1e-9:
                raise CohortError(f"demographic_mix[{attr!r}] does not sum to 1")
            if any(p < 0 for p in props.values()):
                raise CohortError(f"demographic_mix[{attr!r}] has negative proportions")
        if not 0 <= self.n_shd_signal <= self.n_shd:
            raise CohortError("n_shd_signal must lie in [0, n_shd]")
        if set(self.vocab_high) & set(self.vocab_low):
            raise CohortError("vocab_high and vocab_low overlap")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SyntheticConfig":
        raw = json.loads(text)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise CohortError(f"unknown SyntheticConfig keys: {sorted(unknown)}")
        for key in ("event_rates", "vocab_high", "vocab_low"):
            if key in raw:
                raw[key] = tuple(raw[key])
        cfg = cls(**raw)
        cfg.validate()
        return cfg


def shd_schema(cfg: SyntheticConfig) -> list[str]:
    names = [f"{SHD_PREFIX}age"]
    names += [f"{SHD_PREFIX}sig_{i:03d}" for i in range(cfg.n_shd_signal)]
    names += [f"{SHD_PREFIX}noise_{i:03d}" for i in range(cfg.n_shd - cfg.n_shd_signal - 1)]
    return names[: cfg.n_shd] if cfg.n_shd > 0 else []


def _draw_categorical(rng, props: Mapping[str, float], n: int) -> np.ndarray:
    keys = list(props)
    p = np.array([props[k] for k in keys], dtype=float)
    return np.array(keys, dtype=object)[rng.choice(len(keys), size=n, p=p / p.sum())]


def _assign_categories(propensity: np.ndarray, rates: Sequence[float]) -> np.ndarray:
    """Rank patients by event propensity and cut at the cumulative rates, so
    the cohort-level rates are hit exactly (up to rounding)."""
    n = propensity.size
    order = np.argsort(-propensity, kind="stable")
    cats = np.full(n, 4, dtype=np.int8)
    cuts = [int(round(r * n)) for r in rates]
    prev = 0
    for k, cut in enumerate(cuts, start=1):
        cats[order[prev:cut]] = k
        prev = max(prev, cut)
    return cats


def _event_day(rng, category: int) -> int | None:
    if category == 1:
        return int(rng.integers(1, 31))
    if category == 2:
        return int(rng.integers(31, 181))
    if category == 3:
        return int(rng.integers(181, 366))
    return None


def _sentences_fast(rng, n_words, p_high, cfg, filler, filler_cdf):
    # Vectorised word draws; sentence lengths are drawn afterwards.
    u = rng.random(n_words)
    which_plant = rng.random(n_words) < p_high
    hi_idx = rng.integers(0, len(cfg.vocab_high), size=n_words)
    lo_idx = rng.integers(0, len(cfg.vocab_low), size=n_words)
    stop_idx = rng.integers(0, len(_TEMPLATE_STOPS), size=n_words)
    fill_idx = np.searchsorted(filler_cdf, rng.random(n_words), side="right")
    fill_idx = np.minimum(fill_idx, len(filler) - 1)
    words = []
    for i in range(n_words):
        if u[i] < cfg.planted_rate:
            words.append(cfg.vocab_high[hi_idx[i]] if which_plant[i] else cfg.vocab_low[lo_idx[i]])
        elif u[i] < cfg.planted_rate + 0.25:
            words.append(_TEMPLATE_STOPS[stop_idx[i]])
        else:
            words.append(filler[fill_idx[i]])
    sentences = []
    pos = 0
    pool = cfg.vocab_high + cfg.vocab_low
    while pos < n_words:
        if rng.random() < cfg.negated_sentence_rate:
            a, b = rng.integers(0, len(pool), size=2)
            sentences.append(f"Patient denies {pool[a]} and {pool[b]}.")
            pos += 5
            continue
        length = int(rng.integers(6, 15))
        sentences.append(" ".join(words[pos:pos + length]) + ".")
        pos += length
    return " ".join(sentences)


def generate_synthetic_cohort(cfg: SyntheticConfig) -> tuple[list[CohortRecord], list[NoteDocument]]:
    """Generate a cohort with planted signal. Deterministic given ``cfg``."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_patients

    demo = {attr: _draw_categorical(rng, props, n) for attr, props in cfg.demographic_mix.items()}
    for attr in DEFAULT_DEMOGRAPHIC_MIX:
        if attr not in demo:
            demo[attr] = _draw_categorical(rng, DEFAULT_DEMOGRAPHIC_MIX[attr], n)

    latent = rng.standard_normal(n)
    for attr, shifts in LATENT_SHIFTS.items():
        for value, shift in shifts.items():
            latent = latent + shift * (demo[attr] == value)
    latent = (latent - latent.mean()) / latent.std()

    # Latent-variable form of the proportional-odds model: logistic noise on
    # top of the scaled risk, categories cut at the configured rates.
    strength = cfg.signal_strength
    propensity = 1.6 * strength * latent + rng.logistic(size=n)
    categories = _assign_categories(propensity, cfg.event_rates)

    age = np.clip(rng.normal(60.5, 14.4, size=n) - 1.5 * strength * latent, 18, 95).round(1)

    schema = shd_schema(cfg)
    shd = np.empty((n, len(schema)))
    if schema:
        shd[:, 0] = age
        for j, name in enumerate(schema[1:], start=1):
            noise = rng.standard_normal(n)
            if "sig_" in name:
                shd[:, j] = cfg.shd_loading * strength * latent + noise
            else:
                shd[:, j] = noise
    shd = shd.round(4)

    n_test = int(round(cfg.test_fraction * n))
    test_idx = set(rng.permutation(n)[:n_test].tolist())

    filler = filler_vocabulary(seed=cfg.seed)
    weights = 1.0 / np.arange(1, len(filler) + 1) ** 1.05
    filler_cdf = np.cumsum(weights / weights.sum())

    width = len(str(n))
    records: list[CohortRecord] = []
    notes: list[NoteDocument] = []
    for i in range(n):
        pid = f"P{i:0{width}d}"
        p_high = 1.0 / (1.0 + math.exp(-1.2 * strength * latent[i]))
        n_notes = int(rng.integers(1, 4))
        days = sorted(rng.choice(np.arange(-180, 0), size=n_notes, replace=False).tolist())
        note_ids = []
        for k, day in enumerate(days):
            n_words = int(rng.integers(100, 1501))
            note_type = "history_and_physical" if rng.random() < 0.3 else "progress"
            text = _sentences_fast(rng, n_words, p_high, cfg, filler, filler_cdf)
            nid = f"{pid}-N{k}"
            notes.append(NoteDocument(nid, pid, note_type, int(day), text))
            note_ids.append(nid)
        if rng.random() < cfg.distractor_rate:
            # A note the selection rules must drop: too short, too old, or a
            # consent boilerplate H&P.
            kind = int(rng.integers(0, 3))
            nid = f"{pid}-X0"
            if kind == 0:
                text = _sentences_fast(rng, int(rng.integers(20, 90)), p_high, cfg, filler, filler_cdf)
                notes.append(NoteDocument(nid, pid, "progress", int(rng.integers(-180, 0)), text))
            elif kind == 1:
                text = _sentences_fast(rng, int(rng.integers(100, 400)), p_high, cfg, filler, filler_cdf)
                notes.append(NoteDocument(nid, pid, "progress", int(rng.integers(-400, -180)), text))
            else:
                body = _sentences_fast(rng, int(rng.integers(100, 400)), 0.5, cfg, filler, filler_cdf)
                text = "Clinical trial consent reviewed and signed. " + body
                notes.append(NoteDocument(nid, pid, "history_and_physical", int(rng.integers(-180, 0)), text))
            note_ids.append(nid)
        rec = CohortRecord(
            patient_id=pid,
            age_at_chemo=float(age[i]),
            sex=str(demo["sex"][i]),
            race=str(demo["race"][i]),
            ethnicity=str(demo["ethnicity"][i]),
            insurance=str(demo["insurance"][i]),
            cancer_type=str(demo["cancer_type"][i]),
            cancer_stage=str(demo["cancer_stage"][i]),
            shd=tuple(float(v) for v in shd[i]),
            note_ids=tuple(note_ids),
            event_day=_event_day(rng, int(categories[i])),
            followup_days=cfg.followup_days,
            split="test" if i in test_idx else "train",
        )
        records.append(rec)
    return records, notes


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_cohort(records: Sequence[CohortRecord], notes: Sequence[NoteDocument],
                 cohort_path: str | os.PathLike, notes_path: str | os.PathLike,
                 schema: Sequence[str] | None = None) -> None:
    if schema is None:
        n_shd = len(records[0].shd) if records else 0
        schema = [f"{SHD_PREFIX}{j:03d}" for j in range(n_shd)]
    with open(cohort_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(BASE_COLUMNS) + list(schema))
        for r in records:
            w.writerow([
                r.patient_id, _fmt(r.age_at_chemo), r.sex, r.race, r.ethnicity, r.insurance,
                r.cancer_type, r.cancer_stage, "" if r.event_day is None else r.event_day,
                r.followup_days, r.split, *(_fmt(v) for v in r.shd),
            ])
    with open(notes_path, "w", encoding="utf-8", newline="\n") as fh:
        for note in notes:
            obj = {
                "note_id": note.note_id,
                "patient_id": note.patient_id,
                "note_type": note.note_type,
                "offset_day": note.offset_day,
                "text": note.text,
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def write_synthetic(cfg: SyntheticConfig, out_dir: str | os.PathLike) -> dict[str, Path]:
    """Generate and persist ``cohort.csv``, ``notes.jsonl`` and ``synthetic.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records, notes = generate_synthetic_cohort(cfg)
    paths = {
        "cohort": out / "cohort.csv",
        "notes": out / "notes.jsonl",
        "config": out / "synthetic.json",
    }
    write_cohort(records, notes, paths["cohort"], paths["notes"], shd_schema(cfg))
    paths["config"].write_text(cfg.to_json(), encoding="utf-8")
    return paths


def read_schema(cohort_path: str | os.PathLike) -> list[str]:
    """SHD column names from the header of a cohort CSV."""
    with open(cohort_path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), None)
    if header is None:
        raise CohortError(f"{cohort_path}: empty file")
    return [c for c in header if c.startswith(SHD_PREFIX)]


def _parse_int(value: str, what: str, where: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise CohortError(f"{where}: {what} is not an integer: {value!r}") from None


def load_cohort(cohort_path: str | os.PathLike, notes_path: str | os.PathLike,
                schema: Sequence[str] | None = None,
                drop_noteless: bool = True) -> tuple[list[CohortRecord], list[NoteDocument]]:
    """Read ``cohort.csv`` + ``notes.jsonl``.

    ``schema`` is the expected list of SHD column names; when omitted the
    header's ``shd_*`` columns are taken as the schema. Patients left without
    any note after the selection rules are dropped when ``drop_noteless``.
    """
    for p in (cohort_path, notes_path):
        if not os.path.exists(p):
            raise CohortError(f"missing file: {p}")

    records: list[CohortRecord] = []
    seen: set[str] = set()
    with open(cohort_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CohortError(f"{cohort_path}: empty file")
        missing = [c for c in BASE_COLUMNS if c not in header]
        if missing:
            raise CohortError(f"{cohort_path}: missing columns {missing}")
        shd_cols = [c for c in header if c.startswith(SHD_PREFIX)]
        if schema is not None and list(schema) != shd_cols:
            raise CohortError(
                f"{cohort_path}: header has {len(shd_cols)} SHD columns, schema expects {len(schema)}"
            )
        idx = {c: header.index(c) for c in BASE_COLUMNS}
        shd_idx = [header.index(c) for c in shd_cols]
        for line_no, row in enumerate(reader, start=2):
            where = f"{cohort_path}:{line_no}"
            if len(row) != len(header):
                raise CohortError(
                    f"{where}: expected {len(header)} fields "
                    f"({len(shd_cols)} SHD values), got {len(row)}"
                )
            pid = row[idx["patient_id"]]
            if pid in seen:
                raise CohortError(f"{where}: duplicate patient_id {pid!r}")
            seen.add(pid)
            ev = row[idx["event_day"]].strip()
            try:
                shd = tuple(float(row[j]) for j in shd_idx)
                age = float(row[idx["age_at_chemo"]])
            except ValueError as exc:
                raise CohortError(f"{where}: {exc}") from None
            records.append(CohortRecord(
                patient_id=pid,
                age_at_chemo=age,
                sex=row[idx["sex"]],
                race=row[idx["race"]],
                ethnicity=row[idx["ethnicity"]],
                insurance=row[idx["insurance"]],
                cancer_type=row[idx["cancer_type"]],
                cancer_stage=row[idx["cancer_stage"]],
                shd=shd,
                event_day=_parse_int(ev, "event_day", where) if ev else None,
                followup_days=_parse_int(row[idx["followup_days"]], "followup_days", where),
                split=row[idx["split"]],
            ))

    notes: list[NoteDocument] = []
    note_ids: dict[str, list[str]] = {pid: [] for pid in seen}
    with open(notes_path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{notes_path}:{line_no}"
            try:
                obj = json.loads(line)
                note = NoteDocument(
                    note_id=str(obj["note_id"]),
                    patient_id=str(obj["patient_id"]),
                    note_type=obj["note_type"],
                    offset_day=int(obj["offset_day"]),
                    text=obj["text"],
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CohortError(f"{where}: malformed note ({exc})") from None
            if note.patient_id not in note_ids:
                raise CohortError(f"{where}: note {note.note_id} references unknown patient_id {note.patient_id!r}")
            note_ids[note.patient_id].append(note.note_id)
            notes.append(note)

    records = [dataclasses.replace(r, note_ids=tuple(sorted(note_ids[r.patient_id]))) for r in records]
    if drop_noteless:
        from .notetext import select_notes

        kept = {n.patient_id for n in select_notes(notes)}
        records = [r for r in records if r.patient_id in kept]
        notes = [n for n in notes if n.patient_id in kept]
    return records, notes


def shd_matrix(records: Sequence[CohortRecord]) -> np.ndarray:
    if not records:
        return np.zeros((0, 0))
    return np.array([r.shd for r in records], dtype=float)


def split_records(records: Iterable[CohortRecord]) -> tuple[list[CohortRecord], list[CohortRecord]]:
    train, test = [], []
    for r in records:
        (train if r.split == "train" else test).append(r)
    return train, test
