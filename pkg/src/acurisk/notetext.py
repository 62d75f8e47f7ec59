"""Note selection, text preprocessing, vocabulary and TF-IDF features.

The preprocessing chain is rule based and deterministic:

1. date/time expressions are blanked on the raw text,
2. the text is split into clauses (sentence punctuation, commas, newlines),
3. clause tokens are lowercased and stripped of special characters,
4. tokens after a negation cue are prefixed ``not_`` (scope ends at the
   clause end, a terminator word, or after six tokens),
5. closed-class words are removed,
6. remaining words are lemmatised with a suffix-rule table plus exceptions.

The negation rule approximates what a dependency-based negator would do; it
is not a reimplementation of one.
"""

from __future__ import annotations

import json
import math
import re
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .cohort import NoteDocument

NEGATION_PREFIX = "not_"
DEFAULT_MAX_TERMS = 2000
TERM_PREFIX = "w_"  # feature-name prefix for vocabulary terms
MIN_WORDS = 100
MAX_WORDS = 5000
LOOKBACK_DAYS = 180
MAX_NOTES = 3
SCOPE_CAP = 6
CONSENT_PATTERNS = (
    r"clinical\s+trials?\s+consents?",
    r"consents?\s+(?:form\s+)?for\s+(?:the\s+)?clinical\s+trials?",
    r"research\s+consents?",
)


def _read_lexicon(name: str) -> list[str]:
    text = resources.files("acurisk.resources").joinpath(name).read_text(encoding="utf-8")
    return [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]


STOP_CLASS = frozenset(_read_lexicon("stop_class.txt"))
NEGATION_CUES = frozenset(_read_lexicon("negation_cues.txt"))
SCOPE_TERMINATORS = frozenset(_read_lexicon("scope_terminators.txt"))
LEMMA_EXCEPTIONS = dict(ln.split("\t") for ln in _read_lexicon("lemma_exceptions.txt"))


# ---------------------------------------------------------------------------
# Note selection
# ---------------------------------------------------------------------------

_consent_re = re.compile("|".join(CONSENT_PATTERNS), re.IGNORECASE)


def _qualifies(note: NoteDocument) -> bool:
    if not -LOOKBACK_DAYS <= note.offset_day < 0:
        return False
    if not MIN_WORDS <= note.word_count <= MAX_WORDS:
        return False
    if note.note_type == "history_and_physical" and _consent_re.search(note.text):
        return False
    return True


def select_notes(notes: Iterable[NoteDocument]) -> list[NoteDocument]:
    """Keep at most the three most recent qualifying notes per patient.

    Output is ordered by patient, then chronologically; same-day notes are
    ordered by ``note_id``.
    """
    by_patient: dict[str, list[NoteDocument]] = defaultdict(list)
    for note in notes:
        if _qualifies(note):
            by_patient[note.patient_id].append(note)
    out: list[NoteDocument] = []
    for pid in sorted(by_patient):
        chosen = sorted(by_patient[pid], key=lambda n: (n.offset_day, n.note_id))[-MAX_NOTES:]
        out.extend(chosen)
    return out


def patient_documents(notes: Iterable[NoteDocument]) -> dict[str, str]:
    """Concatenate each patient's selected notes in chronological order."""
    docs: dict[str, list[str]] = defaultdict(list)
    for note in select_notes(notes):
        docs[note.patient_id].append(note.text)
    return {pid: "\n".join(texts) for pid, texts in docs.items()}


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------

_MONTHS = (
    "january february march april june july august september october "
    "november december"
)
_DATE_PATTERNS = [
    r"\b\d{1,4}[/\-.]\d{1,2}[/\-.]\d{1,4}\b",
    r"\b\d{1,2}:\d{2}(?::\d{2})?\s*(?:[ap]\.?m\.?)?",
    r"\b\d{1,2}\s*[ap]\.?m\.?(?=\W|$)",
    r"\b(?:jan|feb|mar|apr|jun|jul|aug|sept?|oct|nov|dec)\.?\s+\d{1,4}\b",
    r"\b(?:" + "|".join(_MONTHS.split()) + r")\b(?:\s+\d{1,2}(?:st|nd|rd|th)?\b)?",
    r"\b(?:monday|tuesday|wednesday|thursday|friday|saturday|sunday)\b",
    r"\b(?:today|yesterday|tomorrow|tonight)\b",
    r"\b(?:19|20)\d{2}\b",
]
_date_re = re.compile("|".join(_DATE_PATTERNS), re.IGNORECASE)
_clause_re = re.compile(r"[.!?;:,\n\r]+")
_special_re = re.compile(r"[^a-z0-9'\-]+")

_space_re = re.compile(r"\s")
_VOWELS = set("aeiou")


def _is_cvc(stem: str) -> bool:
    # short consonant-vowel-consonant stems take back a final "e" (tak -> take)
    if len(stem) < 3 or len(stem) > 4:
        return False
    a, b, c = stem[-3], stem[-2], stem[-1]
    return a not in _VOWELS and b in _VOWELS and c not in _VOWELS and c not in "wxy"


def _restore_e(stem: str) -> bool:
    # improv -> improve, relat -> relate, but treat stays treat
    if stem.endswith(("iz", "bl", "v", "uc", "rg", "dg", "eas")):
        return True
    return len(stem) >= 4 and stem.endswith("at") and stem[-3] not in _VOWELS


def _undouble(stem: str) -> str:
    if len(stem) >= 3 and stem[-1] == stem[-2] and stem[-1] not in _VOWELS and stem[-1] not in "lsz":
        return stem[:-1]
    return stem


@lru_cache(maxsize=200_000)
def lemmatize(word: str) -> str:
    """Suffix-rule lemmatiser with an exception table."""
    if word in LEMMA_EXCEPTIONS:
        return LEMMA_EXCEPTIONS[word]
    if len(word) < 4 or not word.isalpha():
        return word
    if word.endswith("ies") and len(word) > 4:
        return word[:-3] + "y"
    if word.endswith("ied") and len(word) > 4:
        return word[:-3] + "y"
    if word.endswith("ier") and len(word) > 5:
        return word[:-3] + "y"
    if word.endswith("sses"):
        return word[:-2]
    if word.endswith(("xes", "ches", "shes", "zes")):
        return word[:-2]
    if word.endswith("s") and not word.endswith(("ss", "us", "is")):
        return word[:-1]
    if word.endswith("ing") and len(word) > 5:
        stem = word[:-3]
        if not any(ch in _VOWELS for ch in stem):
            return word
        if _is_cvc(stem) or _restore_e(stem):
            return stem + "e"
        return _undouble(stem)
    if word.endswith("ed") and len(word) > 4:
        stem = word[:-2]
        if not any(ch in _VOWELS for ch in stem):
            return word
        if _is_cvc(stem) or _restore_e(stem):
            return stem + "e"
        return _undouble(stem)
    return word


@dataclass(frozen=True)
class TokenStream:
    tokens: tuple[str, ...]

    def __post_init__(self):
        if "" in self.tokens or _space_re.search("\x00".join(self.tokens)):
            raise ValueError("tokens must be non-empty and free of whitespace")

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


@dataclass
class Preprocessor:
    """Configurable text-to-tokens pipeline.

    ``entity_lexicon`` holds person/organisation names to drop (lowercase,
    single tokens).
    """

    stop_words: frozenset = STOP_CLASS
    negation_cues: frozenset = NEGATION_CUES
    terminators: frozenset = SCOPE_TERMINATORS
    entity_lexicon: frozenset = frozenset()
    scope_cap: int = SCOPE_CAP

    def clauses(self, text: str) -> list[list[str]]:
        text = _date_re.sub(" ", text)
        out = []
        for clause in _clause_re.split(text.lower()):
            toks = [t.strip("'-") for t in _special_re.sub(" ", clause).split()]
            toks = [t for t in toks if t and t not in self.entity_lexicon]
            if toks:
                out.append(toks)
        return out

    def negate(self, tokens: Sequence[str]) -> list[str]:
        out = []
        scope = 0
        for tok in tokens:
            if tok in self.negation_cues:
                scope = self.scope_cap
                out.append(tok)
            elif tok in self.terminators:
                scope = 0
                out.append(tok)
            elif scope > 0:
                out.append(NEGATION_PREFIX + tok)
                scope -= 1
            else:
                out.append(tok)
        return out

    def __call__(self, text: str) -> TokenStream:
        result: list[str] = []
        for clause in self.clauses(text):
            for tok in self.negate(clause):
                negated = tok.startswith(NEGATION_PREFIX) and tok not in self.negation_cues
                base = tok[len(NEGATION_PREFIX):] if negated else tok
                if base in self.stop_words:
                    continue
                if base not in self.negation_cues:
                    base = lemmatize(base)
                result.append(NEGATION_PREFIX + base if negated else base)
        return TokenStream(tuple(result))


_default = Preprocessor()


def preprocess(text: str) -> TokenStream:
    return _default(text)


_simple_re = re.compile(r"[a-z0-9]+")


def simple_tokens(text: str) -> list[str]:
    """Light tokenisation (lowercase alphanumeric runs) for the encoder path."""
    return _simple_re.findall(text.lower())


# ---------------------------------------------------------------------------
# Vocabulary and TF-IDF
# ---------------------------------------------------------------------------

@dataclass
class Vocabulary:
    terms: list[str]
    doc_freq: list[int]
    n_docs: int
    short: bool = False
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        if len(set(self.terms)) != len(self.terms):
            raise ValueError("vocabulary terms must be unique")
        if len(self.doc_freq) != len(self.terms):
            raise ValueError("doc_freq length mismatch")
        self.index = {t: i for i, t in enumerate(self.terms)}

    def __len__(self):
        return len(self.terms)

    @property
    def idf(self) -> np.ndarray:
        df = np.asarray(self.doc_freq, dtype=float)
        return np.log((1.0 + self.n_docs) / (1.0 + df)) + 1.0

    def to_json(self) -> str:
        obj = {"terms": self.terms, "doc_freq": self.doc_freq, "n_docs": self.n_docs}
        return json.dumps(obj, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        obj = json.loads(text)
        return cls(list(obj["terms"]), [int(x) for x in obj["doc_freq"]], int(obj["n_docs"]))


def build_vocabulary(streams: Sequence[TokenStream], k: int = DEFAULT_MAX_TERMS) -> Vocabulary:
    """Top-``k`` terms by total corpus frequency (ties lexicographic).

    Pass training documents only.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    total: Counter = Counter()
    df: Counter = Counter()
    for s in streams:
        total.update(s.tokens)
        df.update(set(s.tokens))
    ranked = sorted(total.items(), key=lambda kv: (-kv[1], kv[0]))
    short = len(ranked) < k
    if short:
        warnings.warn(f"only {len(ranked)} distinct terms, fewer than k={k}", stacklevel=2)
    terms = [t for t, _ in ranked[:k]]
    return Vocabulary(terms, [df[t] for t in terms], len(streams), short=short)


def tfidf(stream: TokenStream, vocab: Vocabulary) -> dict[int, float]:
    """Sparse TF-IDF vector (term index -> weight), L2-normalised.

    A document with no in-vocabulary tokens maps to the empty (zero) vector.
    """
    counts = Counter(vocab.index[t] for t in stream.tokens if t in vocab.index)
    if not counts:
        return {}
    idf = vocab.idf
    raw = {j: c * idf[j] for j, c in sorted(counts.items())}
    norm = math.sqrt(sum(v * v for v in raw.values()))
    return {j: v / norm for j, v in raw.items()}


def tfidf_matrix(streams: Sequence[TokenStream], vocab: Vocabulary) -> sp.csr_matrix:
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for s in streams:
        vec = tfidf(s, vocab)
        indices.extend(vec.keys())
        data.extend(vec.values())
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.asarray(data, dtype=float), np.asarray(indices, dtype=np.int64), np.asarray(indptr)),
        shape=(len(streams), len(vocab)),
    )


def write_features_csv(path, patient_ids: Sequence[str], matrix: sp.csr_matrix,
                       vocab: Vocabulary) -> None:
    """``features_lang.csv``: patient_id + one ``w_<term>`` column per term;
    zero cells are left empty."""
    header = ["patient_id"] + [TERM_PREFIX + t for t in vocab.terms]
    matrix = matrix.tocsr()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i, pid in enumerate(patient_ids):
            row = [""] * len(vocab)
            lo, hi = matrix.indptr[i], matrix.indptr[i + 1]
            for j, v in zip(matrix.indices[lo:hi], matrix.data[lo:hi]):
                row[j] = repr(float(v))
            fh.write(pid + "," + ",".join(row) + "\n")


def read_features_csv(path) -> tuple[list[str], list[str], sp.csr_matrix]:
    """Inverse of :func:`write_features_csv`; returns (ids, terms, matrix)."""
    ids: list[str] = []
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        terms = [h[len(TERM_PREFIX):] for h in header[1:]]
        for line in fh:
            cells = line.rstrip("\n").split(",")
            ids.append(cells[0])
            for j, c in enumerate(cells[1:]):
                if c:
                    indices.append(j)
                    data.append(float(c))
            indptr.append(len(indices))
    m = sp.csr_matrix((np.asarray(data), np.asarray(indices, dtype=np.int64), np.asarray(indptr)),
                      shape=(len(ids), len(terms)))
    return ids, terms, m


def preprocess_documents(docs: Mapping[str, str], preprocessor: Preprocessor | None = None
                         ) -> dict[str, TokenStream]:
    pp = preprocessor or _default
    return {pid: pp(text) for pid, text in docs.items()}
