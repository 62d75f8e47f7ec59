import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from acurisk.cohort import NoteDocument
from acurisk.notetext import (
    NEGATION_CUES, STOP_CLASS, Preprocessor, TokenStream, Vocabulary, build_vocabulary,
    lemmatize, patient_documents, preprocess, read_features_csv, select_notes, tfidf,
    tfidf_matrix, write_features_csv,
)


def note(nid, day, words=120, pid="P1", kind="progress", text=None):
    return NoteDocument(nid, pid, kind, day, text if text is not None else " ".join(["word"] * words))


# -- note selection -----------------------------------------------------------

def test_word_count_boundary():
    kept = select_notes([note("a", -5, 99), note("b", -4, 100)])
    assert [n.note_id for n in kept] == ["b"]


def test_upper_word_bound():
    kept = select_notes([note("a", -5, 5000), note("b", -4, 5001)])
    assert [n.note_id for n in kept] == ["a"]


def test_three_most_recent_kept():
    notes = [note(str(d), d) for d in (-90, -60, -30, -10, -5)]
    assert [n.offset_day for n in select_notes(notes)] == [-30, -10, -5]


def test_lookback_window():
    notes = [note("a", -181), note("b", -180), note("c", 0), note("d", -1)]
    assert [n.note_id for n in select_notes(notes)] == ["b", "d"]


def test_consent_hp_note_removed():
    text = "Discussed clinical trial consent with patient. " + "word " * 120
    notes = [note("a", -3, kind="history_and_physical", text=text), note("b", -2)]
    assert [n.note_id for n in select_notes(notes)] == ["b"]


def test_consent_phrase_in_progress_note_kept():
    text = "clinical trial consent " + "word " * 120
    assert len(select_notes([note("a", -3, text=text)])) == 1


@given(st.lists(st.tuples(st.integers(-250, 10), st.integers(50, 200), st.sampled_from("PQ")),
                max_size=12))
def test_selection_idempotent(layout):
    notes = [note(f"n{i}", d, w, pid) for i, (d, w, pid) in enumerate(layout)]
    once = select_notes(notes)
    assert select_notes(once) == once
    per = {}
    for n in once:
        per[n.patient_id] = per.get(n.patient_id, 0) + 1
    assert all(v <= 3 for v in per.values())


def test_documents_chronological():
    notes = [note("b", -5, text="second " * 100), note("a", -9, text="first " * 100)]
    doc = patient_documents(notes)["P1"]
    assert doc.index("first") < doc.index("second")


# -- preprocessing ------------------------------------------------------------

def test_denies_negates_to_clause_end():
    assert preprocess("Patient denies chest pain.").tokens == ("patient", "denies", "not_chest", "not_pain")


def test_pure_stop_words_vanish():
    assert preprocess("the and of").tokens == ()


@pytest.mark.parametrize("word, lemma", [("tumors", "tumor"), ("admitted", "admit"),
                                         ("studies", "study"), ("running", "run"),
                                         ("stable", "stable"), ("was", "be")])
def test_lemmas(word, lemma):
    assert lemmatize(word) == lemma


def test_scope_terminator_ends_negation():
    toks = preprocess("no fever but cough").tokens
    assert "not_fever" in toks and "cough" in toks and "not_cough" not in toks


def test_comma_ends_negation():
    toks = preprocess("denies nausea, reports fatigue").tokens
    assert "not_nausea" in toks and "fatigue" in toks


def test_scope_cap():
    toks = Preprocessor().negate("no a1 a2 a3 a4 a5 a6 a7".split())
    assert toks[1:7] == [f"not_a{i}" for i in range(1, 7)]
    assert toks[7] == "a7"


def test_dates_and_times_removed():
    toks = preprocess("Seen on 03/14/2021 at 10:30 am, March 3, 2020. Pain improved.").tokens
    assert not any(ch.isdigit() for t in toks for ch in t)
    assert "pain" in toks


def test_entity_lexicon_removes_names():
    pp = Preprocessor(entity_lexicon=frozenset({"smith"}))
    assert "smith" not in pp("Dr Smith reviewed labs").tokens


def test_special_characters_stripped():
    toks = preprocess("pain (8/10) & nausea!!").tokens
    assert all(t.replace("_", "").replace("'", "").replace("-", "").isalnum() for t in toks)


word = st.text(alphabet="abcdefghijklmnopqrstuvwxyz", min_size=1, max_size=8)


@given(st.lists(st.one_of(word, st.sampled_from([",", ".", "no", "denies", "but", "the"])),
                max_size=40))
def test_token_stream_invariants(words):
    toks = preprocess(" ".join(words)).tokens
    assert all(t and not any(c.isspace() for c in t) for t in toks)
    assert all(t == t.lower() for t in toks)


@given(st.lists(word.filter(lambda w: w not in NEGATION_CUES), max_size=40))
def test_no_cue_no_negation(words):
    assert not any(t.startswith("not_") for t in preprocess(" ".join(words)).tokens)


def test_stop_lexicon_has_no_cue_words_that_matter():
    assert "not" not in STOP_CLASS


def test_token_stream_rejects_whitespace():
    with pytest.raises(ValueError):
        TokenStream(("a b",))
    with pytest.raises(ValueError):
        TokenStream(("",))


# -- vocabulary and tf-idf ----------------------------------------------------

def ts(*tokens):
    return TokenStream(tuple(tokens))


def test_vocabulary_top_k_with_ties():
    v = build_vocabulary([ts("a", "a", "b"), ts("b", "c")], 2)
    assert v.terms == ["a", "b"]
    assert v.doc_freq == [1, 2]
    assert v.n_docs == 2


def test_vocabulary_short_warns():
    with pytest.warns(UserWarning):
        v = build_vocabulary([ts("x", "y")], 5)
    assert v.short and len(v) == 2


def test_hand_tfidf():
    v = build_vocabulary([ts("pain", "pain", "admission"), ts("breast", "admission")], 3)
    vec = tfidf(ts("pain", "pain", "admission"), v)
    w = {v.terms[j]: x for j, x in vec.items()}
    raw_pain = 2 * (math.log(3 / 2) + 1)
    assert raw_pain == pytest.approx(2.8110, abs=1e-4)
    assert w["pain"] == pytest.approx(0.9421, abs=1e-4)
    assert w["admission"] == pytest.approx(0.3352, abs=1e-4)


def test_oov_document_is_zero():
    v = build_vocabulary([ts("a")], 1)
    assert tfidf(ts("zzz"), v) == {}


@given(st.lists(st.lists(st.sampled_from("abcdefg"), min_size=1, max_size=15), min_size=1, max_size=8),
       st.lists(st.sampled_from("abcdefghij"), max_size=20))
def test_tfidf_properties(train_docs, doc):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        v = build_vocabulary([ts(*d) for d in train_docs], 5)
    before = (list(v.terms), list(v.doc_freq), v.n_docs)
    vec = tfidf(ts(*doc), v)
    assert (list(v.terms), list(v.doc_freq), v.n_docs) == before
    assert all(x >= 0 for x in vec.values())
    if vec:
        assert math.sqrt(sum(x * x for x in vec.values())) == pytest.approx(1.0, abs=1e-9)
    assert all(1 <= d <= v.n_docs for d in v.doc_freq)
    idf = v.idf
    for i in range(len(v)):
        for j in range(len(v)):
            if v.doc_freq[i] < v.doc_freq[j]:
                assert idf[i] > idf[j]


def test_identical_multisets_identical_vectors():
    v = build_vocabulary([ts("a", "b", "c")], 3)
    assert tfidf(ts("a", "b", "a"), v) == tfidf(ts("b", "a", "a"), v)


def test_vocab_json_round_trip():
    v = build_vocabulary([ts("a", "b", "b")], 2)
    w = Vocabulary.from_json(v.to_json())
    assert (w.terms, w.doc_freq, w.n_docs) == (v.terms, v.doc_freq, v.n_docs)


def test_features_csv_round_trip(tmp_path):
    v = build_vocabulary([ts("a", "b", "b"), ts("c")], 3)
    X = tfidf_matrix([ts("a", "b"), ts("c"), ts("zz")], v)
    path = tmp_path / "f.csv"
    write_features_csv(path, ["P1", "P2", "P3"], X, v)
    ids, terms, Y = read_features_csv(path)
    assert ids == ["P1", "P2", "P3"] and terms == v.terms
    np.testing.assert_array_equal(X.toarray(), Y.toarray())
    assert path.read_text().splitlines()[0] == "patient_id,w_b,w_a,w_c"
