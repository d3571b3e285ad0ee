import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecgdnn import textlabel as T
from ecgdnn.errors import InputError
from ecgdnn.evalstats import confusion, scores
from ecgdnn.labels import CLASSES, N_CLASSES
from ecgdnn.synth import synth_report


@pytest.fixture(scope="module")
def rb():
    return T.load_rulebase()


@pytest.fixture(scope="module")
def sw():
    return T.load_stopwords()


def rulebase(*rules, **kw):
    return T.RuleBase([T.Rule(frozenset(a), c, conf) for a, c, conf in rules], **kw)


def test_ngrams_worked_example():
    g = T.extract_ngrams("bloqueio de ramo direito", frozenset({"de"})).grams
    assert g == {"bloqueio", "ramo", "direito", "bloqueio ramo", "ramo direito", "bloqueio ramo direito"}


def test_all_stopwords_empty(sw):
    assert T.extract_ngrams("de do da", sw).grams == frozenset()


def test_case_and_accent_folding(sw):
    assert T.extract_ngrams("Bloqueio DE Ramo", sw).grams == T.extract_ngrams("bloqueio de ramo", sw).grams
    assert T.normalize("Fibrilação ATRIAL!") == "fibrilacao atrial"


def test_ngrams_do_not_cross_sentences():
    g = T.extract_ngrams("ritmo sinusal. taquicardia", frozenset()).grams
    assert "sinusal taquicardia" not in g and "taquicardia" in g


def test_classify_single_rule_and_max():
    one = rulebase((["ramo direito"], "RBBB", 0.9))
    g = T.extract_ngrams("bloqueio de ramo direito", frozenset({"de"}))
    assert T.classify_lazy(g, one)[CLASSES.index("RBBB")] == 0.9
    two = rulebase((["ramo direito"], "RBBB", 0.9), (["bloqueio"], "RBBB", 0.6))
    assert T.classify_lazy(g, two)[CLASSES.index("RBBB")] == 0.9
    assert not T.classify_lazy(T.extract_ngrams("", frozenset()), two).any()


def test_negation_zeroes_class(rb, sw):
    assert T.label_report("Bloqueio de ramo direito", rb, sw)[CLASSES.index("RBBB")]
    assert not T.label_report("Sem bloqueio de ramo direito", rb, sw).any()
    # scope ends at the sentence boundary
    lab = T.label_report("Sem alterações. Bradicardia sinusal", rb, sw)
    assert lab[CLASSES.index("SB")]


def test_all_zero_scores_all_false(rb, sw):
    g = T.extract_ngrams("", sw)
    assert not T.disambiguate(np.zeros(N_CLASSES), g, rb).any()


def test_exclusive_pair_keeps_higher():
    rule_set = rulebase(threshold=0.5, exclusive_pairs=(("SB", "ST"),),
                        *[(["x"], "SB", 0.8), (["y"], "ST", 0.6)])
    s = np.zeros(N_CLASSES)
    s[CLASSES.index("SB")], s[CLASSES.index("ST")] = 0.8, 0.6
    out = T.disambiguate(s, T.extract_ngrams("x y", frozenset()), rule_set)
    assert out[CLASSES.index("SB")] and not out[CLASSES.index("ST")]


def test_threshold_applies():
    rule_set = rulebase((["flutter"], "AF", 0.3))
    assert not T.label_report("flutter atrial", rule_set, frozenset()).any()


def corpus(n, seed):
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n):
        lab = rng.random(N_CLASSES) < 0.25
        for a, b in (("SB", "ST"), ("RBBB", "LBBB")):
            if lab[CLASSES.index(a)] and lab[CLASSES.index(b)]:
                lab[CLASSES.index(b if rng.random() < 0.5 else a)] = False
        rows.append((lab, synth_report(lab, rng)))
    return rows


def test_synthetic_report_corpus_recovered_exactly(rb, sw):
    rows = corpus(500, 3)
    truth = np.array([r[0] for r in rows])
    pred = np.array([T.label_report(text, rb, sw) for _, text in rows])
    f1 = [scores(cm)[3] for cm in confusion(truth, pred)]
    assert np.mean(f1) == 1.0
    np.testing.assert_array_equal(pred, truth)


@settings(max_examples=200, deadline=None)
@given(st.text())
def test_total_and_deterministic(text):
    rb, sw = T.load_rulebase(), T.load_stopwords()
    a = T.label_report(text, rb, sw)
    assert a.shape == (N_CLASSES,) and a.dtype == bool
    np.testing.assert_array_equal(a, T.label_report(text, rb, sw))


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(range(200)), st.sampled_from(CLASSES), st.floats(0, 1))
def test_adding_disjoint_rule_changes_nothing(i, cls, conf):
    rb, sw = T.load_rulebase(), T.load_stopwords()
    _, text = corpus(200, 5)[i]
    before = T.label_report(text, rb, sw)
    grams = T.extract_ngrams(text, sw, rb.negations).grams
    ante = frozenset({"zzqx"})
    assert not ante & grams
    bigger = T.RuleBase(rb.rules + [T.Rule(ante, cls, conf)], rb.negations, rb.exclusive_pairs,
                        rb.threshold, rb.negation_window)
    np.testing.assert_array_equal(T.label_report(text, bigger, sw), before)


def test_rulebase_validation(tmp_path):
    bad = tmp_path / "r.json"
    for content in ('[{"antecedent": ["x"], "class": "XX", "confidence": 0.5}]',
                    '[{"antecedent": ["x"], "class": "AF", "confidence": 1.5}]',
                    '[{"antecedent": [], "class": "AF", "confidence": 0.5}]',
                    '[]', 'not json'):
        bad.write_text(content)
        with pytest.raises(InputError):
            T.load_rulebase(bad)
    bad.write_text('[{"antecedent": ["Ramo Direito"], "class": "RBBB", "confidence": 0.9}]')
    assert T.load_rulebase(bad).rules[0].antecedent == {"ramo direito"}


def test_read_reports(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text('exam_id,text\ne1,"Ritmo sinusal, normal"\n')
    assert T.read_reports(p) == [("e1", "Ritmo sinusal, normal")]
    p.write_text("exam_id,text\ne1,a,b\n")
    with pytest.raises(InputError, match="row 2"):
        T.read_reports(p)
