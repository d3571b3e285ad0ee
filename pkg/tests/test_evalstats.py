import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecgdnn import evalstats as es
from ecgdnn.labels import CLASSES


# -- oracles -------------------------------------------------------------------------

def naive_sweep(scores, truth):
    """O(n^2) PR points: for each distinct score s (descending) predict score >= s."""
    pts = []
    n_pos = int(np.sum(truth))
    for s in sorted(set(scores.tolist()), reverse=True):
        pred = scores >= s
        tp = int(np.sum(pred & truth))
        fp = int(np.sum(pred & ~truth))
        pts.append((s, tp / (tp + fp), tp / n_pos if n_pos else 0.0))
    return pts


def naive_ap(pts):
    ap, prev_r = 0.0, 0.0
    for _, p, r in pts:
        ap += p * (r - prev_r)
        prev_r = r
    return ap


# -- scores --------------------------------------------------------------------------

def test_scores_published_example():
    p, r, s, f = es.scores(es.ConfusionMatrix(tp=26, fp=4, tn=795, fn=2))
    assert (round(p, 3), round(r, 3), round(s, 3), round(f, 3)) == (0.867, 0.929, 0.995, 0.897)


def test_scores_conventions():
    assert es.scores(es.ConfusionMatrix(0, 0, 10, 0)) == (0.0, 0.0, 1.0, 0.0)
    assert es.scores(es.ConfusionMatrix(5, 0, 5, 0)) == (1.0, 1.0, 1.0, 1.0)
    assert es.scores(es.ConfusionMatrix(0, 0, 0, 0)) == (0.0, 0.0, 0.0, 0.0)


def test_confusion_counts():
    t = np.array([[1, 0], [1, 1], [0, 0], [0, 1]], bool)
    p = np.array([[1, 1], [0, 1], [0, 0], [1, 1]], bool)
    cms = es.confusion(t, p)
    assert cms[0] == es.ConfusionMatrix(tp=1, fp=1, tn=1, fn=1)
    assert cms[1] == es.ConfusionMatrix(tp=2, fp=1, tn=1, fn=0)
    assert all(cm.n == 4 for cm in cms)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_score_arrays_match_scalar(tp, fp, tn, fn):
    vec = es._score_arrays(np.array(tp), np.array(fp), np.array(tn), np.array(fn))
    np.testing.assert_allclose(vec, es.scores(es.ConfusionMatrix(tp, fp, tn, fn)), rtol=1e-12)
    assert ((vec >= 0) & (vec <= 1)).all()


# -- PR curves -----------------------------------------------------------------------

def test_perfect_scores_ap_one():
    t = np.array([1, 0, 1, 0, 0], bool)
    assert es.average_precision(es.pr_curve(t.astype(float), t)) == 1.0


def test_anticorrelated_four_items_by_hand():
    # scores 0.9 0.8 0.2 0.1 for truth 0 0 1 1: points (p, r) = (0,0) (0,0) (1/3,1/2) (1/2,1)
    c = es.pr_curve(np.array([0.9, 0.8, 0.2, 0.1]), np.array([0, 0, 1, 1], bool))
    np.testing.assert_allclose(c.precision, [0, 0, 1 / 3, 1 / 2])
    np.testing.assert_allclose(c.recall, [0, 0, 0.5, 1])
    assert es.average_precision(c) == pytest.approx(1 / 3 * 0.5 + 0.5 * 0.5)


@pytest.mark.parametrize("seed", range(10))
def test_pr_curve_equals_naive_sweep(seed):
    rng = np.random.default_rng(seed)
    n = 50
    scores = np.round(rng.random(n), 2)  # ties included
    truth = rng.random(n) < 0.3
    c = es.pr_curve(scores, truth)
    pts = naive_sweep(scores, truth)
    np.testing.assert_array_equal(c.thresholds, [p[0] for p in pts])
    np.testing.assert_array_equal(c.precision, [p[1] for p in pts])
    np.testing.assert_array_equal(c.recall, [p[2] for p in pts])
    assert es.average_precision(c) == naive_ap(pts)


def test_curve_invariants():
    rng = np.random.default_rng(3)
    c = es.pr_curve(rng.random(80), rng.random(80) < 0.4)
    assert np.all(np.diff(c.thresholds) < 0)
    assert np.all(np.diff(c.recall) >= 0)


def test_micro_ap_pools_pairs():
    rng = np.random.default_rng(4)
    s, t = rng.random((30, 6)), rng.random((30, 6)) < 0.2
    assert es.micro_ap(s, t) == naive_ap(naive_sweep(s.ravel(), t.ravel()))


def test_select_threshold_rules():
    # all-same scores
    c = es.pr_curve(np.full(5, 0.3), np.array([1, 0, 1, 0, 0], bool))
    assert es.select_threshold(c) == 0.3
    # perfect separation: F1 = 1 at 0.7 and nowhere else higher; higher bound of the gap is 0.7
    c = es.pr_curve(np.array([0.9, 0.7, 0.4, 0.1]), np.array([1, 1, 0, 0], bool))
    assert es.select_threshold(c) == 0.7
    # tie in F1 goes to the higher threshold
    c = es.pr_curve(np.array([0.9, 0.8, 0.7, 0.6]), np.array([1, 0, 0, 1], bool))
    f1 = c.f1()
    assert f1[0] == pytest.approx(f1[3]) == f1.max() and es.select_threshold(c) == 0.9


@pytest.mark.parametrize("seed", range(5))
def test_select_threshold_is_sweep_argmax(seed):
    rng = np.random.default_rng(seed)
    s, t = rng.random(60), rng.random(60) < 0.3
    best_f1, best_thr = -1, None
    for thr, p, r in naive_sweep(s, t):
        f = 2 * p * r / (p + r) if p + r else 0.0
        if f > best_f1 + 1e-15:
            best_f1, best_thr = f, thr
    assert es.select_threshold(es.pr_curve(s, t)) == best_thr


def test_no_positive_class_threshold_predicts_nothing():
    s = np.array([0.2, 0.9, 0.5])
    thr = es.select_threshold(es.pr_curve(s, np.zeros(3, bool)))
    assert not (s >= thr).any()


# -- bootstrap -------------------------------------------------------------------------

def test_bootstrap_deterministic():
    rng = np.random.default_rng(0)
    t, p = rng.random((100, 6)) < 0.3, rng.random((100, 6)) < 0.3
    a = es.bootstrap(t, p, 200, seed=5)
    b = es.bootstrap(t, p, 200, seed=5)
    np.testing.assert_array_equal(a.quantiles, b.quantiles)
    assert a.samples.shape == (200, 6, 4) and a.quantiles.shape == (5, 6, 4)
    c = es.bootstrap(t, p, 200, seed=6)
    assert not np.array_equal(a.samples, c.samples)


def test_bootstrap_identical_rows_zero_width():
    t = np.tile([True, False, True, False, False, True], (40, 1))
    p = np.tile([True, False, False, True, False, True], (40, 1))
    b = es.bootstrap(t, p, 100, seed=1)
    assert np.ptp(b.samples, axis=0).max() == 0


def test_bootstrap_recall_mean_second_implementation():
    rng = np.random.default_rng(9)
    t = rng.random((20, 1)) < 0.5
    p = t ^ (rng.random((20, 1)) < 0.25)
    ours = es.bootstrap(t, p, 1000, seed=2).mean()[0, 1]
    # independent re-implementation: one stream, all resamples drawn at once
    idx = np.random.default_rng(12345).integers(0, 20, size=(1000, 20))
    tt, pp = t[idx, 0], p[idx, 0]
    tp = (tt & pp).sum(1)
    pos = tt.sum(1)
    theirs = np.mean(np.where(pos > 0, tp / np.maximum(pos, 1), 0.0))
    assert abs(ours - theirs) < 0.02


# -- McNemar and kappa -------------------------------------------------------------------

def errors(b, c, both=0, neither=0):
    a = [True] * b + [False] * c + [True] * both + [False] * neither
    z = [False] * b + [True] * c + [True] * both + [False] * neither
    return np.array(a), np.array(z)


def test_mcnemar_fixtures():
    assert es.mcnemar(*errors(0, 0, 5, 5)) == 1.0
    assert es.mcnemar(*errors(5, 5)) == pytest.approx(1.0, abs=1e-12)
    assert es.mcnemar(*errors(10, 0)) == pytest.approx(2 * 0.5 ** 10, abs=1e-12)
    assert es.mcnemar(*errors(0, 10)) == pytest.approx(2 * 0.5 ** 10, abs=1e-12)


def test_mcnemar_exact_by_hand():
    # b=7, c=2: 2 * sum_{i<=2} C(9, i) / 2^9
    expected = 2 * (1 + 9 + 36) / 512
    assert es.mcnemar(*errors(7, 2)) == pytest.approx(expected, abs=1e-12)


def test_mcnemar_chi_square_branch():
    from scipy.stats import chi2

    b, c = 30, 12
    stat = (abs(b - c) - 1) ** 2 / (b + c)
    assert es.mcnemar(*errors(b, c, 3, 4)) == pytest.approx(chi2.sf(stat, 1), abs=1e-12)
    assert es.mcnemar(*errors(13, 12)) == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 40), st.integers(0, 40))
def test_mcnemar_symmetric_and_bounded(b, c):
    p1 = es.mcnemar(*errors(b, c))
    assert 0 <= p1 <= 1
    assert p1 == pytest.approx(es.mcnemar(*errors(c, b)), abs=1e-15)


def test_kappa_fixtures():
    assert es.kappa_from_table(9, 3, 3, 1) == pytest.approx(0.0, abs=1e-12)
    assert es.kappa_from_table(45, 5, 5, 45) == pytest.approx(0.8, abs=1e-12)
    a = np.array([1, 0, 1, 1, 0], bool)
    assert es.cohen_kappa(a, a) == 1.0
    assert es.cohen_kappa(np.zeros(4, bool), np.zeros(4, bool)) == 1.0


def test_kappa_matrix_shape():
    rng = np.random.default_rng(0)
    a, b = rng.random((50, 6)) < 0.3, rng.random((50, 6)) < 0.3
    k = es.kappa(a, b)
    assert k.shape == (6,) and ((k >= -1) & (k <= 1)).all()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 30), st.integers(0, 30), st.integers(0, 30), st.integers(0, 30))
def test_kappa_bounds_and_symmetry(a, b, c, d):
    if a + b + c + d == 0:
        return
    k = es.kappa_from_table(a, b, c, d)
    assert -1 - 1e-12 <= k <= 1 + 1e-12
    assert k == pytest.approx(es.kappa_from_table(a, c, b, d), abs=1e-12)


# -- heart-rate report ------------------------------------------------------------------

def test_hr_report_rows_and_margin():
    hr = es.hr_vs_prediction_report(["a", "b", "c", "d"], [98.0, 104.0, 120.0, 80.0],
                                    np.array([0, 1, 1, 0], bool), np.array([1, 1, 0, 0], bool), "ST")
    assert hr.line_bpm == 100.0
    assert [r[4] for r in hr.rows] == [False, True, False, True]
    assert hr.errors_near_line(5.0) == 0.5


def test_hr_report_empty_and_all_correct():
    hr = es.hr_vs_prediction_report([], [], np.zeros((0, 6), bool), np.zeros((0, 6), bool), "SB")
    assert hr.rows == [] and math.isnan(hr.errors_near_line())
    t = np.zeros((3, 6), bool)
    hr = es.hr_vs_prediction_report(["a", "b", "c"], [40, 60, 45], t, t, "SB")
    assert all(r[4] for r in hr.rows) and hr.line_bpm == 50.0
    with pytest.raises(ValueError):
        es.hr_vs_prediction_report([], [], t[:0], t[:0], "AF")


# -- published-table arithmetic ---------------------------------------------------------

def test_published_scores_table():
    assert set(es.PUBLISHED_TEST_SCORES) == set(CLASSES)
    assert sum(es.TEST_POSITIVES.values()) == 157


def test_reconcile_finds_the_stated_matrix():
    found = es.reconcile_counts(es.PUBLISHED_TEST_SCORES["1dAVb"], 28)
    assert es.ConfusionMatrix(26, 4, 795, 2) in found
