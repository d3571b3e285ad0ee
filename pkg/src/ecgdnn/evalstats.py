"""Classifier evaluation statistics.

Covers confusion matrices and the four per-class scores, precision-recall
curves with step-wise average precision, max-F1 threshold selection,
row-resampling bootstrap, McNemar's test and Cohen's kappa.
"""

import math
from dataclasses import dataclass

import numpy as np

from .labels import CLASSES

SCORE_NAMES = ("precision", "recall", "specificity", "f1")
DEFAULT_QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)
EXACT_MCNEMAR_BELOW = 25

# DNN scores published for the 827-exam test set: (precision, recall, specificity, f1)
PUBLISHED_TEST_SCORES = {
    "1dAVb": (0.867, 0.929, 0.995, 0.897),
    "RBBB": (0.895, 1.000, 0.995, 0.944),
    "LBBB": (1.000, 1.000, 1.000, 1.000),
    "SB": (0.833, 0.938, 0.996, 0.882),
    "AF": (1.000, 0.769, 1.000, 0.870),
    "ST": (0.947, 0.973, 0.997, 0.960),
}
TEST_SET_SIZE = 827
TEST_POSITIVES = {"1dAVb": 28, "RBBB": 34, "LBBB": 30, "SB": 16, "AF": 13, "ST": 36}


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self):
        return self.tp + self.fp + self.tn + self.fn


def confusion(y_true, y_pred):
    """One :class:`ConfusionMatrix` per column of two boolean ``(N, K)`` arrays."""
    t = np.asarray(y_true, dtype=bool)
    p = np.asarray(y_pred, dtype=bool)
    if t.ndim == 1:
        t, p = t[:, None], p[:, None]
    tp = (t & p).sum(0)
    fp = (~t & p).sum(0)
    tn = (~t & ~p).sum(0)
    fn = (t & ~p).sum(0)
    return [ConfusionMatrix(int(a), int(b), int(c), int(d)) for a, b, c, d in zip(tp, fp, tn, fn)]


def _ratio(num, den):
    return num / den if den else 0.0


def scores(cm):
    """(precision, recall, specificity, f1); empty denominators give 0."""
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    recall = _ratio(cm.tp, cm.tp + cm.fn)
    specificity = _ratio(cm.tn, cm.tn + cm.fp)
    f1 = _ratio(2 * precision * recall, precision + recall)
    return precision, recall, specificity, f1


def _score_arrays(tp, fp, tn, fn):
    """Vectorised :func:`scores` over count arrays; returns (..., 4)."""
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 0.0)
        r = np.where(tp + fn > 0, tp / np.maximum(tp + fn, 1), 0.0)
        s = np.where(tn + fp > 0, tn / np.maximum(tn + fp, 1), 0.0)
        f = np.where(p + r > 0, 2 * p * r / np.where(p + r > 0, p + r, 1), 0.0)
    return np.stack([p, r, s, f], axis=-1)


# -- precision-recall --------------------------------------------------------------

@dataclass
class PrCurve:
    thresholds: np.ndarray  # strictly decreasing
    precision: np.ndarray
    recall: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    n_pos: int

    def f1(self):
        fn = self.n_pos - self.tp
        den = 2 * self.tp + self.fp + fn
        return np.where(den > 0, 2 * self.tp / np.maximum(den, 1), 0.0)


def pr_curve(scores_, truth):
    """Operating points for every distinct score, predicting ``score >= threshold``."""
    s = np.asarray(scores_, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=bool).ravel()
    order = np.argsort(-s, kind="stable")
    s, t = s[order], t[order]
    tp_cum = np.cumsum(t)
    fp_cum = np.cumsum(~t)
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1] if len(s) else np.empty(0, int)
    tp, fp = tp_cum[last], fp_cum[last]
    n_pos = int(t.sum())
    precision = tp / np.maximum(tp + fp, 1)
    recall = tp / n_pos if n_pos else np.zeros(len(tp))
    return PrCurve(s[last], precision, recall, tp, fp, n_pos)


def average_precision(curve):
    """Step-wise area: sum of precision times recall increment, added in curve order."""
    if curve.n_pos == 0 or len(curve.recall) == 0:
        return 0.0
    dr = np.diff(np.r_[0.0, curve.recall])
    return float(np.cumsum(dr * curve.precision)[-1])


def micro_ap(scores_, truth):
    """Average precision over all (exam, class) pairs pooled together."""
    return average_precision(pr_curve(np.ravel(scores_), np.ravel(truth)))


def select_threshold(curve):
    """Threshold with maximal F1; ties go to the higher threshold."""
    if len(curve.thresholds) == 0:
        return 0.5
    if curve.n_pos == 0:
        # F1 is zero everywhere; predict no positives at all
        return float(np.nextafter(curve.thresholds[0], np.inf))
    f1 = curve.f1()
    return float(curve.thresholds[int(np.argmax(f1))])


def select_thresholds(curves):
    return np.array([select_threshold(c) for c in curves])


def select_thresholds_from_scores(probs, truth):
    probs = np.asarray(probs)
    truth = np.asarray(truth, dtype=bool)
    return select_thresholds([pr_curve(probs[:, k], truth[:, k]) for k in range(probs.shape[1])])


def apply_thresholds(probs, thresholds):
    return np.asarray(probs) >= np.asarray(thresholds)[None, :]


# -- bootstrap --------------------------------------------------------------------

@dataclass
class BootstrapResult:
    samples: np.ndarray  # (n_resamples, n_classes, 4)
    quantile_levels: tuple
    quantiles: np.ndarray  # (n_quantiles, n_classes, 4)

    def mean(self):
        return self.samples.mean(axis=0)


def bootstrap(y_true, y_pred, n_resamples=1000, seed=0, quantiles=DEFAULT_QUANTILES):
    """Resample exams with replacement and recompute the four scores per class.

    Resample ``i`` draws its indices from a generator seeded with
    ``(seed, i)``, so results do not depend on evaluation order.
    """
    t = np.asarray(y_true, dtype=bool)
    p = np.asarray(y_pred, dtype=bool)
    n = len(t)
    out = np.empty((n_resamples, t.shape[1], 4))
    tp_e, fp_e = t & p, ~t & p
    tn_e, fn_e = ~t & ~p, t & ~p
    for i in range(n_resamples):
        idx = np.random.default_rng([seed, i]).integers(0, n, size=n)
        out[i] = _score_arrays(tp_e[idx].sum(0), fp_e[idx].sum(0), tn_e[idx].sum(0), fn_e[idx].sum(0))
    q = np.quantile(out, quantiles, axis=0)
    return BootstrapResult(out, tuple(quantiles), q)


# -- rater comparison -------------------------------------------------------------

def mcnemar(errors_a, errors_b, exact_below=EXACT_MCNEMAR_BELOW):
    """Two-sided McNemar p-value on paired error indicators.

    Exact binomial test when the discordant count is below ``exact_below``,
    otherwise chi-square with continuity correction.
    """
    a = np.asarray(errors_a, dtype=bool)
    b_ = np.asarray(errors_b, dtype=bool)
    b = int((a & ~b_).sum())
    c = int((~a & b_).sum())
    n = b + c
    if n == 0:
        return 1.0
    if n < exact_below:
        k = min(b, c)
        tail = sum(math.comb(n, i) for i in range(k + 1)) / 2.0 ** n
        return min(1.0, 2.0 * tail)
    stat = max(abs(b - c) - 1, 0) ** 2 / n
    return math.erfc(math.sqrt(stat / 2.0))


def cohen_kappa(a, b):
    """Cohen's kappa for two binary raters; 1.0 when chance agreement is certain."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    n = len(a)
    if n == 0:
        return 1.0
    p_o = float((a == b).mean())
    pa, pb = a.mean(), b.mean()
    p_e = float(pa * pb + (1 - pa) * (1 - pb))
    if p_e >= 1.0:
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)


def kappa(rater_a, rater_b):
    """Per-class kappa for two ``(N, K)`` label arrays."""
    a = np.asarray(rater_a, dtype=bool)
    b = np.asarray(rater_b, dtype=bool)
    return np.array([cohen_kappa(a[:, k], b[:, k]) for k in range(a.shape[1])])


def kappa_from_table(a, b, c, d):
    """Kappa from 2x2 counts: a = both positive, b / c = disagreements, d = both negative."""
    x = np.r_[np.ones(a + b, bool), np.zeros(c + d, bool)]
    y = np.r_[np.ones(a, bool), np.zeros(b, bool), np.ones(c, bool), np.zeros(d, bool)]
    return cohen_kappa(x, y)


# -- heart rate vs prediction ----------------------------------------------------------

CONSENSUS_LINE = {"SB": 50.0, "ST": 100.0}


@dataclass
class HrReport:
    cls: str
    line_bpm: float
    rows: list  # (exam_id, heart_rate, true, predicted, correct)

    def errors_near_line(self, margin=5.0):
        """Fraction of misclassified exams within ``margin`` bpm of the line (nan if none)."""
        wrong = [r for r in self.rows if not r[4]]
        if not wrong:
            return float("nan")
        return sum(abs(r[1] - self.line_bpm) <= margin for r in wrong) / len(wrong)


def hr_vs_prediction_report(exam_ids, heart_rates, y_true, y_pred, cls="ST"):
    if cls not in CONSENSUS_LINE:
        raise ValueError(f"heart-rate report is defined for SB and ST, not {cls!r}")
    k = CLASSES.index(cls)
    t = np.asarray(y_true, dtype=bool)
    p = np.asarray(y_pred, dtype=bool)
    if t.ndim == 2:  # full label matrices; otherwise already the class column
        t, p = t[:, k], p[:, k]
    rows = [(str(e), float(h), bool(a), bool(b), bool(a == b))
            for e, h, a, b in zip(exam_ids, heart_rates, t, p)]
    return HrReport(cls, CONSENSUS_LINE[cls], rows)


# -- published-table arithmetic -----------------------------------------------------------

def reconcile_counts(printed, n_pos, n_total=TEST_SET_SIZE, tol=0.0005):
    """All confusion matrices with ``n_pos`` positives whose scores round to ``printed``.

    ``printed`` is (precision, recall, specificity, f1) at three decimals;
    a tiny slack on ``tol`` absorbs binary representation of exact halves.
    """
    n_neg = n_total - n_pos
    found = []
    for tp in range(n_pos + 1):
        for fp in range(n_neg + 1):
            cm = ConfusionMatrix(tp, fp, n_neg - fp, n_pos - tp)
            if all(abs(v - w) <= tol + 1e-12 for v, w in zip(scores(cm), printed)):
                found.append(cm)
    return found
