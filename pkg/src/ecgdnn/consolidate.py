"""Ground-truth consolidation of medical, Uni-G and Minnesota label sources.

Each class of each exam is walked through an ordered rule list and the first
rule that decides it is recorded:

======  ====================================================  ===========
rule    condition                                             decision
======  ====================================================  ===========
absent  no source asserts the class                           Rejected
1a      medical and (unig or minnesota)                       Accepted
1b      exactly one automatic source, medical false           Rejected
2a      ST with heart rate < 100 bpm                          Rejected
2b      SB with heart rate > 50 bpm                           Rejected
2c      RBBB / LBBB with QRS < 115 ms                         Rejected
2d      1dAVb with PR < 190 ms                                Rejected
3a      medical true for RBBB, 1dAVb, SB or ST                Accepted
3b      medical true for AF with NN standard deviation > 646  Accepted
4       anything left                                         NeedsReview
======  ====================================================  ===========

A step-2/3b rule whose measurement is missing sends the class to review
with rule id ``<rule>:MissingMeasurement``.

With ``veto_agreed`` on (the default) a measurement that is present and
violates its step-2 threshold also overrides rule 1a, so an agreed ST at
95 bpm is Rejected by 2a. Turning it off gives the strict 1 -> 2 order.
"""

import csv
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .labels import CLASSES, N_CLASSES

ACCEPTED, REJECTED, REVIEW = "Accepted", "Rejected", "NeedsReview"
RULES = ("absent", "1a", "1b", "2a", "2b", "2c", "2d", "3a", "3b", "4")
SOURCES = ("medical", "unig", "minnesota")


@dataclass
class Measurements:
    heart_rate: float = math.nan  # bpm
    pr_interval: float = math.nan  # ms
    qrs_duration: float = math.nan  # ms
    nn_sd: float = math.nan  # same unit as ConsolidationConfig.nn_sd_threshold

    def __post_init__(self):
        for name in ("heart_rate", "pr_interval", "qrs_duration", "nn_sd"):
            v = float(getattr(self, name))
            if v < 0:
                raise InputError(f"measurement {name} must be >= 0, got {v}")
            setattr(self, name, v)


@dataclass
class ConsolidationConfig:
    st_min_hr: float = 100.0
    sb_max_hr: float = 50.0
    bbb_min_qrs: float = 115.0
    avb_min_pr: float = 190.0
    nn_sd_threshold: float = 646.0
    veto_agreed: bool = True


@dataclass
class AnnotationInputs:
    medical: np.ndarray
    unig: np.ndarray
    minnesota: np.ndarray
    measurements: Measurements = field(default_factory=Measurements)
    missing_sources: tuple = ()

    @classmethod
    def from_sources(cls, measurements=None, **sources):
        """Build inputs from any subset of sources; absent ones become all-false."""
        vecs, missing = {}, []
        for name in SOURCES:
            v = sources.get(name)
            if v is None:
                missing.append(name)
                v = np.zeros(N_CLASSES, dtype=bool)
            vecs[name] = np.asarray(v, dtype=bool)
        return cls(measurements=measurements or Measurements(), missing_sources=tuple(missing), **vecs)


@dataclass(frozen=True)
class Decision:
    decision: str
    rule: str


def _decide(cls, m, u, n, meas, cfg):
    if not (m or u or n):
        return Decision(REJECTED, "absent")
    checks = {
        "ST": ("2a", "heart_rate", lambda v: v < cfg.st_min_hr),
        "SB": ("2b", "heart_rate", lambda v: v > cfg.sb_max_hr),
        "RBBB": ("2c", "qrs_duration", lambda v: v < cfg.bbb_min_qrs),
        "LBBB": ("2c", "qrs_duration", lambda v: v < cfg.bbb_min_qrs),
        "1dAVb": ("2d", "pr_interval", lambda v: v < cfg.avb_min_pr),
    }
    if m and (u or n):
        if cfg.veto_agreed and cls in checks:
            rule, attr, violated = checks[cls]
            value = getattr(meas, attr)
            if not math.isnan(value) and violated(value):
                return Decision(REJECTED, rule)
        return Decision(ACCEPTED, "1a")
    if (u != n) and not m:
        return Decision(REJECTED, "1b")
    # left: both automatic sources without medical, or medical alone
    if cls in checks:
        rule, attr, violated = checks[cls]
        value = getattr(meas, attr)
        if math.isnan(value):
            return Decision(REVIEW, rule + ":MissingMeasurement")
        if violated(value):
            return Decision(REJECTED, rule)
    if m and cls in ("RBBB", "1dAVb", "SB", "ST"):
        return Decision(ACCEPTED, "3a")
    if m and cls == "AF":
        if math.isnan(meas.nn_sd):
            return Decision(REVIEW, "3b:MissingMeasurement")
        if meas.nn_sd > cfg.nn_sd_threshold:
            return Decision(ACCEPTED, "3b")
    return Decision(REVIEW, "4")


def consolidate(inputs, config=None):
    """Per-class :class:`Decision` list in class order."""
    cfg = config or ConsolidationConfig()
    return [
        _decide(c, bool(inputs.medical[i]), bool(inputs.unig[i]), bool(inputs.minnesota[i]),
                inputs.measurements, cfg)
        for i, c in enumerate(CLASSES)
    ]


@dataclass
class BatchResult:
    rows: list  # (exam_id, class, decision, rule)
    counters: Counter

    @property
    def review_queue(self):
        return [r for r in self.rows if r[2] == REVIEW]

    def labels(self):
        """exam_id -> accepted LabelVector (review items count as absent)."""
        out = {}
        for exam_id, cls, decision, _ in self.rows:
            vec = out.setdefault(exam_id, np.zeros(N_CLASSES, dtype=bool))
            vec[CLASSES.index(cls)] = decision == ACCEPTED
        return out


def batch_consolidate(stream, config=None):
    """Consolidate ``(exam_id, AnnotationInputs)`` pairs, keeping input order."""
    rows, counters = [], Counter()
    for exam_id, inputs in stream:
        for cls, d in zip(CLASSES, consolidate(inputs, config)):
            rows.append((exam_id, cls, d.decision, d.rule))
            counters[d.rule] += 1
    return BatchResult(rows, counters)


OUTCOME_HEADER = ("exam_id", "class", "decision", "fired_rule")


def write_outcomes(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(OUTCOME_HEADER)
        w.writerows(rows)


def write_counters(path, counters):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("fired_rule", "count"))
        for rule in sorted(counters):
            w.writerow((rule, counters[rule]))
