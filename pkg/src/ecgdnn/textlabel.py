"""Label extraction from free-text reports.

Three stages: normalise and drop stop-words to form 1-3 token n-grams,
score each class by the most confident association rule whose antecedent is
contained in the report, then disambiguate (negation scopes, mutually
exclusive classes, threshold).
"""

import json
import re
import unicodedata
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import InputError
from .labels import CLASSES, N_CLASSES

MAX_N = 3
_SENTENCE = re.compile(r"[.;:!?\n]+")
_NON_WORD = re.compile(r"[^0-9a-z]+")


def normalize(text):
    """Lowercase, fold accents and replace punctuation with spaces."""
    folded = unicodedata.normalize("NFKD", text)
    folded = "".join(ch for ch in folded if not unicodedata.combining(ch))
    return _NON_WORD.sub(" ", folded.lower()).strip()


def tokens(text):
    return normalize(text).split()


@dataclass(frozen=True)
class Rule:
    antecedent: frozenset
    cls: str
    confidence: float
    support: int = 0


@dataclass
class RuleBase:
    rules: list
    negations: tuple = ()
    exclusive_pairs: tuple = ()
    threshold: float = 0.5
    negation_window: int = 3
    version: int = 1

    def rules_for(self, cls):
        return [r for r in self.rules if r.cls == cls]


@dataclass(frozen=True)
class NgramSet:
    grams: frozenset
    tokens: tuple = ()  # content tokens, sentence-separated by None
    negated: frozenset = field(default_factory=frozenset)  # positions inside a negation scope


def load_stopwords(path=None):
    if path is None:
        text = resources.files("ecgdnn.data").joinpath("stopwords_pt.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return frozenset(normalize(w) for w in text.splitlines() if w.strip())


def load_rulebase(path=None):
    """Read a rule base: a JSON array of rules or an object with a ``rules`` array."""
    try:
        if path is None:
            raw = json.loads(resources.files("ecgdnn.data").joinpath("rulebase_pt.json").read_text("utf-8"))
        else:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read rule base {path}: {exc}") from None
    meta = raw if isinstance(raw, dict) else {"rules": raw}
    rules = []
    for i, r in enumerate(meta.get("rules", [])):
        try:
            ante = frozenset(" ".join(tokens(a)) for a in r["antecedent"])
            conf = float(r["confidence"])
            cls = r["class"]
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"rule {i}: {exc!r}") from None
        if cls not in CLASSES:
            raise InputError(f"rule {i}: unknown class {cls!r}")
        if not 0.0 <= conf <= 1.0:
            raise InputError(f"rule {i}: confidence {conf} outside [0, 1]")
        if not ante or "" in ante or any(len(a.split()) > MAX_N for a in ante):
            raise InputError(f"rule {i}: antecedent must be non-empty n-grams of at most {MAX_N} tokens")
        rules.append(Rule(ante, cls, conf, int(r.get("support", 0))))
    if not rules:
        raise InputError("rule base has no rules")
    return RuleBase(
        rules=rules,
        negations=tuple(" ".join(tokens(n)) for n in meta.get("negations", [])),
        exclusive_pairs=tuple(tuple(p) for p in meta.get("exclusive_pairs", [])),
        threshold=float(meta.get("threshold", 0.5)),
        negation_window=int(meta.get("negation_window", 3)),
        version=int(meta.get("version", 1)),
    )


def extract_ngrams(text, stopwords, negations=(), window=3):
    """Content-token n-grams (n = 1..3) of a report, never spanning sentences.

    Negation markers are removed from the stream and open a scope over the
    next ``window`` content tokens of the same sentence.
    """
    neg_seqs = [tuple(n.split()) for n in negations if n]
    grams, stream, negated = set(), [], set()
    for sentence in _SENTENCE.split(text):
        raw = tokens(sentence)
        content, scope_left = [], 0
        i = 0
        while i < len(raw):
            hit = next((s for s in neg_seqs if tuple(raw[i:i + len(s)]) == s), None)
            if hit:
                scope_left = window
                i += len(hit)
                continue
            tok = raw[i]
            i += 1
            if tok in stopwords:
                continue
            if scope_left > 0:
                negated.add(len(stream) + len(content))
                scope_left -= 1
            content.append(tok)
        for n in range(1, MAX_N + 1):
            for j in range(len(content) - n + 1):
                grams.add(" ".join(content[j:j + n]))
        stream.extend(content)
        stream.append(None)
    return NgramSet(frozenset(grams), tuple(stream), frozenset(negated))


def classify_lazy(ngrams, rulebase):
    """Per-class score: highest confidence among rules contained in the report."""
    scores = np.zeros(N_CLASSES)
    for r in rulebase.rules:
        if r.antecedent <= ngrams.grams:
            k = CLASSES.index(r.cls)
            scores[k] = max(scores[k], r.confidence)
    return scores


def _affirmed(gram, ngrams):
    """True if ``gram`` occurs at least once outside every negation scope."""
    parts = gram.split()
    toks = ngrams.tokens
    for i in range(len(toks) - len(parts) + 1):
        if list(toks[i:i + len(parts)]) == parts:
            if not any(j in ngrams.negated for j in range(i, i + len(parts))):
                return True
    return False


def disambiguate(scores, ngrams, rulebase):
    """Final LabelVector from class scores."""
    scores = np.asarray(scores, dtype=float).copy()
    for k, cls in enumerate(CLASSES):
        if scores[k] == 0 or not ngrams.negated:
            continue
        best = 0.0
        for r in rulebase.rules_for(cls):
            if r.antecedent <= ngrams.grams and all(_affirmed(g, ngrams) for g in r.antecedent):
                best = max(best, r.confidence)
        scores[k] = best
    for a, b in rulebase.exclusive_pairs:
        i, j = CLASSES.index(a), CLASSES.index(b)
        if scores[i] > 0 and scores[j] > 0:
            # equal scores keep the class listed first in the pair
            if scores[j] > scores[i]:
                scores[i] = 0.0
            else:
                scores[j] = 0.0
    return scores >= rulebase.threshold


def label_report(text, rulebase, stopwords):
    grams = extract_ngrams(text, stopwords, rulebase.negations, rulebase.negation_window)
    return disambiguate(classify_lazy(grams, rulebase), grams, rulebase)


def read_reports(path):
    """(exam_id, text) rows from a two-column CSV with header ``exam_id,text``."""
    import csv

    out = []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read reports {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return out
        if [h.strip() for h in header] != ["exam_id", "text"]:
            raise InputError(f"{path}: header must be exam_id,text")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise InputError(f"{path}: malformed row {line}: expected 2 columns")
            out.append((row[0], row[1]))
    return out
