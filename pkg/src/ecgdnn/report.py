"""EvalReport assembly plus its JSON / CSV / figure outputs."""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evalstats as es
from .labels import CLASSES


@dataclass
class EvalReport:
    confusion: list
    scores: np.ndarray  # (6, 4)
    thresholds: np.ndarray
    micro_ap: float
    curves: list
    bootstrap: es.BootstrapResult = None
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        out = {
            "micro_ap": self.micro_ap,
            "classes": {
                c: {
                    "threshold": float(self.thresholds[k]),
                    **{n: float(v) for n, v in zip(es.SCORE_NAMES, self.scores[k])},
                    **{n: getattr(self.confusion[k], n) for n in ("tp", "fp", "tn", "fn")},
                    "average_precision": es.average_precision(self.curves[k]),
                }
                for k, c in enumerate(CLASSES)
            },
        }
        if self.bootstrap is not None:
            out["bootstrap"] = {
                "n_resamples": int(self.bootstrap.samples.shape[0]),
                "quantile_levels": list(self.bootstrap.quantile_levels),
            }
        out.update(self.extras)
        return out


def build_report(probs, truth, thresholds=None, n_bootstrap=0, seed=0):
    """Scores at the given thresholds, or at max-F1 thresholds chosen on this data."""
    probs = np.asarray(probs, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    curves = [es.pr_curve(probs[:, k], truth[:, k]) for k in range(len(CLASSES))]
    if thresholds is None:
        thresholds = es.select_thresholds(curves)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    pred = es.apply_thresholds(probs, thresholds)
    cms = es.confusion(truth, pred)
    table = np.array([es.scores(cm) for cm in cms])
    boot = es.bootstrap(truth, pred, n_bootstrap, seed) if n_bootstrap else None
    return EvalReport(cms, table, thresholds, es.micro_ap(probs, truth), curves, boot)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_report(report, out_dir, figures=True):
    """Write every table (and, optionally, figures); returns the list of paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name, header, rows):
        _write_rows(out / name, header, rows)
        written.append(out / name)

    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
    written.append(out / "report.json")
    emit("scores.csv", ("class",) + es.SCORE_NAMES + ("threshold",),
         [(c, *(f"{v:.3f}" for v in report.scores[k]), repr(float(report.thresholds[k])))
          for k, c in enumerate(CLASSES)])
    emit("confusion_matrices.csv", ("class", "true_label", "predicted_not_present", "predicted_present"),
         [row for k, c in enumerate(CLASSES) for row in (
             (c, "not present", report.confusion[k].tn, report.confusion[k].fp),
             (c, "present", report.confusion[k].fn, report.confusion[k].tp))])
    emit("pr_curves.csv", ("class", "threshold", "precision", "recall"),
         [(c, repr(float(t)), repr(float(p)), repr(float(r)))
          for k, c in enumerate(CLASSES)
          for t, p, r in zip(report.curves[k].thresholds, report.curves[k].precision, report.curves[k].recall)])
    if report.bootstrap is not None:
        b = report.bootstrap
        emit("bootstrap_quantiles.csv", ("class", "score") + tuple(f"q{q:g}" for q in b.quantile_levels),
             [(c, s, *(repr(float(b.quantiles[qi, k, si])) for qi in range(len(b.quantile_levels))))
              for k, c in enumerate(CLASSES) for si, s in enumerate(es.SCORE_NAMES)])
    if figures:
        from . import plotting

        written.append(plotting.plot_pr_curves(report, out / "pr_curves.png"))
        if report.bootstrap is not None:
            written.append(plotting.plot_bootstrap(report.bootstrap, out / "bootstrap_f1.png"))
    return written


def write_hr_report(hr, out_dir, figures=True):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"hr_vs_prediction_{hr.cls}.csv"
    _write_rows(path, ("exam_id", "heart_rate", "true", "predicted", "correct", "consensus_line_bpm"),
                [(e, repr(h), int(t), int(p), int(ok), hr.line_bpm) for e, h, t, p, ok in hr.rows])
    written = [path]
    if figures:
        from . import plotting

        written.append(plotting.plot_hr_vs_prediction(hr, out / f"hr_vs_prediction_{hr.cls}.png"))
    return written


def write_comparison(out_dir, names, kappas, mcnemar=None):
    """Pairwise kappa (and McNemar p-value) tables, one row per rater pair."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = list(kappas)
    paths = [out / "kappa.csv"]
    _write_rows(paths[0], ("pair",) + CLASSES,
                [(f"{a} x {b}", *(f"{v:.6f}" for v in kappas[(a, b)])) for a, b in pairs])
    if mcnemar is not None:
        paths.append(out / "mcnemar.csv")
        _write_rows(paths[1], ("pair",) + CLASSES,
                    [(f"{a} x {b}", *(repr(float(v)) for v in mcnemar[(a, b)])) for a, b in pairs])
    return paths
