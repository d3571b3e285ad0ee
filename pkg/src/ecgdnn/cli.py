"""Batch command line: ``ecgdnn [--seed N] [--config FILE] [--out DIR] <command> ...``.

Config files hold ``section.field=value`` lines. Sections: ``arch``
(ArchitectureConfig), ``train`` (TrainConfig), ``consolidate``
(ConsolidationConfig), ``synth``, ``evaluate`` and ``textlabel`` (options
defined below). Every run writes ``run_manifest.json`` into the output
directory.

Exit codes: 0 success, 2 usage or input error, 3 internal error.
"""

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from . import dataset as ds
from . import evalstats as es
from .consolidate import AnnotationInputs, ConsolidationConfig, Measurements, batch_consolidate
from .errors import CorruptCheckpoint, EcgError, InputError, InvalidSplit, UnsupportedVersion
from .labels import CLASSES
from .model import ArchitectureConfig
from .train import TrainConfig

log = logging.getLogger("ecgdnn")

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3


@dataclass
class SynthOptions:
    noise_std: float = 0.02
    rr_jitter: float = 0.03
    exams_per_patient: int = 1
    duration_min: float = 10.0
    duration_max: float = 10.0
    sampling_rate: int = 400


@dataclass
class EvalOptions:
    n_bootstrap: int = 0
    hr_margin: float = 5.0
    figures: bool = True


@dataclass
class TextOptions:
    threshold: float = 0.5
    negation_window: int = 3


def default_sections():
    return {
        "arch": ArchitectureConfig(),
        "train": TrainConfig(),
        "consolidate": ConsolidationConfig(),
        "synth": SynthOptions(),
        "evaluate": EvalOptions(),
        "textlabel": TextOptions(),
    }


class Run:
    """Output directory, effective config and manifest bookkeeping for one command."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.seed = int(args.seed)
        overrides = {}
        if args.config:
            path = Path(args.config)
            if not path.is_file():
                raise InputError(f"config file not found: {path}")
            try:
                overrides = cfgmod.parse_overrides(path.read_text().splitlines())
            except ValueError as exc:
                raise InputError(f"{path}: {exc}") from None
        try:
            self.sections = cfgmod.apply_overrides(default_sections(), overrides)
        except (KeyError, ValueError) as exc:
            raise InputError(f"config: {exc}") from None
        self.inputs = {}
        self.outputs = []
        self.seeds = {}

    def sub_seed(self, purpose):
        s = cfgmod.derive_seed(self.seed, purpose)
        self.seeds[purpose] = s
        return s

    def record_input(self, name, path):
        path = Path(path)
        if path.is_dir():
            self.inputs[name] = {p.name: ds.file_digest(p) for p in sorted(path.iterdir()) if p.is_file()}
        elif path.is_file():
            self.inputs[name] = ds.file_digest(path)
        else:
            raise InputError(f"{name}: path not found: {path}")

    def wrote(self, *paths):
        self.outputs.extend(str(Path(p).relative_to(self.out)) if Path(p).is_relative_to(self.out)
                            else str(p) for p in paths)

    def write_manifest(self):
        flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(self.args).items()
                 if k not in ("func",)}
        manifest = {
            "tool_version": __version__,
            "command": self.args.command,
            "flags": flags,
            "seed": self.seed,
            "derived_seeds": self.seeds,
            "config": {k: dataclasses.asdict(v) for k, v in self.sections.items()},
            "inputs": self.inputs,
            "outputs": self.outputs,
        }
        path = self.out / "run_manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))


# -- commands ------------------------------------------------------------------------

def parse_prevalence(spec):
    """``"SB=0.2,ST=0.1"`` -> dict; ``None`` or ``"balanced"`` -> generator default."""
    if spec is None or spec == "balanced":
        return None
    out = {}
    for part in spec.split(","):
        if "=" not in part:
            raise InputError(f"prevalence entry {part!r} must look like CLASS=fraction")
        cls, val = (s.strip() for s in part.split("=", 1))
        if cls not in CLASSES:
            raise InputError(f"unknown class {cls!r} in prevalence; known: {', '.join(CLASSES)}")
        try:
            out[cls] = float(val)
        except ValueError:
            raise InputError(f"prevalence for {cls} is not a number: {val!r}") from None
        if not 0 <= out[cls] <= 1:
            raise InputError(f"prevalence for {cls} outside [0, 1]")
    return out


def cmd_synth(run):
    from . import synth

    a, opt = run.args, run.sections["synth"]
    if a.n < 0:
        raise InputError("--n must be non-negative")
    hr_range = None
    if a.hr_range:
        try:
            lo, hi = (float(v) for v in a.hr_range.split(","))
        except ValueError:
            raise InputError("--hr-range must look like LO,HI") from None
        hr_range = (lo, hi)
    try:
        recs = synth.generate_corpus(
            a.n, parse_prevalence(a.prevalence), seed=run.sub_seed("synth"),
            noise_std=opt.noise_std, sampling_rates=(opt.sampling_rate,),
            durations=(opt.duration_min, opt.duration_max), exams_per_patient=opt.exams_per_patient,
            rr_jitter=opt.rr_jitter, heart_rate_range=hr_range, id_prefix=a.id_prefix)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    ds.write_dataset(run.out, [r.record for r in recs])
    ids = [r.record.exam_id for r in recs]
    ds.write_labels(run.out / ds.LABELS_CSV, ids, np.array([r.labels for r in recs]).reshape(-1, len(CLASSES)))
    ds.write_measurements(run.out / ds.MEASUREMENTS_CSV, ids, [r.measurements for r in recs])
    rng = np.random.default_rng(run.sub_seed("reports"))
    with open(run.out / "reports.csv", "w", newline="") as fh:
        import csv

        w = csv.writer(fh)
        w.writerow(("exam_id", "text"))
        for r in recs:
            w.writerow((r.record.exam_id, synth.synth_report(r.labels, rng)))
    run.wrote(run.out / ds.MANIFEST, run.out / ds.TRACINGS, run.out / ds.LABELS_CSV,
              run.out / ds.MEASUREMENTS_CSV, run.out / "reports.csv")
    log.info("wrote %d records to %s", len(recs), run.out)


def _load_split(data_dir, labels_path=None):
    """(records, network inputs, labels aligned to the manifest order)."""
    from .signal import preprocess_batch

    entries = ds.read_manifest(data_dir)
    records = ds.load_records(data_dir, entries)
    ids = [r.exam_id for r in records]
    lab_ids, labels = ds.read_labels(labels_path or Path(data_dir) / ds.LABELS_CSV)
    y = ds.align(ids, lab_ids, labels, "labels")
    return records, preprocess_batch(records), y


def cmd_train(run):
    from . import model as M
    from . import train as T

    a = run.args
    run.record_input("data", a.data)
    records, x, y = _load_split(a.data)
    ids = [r.exam_id for r in records]
    tcfg = dataclasses.replace(run.sections["train"], rng_seed=run.sub_seed("train"))
    if a.split == "overfit":
        tr = va = T.Split(x, y.astype(np.float32), ids)
        tcfg = dataclasses.replace(tcfg, allow_overlap=True)
        assignment = {e: "train+val" for e in ids}
    elif a.split in T.SPLIT_MODES:
        try:
            fr = tuple(float(v) for v in a.fractions.split(","))
        except ValueError:
            raise InputError(f"--fractions must be comma-separated numbers, got {a.fractions!r}") from None
        acquired = [e.get("acquired", i) for i, e in enumerate(ds.read_manifest(a.data))]
        parts = T.split_dataset([r.patient_id for r in records], a.split, fr, run.sub_seed("split"), acquired)
        names = ("train", "val", "test")[:len(parts)]
        if len(parts) < 2 or any(len(p) == 0 for p in parts[:2]):
            raise InputError("--fractions must give non-empty train and validation parts")
        tr, va = (T.Split(x[p], y[p].astype(np.float32), [ids[i] for i in p]) for p in parts[:2])
        assignment = {ids[i]: n for n, p in zip(names, parts) for i in p}
    else:
        if not a.val:
            raise InputError("--split external needs --val DATASET")
        run.record_input("val", a.val)
        vrec, vx, vy = _load_split(a.val)
        tr = T.Split(x, y.astype(np.float32), ids)
        va = T.Split(vx, vy.astype(np.float32), [r.exam_id for r in vrec])
        assignment = {**{e: "train" for e in ids}, **{e: "val" for e in va.ids}}
    model = M.build(run.sections["arch"], rng_seed=run.sub_seed("init"))
    model, history = T.fit(model, tr, va, tcfg)
    ckpt = run.out / "model.ckpt"
    M.save(model, ckpt)
    history.write_csv(run.out / "train_log.csv")
    with open(run.out / "split.csv", "w") as fh:
        fh.write("exam_id,part\n")
        fh.writelines(f"{e},{p}\n" for e, p in assignment.items())
    run.wrote(ckpt, run.out / "train_log.csv", run.out / "split.csv")


def cmd_predict(run):
    from . import model as M

    a = run.args
    run.record_input("checkpoint", a.checkpoint)
    run.record_input("data", a.data)
    model = M.load(a.checkpoint)
    entries = ds.read_manifest(a.data)
    if a.subset:
        run.record_input("subset", a.subset)
        keep = {line.split(",")[0] for line in Path(a.subset).read_text().splitlines()[1:]
                if line.strip() and (a.part is None or line.rstrip().split(",")[-1] == a.part)}
        entries = [e for e in entries if str(e["exam_id"]) in keep]
    from .signal import preprocess_batch

    records = ds.load_records(a.data, entries)
    probs = model.predict(preprocess_batch(records), batch_size=a.batch_size)
    ids = [r.exam_id for r in records]
    ds.write_scores(run.out / "scores.csv", ids, probs)
    ds.write_labels(run.out / "predicted_labels.csv", ids, es.apply_thresholds(probs, model.thresholds))
    run.wrote(run.out / "scores.csv", run.out / "predicted_labels.csv")


def cmd_evaluate(run):
    from . import report as R

    a, opt = run.args, run.sections["evaluate"]
    run.record_input("scores", a.scores)
    run.record_input("truth", a.truth)
    ids, probs = ds.read_scores(a.scores)
    t_ids, truth = ds.read_labels(a.truth)
    truth = ds.align(ids, t_ids, truth, "truth")
    if a.checkpoint and a.threshold is not None:
        raise InputError("use either --checkpoint or --threshold, not both")
    thresholds = None
    if a.checkpoint:
        from . import model as M

        run.record_input("checkpoint", a.checkpoint)
        thresholds = M.load(a.checkpoint).thresholds
    elif a.threshold is not None:
        thresholds = np.full(len(CLASSES), a.threshold)
    n_boot = a.bootstrap if a.bootstrap is not None else opt.n_bootstrap
    rep = R.build_report(probs, truth, thresholds, n_boot, run.sub_seed("bootstrap"))
    run.wrote(*R.write_report(rep, run.out, figures=opt.figures))
    if a.measurements:
        run.record_input("measurements", a.measurements)
        meas = ds.read_measurements(a.measurements)
        missing = [e for e in ids if e not in meas]
        if missing:
            raise InputError(f"measurements lack exam ids {missing[:5]}")
        pred = es.apply_thresholds(probs, rep.thresholds)
        for cls in a.hr_classes.split(","):
            hr = es.hr_vs_prediction_report(ids, [meas[e].heart_rate for e in ids], truth, pred, cls)
            run.wrote(*R.write_hr_report(hr, run.out, figures=opt.figures))
            log.info("%s: %d errors, %.2f within %g bpm of %g", cls, sum(not r[4] for r in hr.rows),
                     hr.errors_near_line(opt.hr_margin), opt.hr_margin, hr.line_bpm)
    for k, c in enumerate(CLASSES):
        log.info("%-6s P %.3f R %.3f S %.3f F1 %.3f", c, *rep.scores[k])


def cmd_consolidate(run):
    from .consolidate import write_counters, write_outcomes

    a = run.args
    sources = {}
    for name in ("medical", "unig", "minnesota"):
        path = getattr(a, name)
        if path:
            run.record_input(name, path)
            sources[name] = ds.read_labels(path)
    if not sources:
        raise InputError("give at least one of --medical, --unig, --minnesota")
    ref_name = next(iter(sources))
    ids = sources[ref_name][0]
    aligned = {n: ds.align(ids, s_ids, vals, n) for n, (s_ids, vals) in sources.items()}
    meas = {}
    if a.measurements:
        run.record_input("measurements", a.measurements)
        meas = ds.read_measurements(a.measurements)
    stream = ((e, AnnotationInputs.from_sources(meas.get(e, Measurements()),
                                                **{n: v[i] for n, v in aligned.items()}))
              for i, e in enumerate(ids))
    result = batch_consolidate(stream, run.sections["consolidate"])
    write_outcomes(run.out / "outcomes.csv", result.rows)
    write_outcomes(run.out / "review_queue.csv", result.review_queue)
    write_counters(run.out / "rule_counters.csv", result.counters)
    labels = result.labels()
    ds.write_labels(run.out / "consolidated_labels.csv", ids,
                    np.array([labels[e] for e in ids]).reshape(-1, len(CLASSES)))
    run.wrote(run.out / "outcomes.csv", run.out / "review_queue.csv", run.out / "rule_counters.csv",
              run.out / "consolidated_labels.csv")
    log.info("%d exams, %d items need review", len(ids), len(result.review_queue))


def cmd_textlabel(run):
    from . import textlabel as TL

    a, opt = run.args, run.sections["textlabel"]
    run.record_input("reports", a.reports)
    if a.rulebase:
        run.record_input("rulebase", a.rulebase)
    if a.stopwords:
        run.record_input("stopwords", a.stopwords)
    rb = TL.load_rulebase(a.rulebase)
    rb = dataclasses.replace(rb, threshold=opt.threshold, negation_window=opt.negation_window)
    stop = TL.load_stopwords(a.stopwords)
    rows = TL.read_reports(a.reports)
    labels = np.array([TL.label_report(text, rb, stop) for _, text in rows]).reshape(-1, len(CLASSES))
    ds.write_labels(run.out / "text_labels.csv", [e for e, _ in rows], labels)
    run.wrote(run.out / "text_labels.csv")


def cmd_compare(run):
    from . import report as R

    a = run.args
    raters = {}
    for spec in a.rater:
        if "=" not in spec:
            raise InputError(f"--rater {spec!r} must look like NAME=PATH")
        name, path = spec.split("=", 1)
        if name in raters:
            raise InputError(f"duplicate rater name {name!r}")
        run.record_input(f"rater:{name}", path)
        raters[name] = ds.read_labels(path)
    if len(raters) < 2 and not (len(raters) == 1 and a.self_check):
        raise InputError("compare needs at least two --rater entries")
    names = list(raters)
    ids = raters[names[0]][0]
    aligned = {n: ds.align(ids, r_ids, v, f"rater {n}") for n, (r_ids, v) in raters.items()}
    truth = None
    if a.truth:
        run.record_input("truth", a.truth)
        t_ids, t = ds.read_labels(a.truth)
        truth = ds.align(ids, t_ids, t, "truth")
    pairs = [(x, y) for i, x in enumerate(names) for y in names[i + 1:]]
    if a.self_check:
        pairs += [(n, n) for n in names]
    kappas = {(x, y): es.kappa(aligned[x], aligned[y]) for x, y in pairs}
    mcn = None
    if truth is not None:
        mcn = {(x, y): np.array([es.mcnemar(aligned[x][:, k] != truth[:, k],
                                            aligned[y][:, k] != truth[:, k])
                                 for k in range(len(CLASSES))])
               for x, y in pairs}
    run.wrote(*R.write_comparison(run.out, names, kappas, mcn))


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "consolidate": cmd_consolidate,
    "textlabel": cmd_textlabel,
    "compare": cmd_compare,
}


def build_parser():
    def global_flags(p, suppress):
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        p.add_argument("--seed", type=int, default=d(0), help="master seed (default 0)")
        p.add_argument("--config", default=d(None), help="file of section.field=value lines")
        p.add_argument("--out", default=d("out"), help="output directory (default ./out)")
        p.add_argument("-v", "--verbose", action="store_true", default=d(False))

    parser = argparse.ArgumentParser(prog="ecgdnn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    global_flags(common, suppress=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--prevalence", help="'balanced' (default) or CLASS=fraction,...")
    p.add_argument("--hr-range", help="LO,HI: sinus rhythm with uniform heart rate")
    p.add_argument("--id-prefix", default="S")

    p = sub.add_parser("train", parents=[common], help="train a model, write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("by_patient", "random", "chronological", "overfit", "external"),
                   default="by_patient")
    p.add_argument("--fractions", default="0.8,0.1,0.1", help="train,val[,test] fractions")
    p.add_argument("--val", help="validation dataset for --split external")

    p = sub.add_parser("predict", parents=[common], help="score a dataset with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--subset", help="split.csv from train; restricts the exams scored")
    p.add_argument("--part", help="part name within --subset, e.g. test")
    p.add_argument("--batch-size", type=int, default=32)

    p = sub.add_parser("evaluate", parents=[common], help="scores vs truth tables and figures")
    p.add_argument("--scores", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--checkpoint", help="use the checkpoint's thresholds")
    p.add_argument("--threshold", type=float, help="one fixed threshold for all classes")
    p.add_argument("--bootstrap", type=int, help="number of bootstrap resamples")
    p.add_argument("--measurements", help="measurements CSV for the heart-rate report")
    p.add_argument("--hr-classes", default="ST,SB")

    p = sub.add_parser("consolidate", parents=[common], help="merge annotation sources")
    p.add_argument("--medical")
    p.add_argument("--unig")
    p.add_argument("--minnesota")
    p.add_argument("--measurements")

    p = sub.add_parser("textlabel", parents=[common], help="labels from free-text reports")
    p.add_argument("--reports", required=True)
    p.add_argument("--rulebase")
    p.add_argument("--stopwords")

    p = sub.add_parser("compare", parents=[common], help="pairwise kappa and McNemar tables")
    p.add_argument("--rater", action="append", default=[], help="NAME=labels.csv (repeatable)")
    p.add_argument("--truth", help="reference labels; enables the McNemar table")
    p.add_argument("--self-check", action="store_true", help="also compare each rater with itself")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = Run(args)
        COMMANDS[args.command](run)
        run.write_manifest()
    except (InputError, InvalidSplit, CorruptCheckpoint, UnsupportedVersion, EcgError,
            FileNotFoundError, IsADirectoryError) as exc:
        print(f"ecgdnn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"ecgdnn {args.command}: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
