"""Adam training loop with plateau learning-rate decay and best-epoch selection."""

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .config import derive_seed
from .errors import InvalidSplit

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr0: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 50
    plateau_patience: int = 7
    lr_decay_factor: float = 0.1
    rng_seed: int = 0
    allow_overlap: bool = False

    def validate(self):
        for name in ("lr0", "beta1", "beta2", "eps", "batch_size", "max_epochs", "plateau_patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.lr_decay_factor < 1:
            raise ValueError("lr_decay_factor must be in (0, 1)")
        return self


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, g in grads.items():
        p = params[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
    return params, state


def lr_schedule(val_losses, current_lr, patience=7, factor=0.1):
    """Learning rate for the next epoch given every validation loss so far.

    An epoch improves when its loss is strictly below the best seen. After
    ``patience`` consecutive non-improving epochs the rate is multiplied by
    ``factor`` and the count starts over.
    """
    best, wait, fired = math.inf, 0, False
    for loss in val_losses:
        fired = False
        if loss < best:
            best, wait = loss, 0
        else:
            wait += 1
            if wait >= patience:
                wait, fired = 0, True
    return current_lr * factor if fired else current_lr


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)  # dicts: epoch, train_loss, val_loss, lr, seconds

    @property
    def val_losses(self):
        return [e["val_loss"] for e in self.epochs]

    @property
    def lrs(self):
        return [e["lr"] for e in self.epochs]

    @property
    def best_epoch(self):
        if not self.epochs:
            return None
        return int(np.argmin(self.val_losses))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("epoch", "train_loss", "val_loss", "lr", "seconds"))
            for e in self.epochs:
                w.writerow((e["epoch"], repr(e["train_loss"]), repr(e["val_loss"]),
                            repr(e["lr"]), f"{e['seconds']:.3f}"))


@dataclass
class Split:
    """Network inputs ``x`` (N, 12, 4096), binary targets ``y`` (N, 6) and exam ids."""
    x: np.ndarray
    y: np.ndarray
    ids: list = None

    def __post_init__(self):
        if self.ids is None:
            self.ids = [str(i) for i in range(len(self.x))]
        if len(self.x) != len(self.y) or len(self.ids) != len(self.x):
            raise InvalidSplit("inputs, targets and ids differ in length")

    def __len__(self):
        return len(self.x)


SPLIT_MODES = ("random", "by_patient", "chronological")


def split_dataset(patient_ids, mode="by_patient", fractions=(0.9, 0.05, 0.05), seed=0, order=None):
    """Index arrays, one per fraction.

    ``random`` shuffles exams; ``by_patient`` shuffles patients and keeps all
    exams of a patient in one part; ``chronological`` sorts by ``order``
    (acquisition order, defaulting to input order). Parts are filled greedily
    up to ``round(cumsum(fractions) * n)`` exams.
    """
    if mode not in SPLIT_MODES:
        raise InvalidSplit(f"unknown split mode {mode!r}; choose from {SPLIT_MODES}")
    patient_ids = np.asarray(patient_ids)
    n = len(patient_ids)
    fr = np.asarray(fractions, dtype=float)
    if fr.ndim != 1 or len(fr) == 0 or np.any(fr < 0) or not np.isclose(fr.sum(), 1.0):
        raise InvalidSplit(f"fractions must be non-negative and sum to 1, got {fractions}")
    rng = np.random.default_rng(derive_seed(seed, "split"))
    if mode == "by_patient":
        _, groups = np.unique(patient_ids, return_inverse=True)
        n_groups = groups.max() + 1 if n else 0
        unit_order = rng.permutation(n_groups)
    else:
        groups = np.arange(n)
        if mode == "random":
            unit_order = rng.permutation(n)
        else:
            key = np.arange(n) if order is None else np.asarray(order)
            unit_order = np.argsort(key, kind="stable")
    sizes = np.bincount(groups, minlength=len(unit_order)) if n else np.zeros(0, int)
    targets = np.round(np.cumsum(fr) * n)
    part_of = np.empty(len(unit_order), dtype=int)
    filled, part = 0, 0
    for u in unit_order:
        while part < len(fr) - 1 and filled >= targets[part]:
            part += 1
        part_of[u] = part
        filled += sizes[u]
    labels = part_of[groups] if n else np.zeros(0, int)
    return [np.flatnonzero(labels == k) for k in range(len(fr))]


def evaluate_loss(model, split, batch_size=32):
    """Infer-mode mean cross-entropy and probabilities over a split."""
    probs = np.empty(split.y.shape, dtype=np.float64)
    total = 0.0
    for start in range(0, len(split), batch_size):
        xb = split.x[start:start + batch_size]
        yb = split.y[start:start + batch_size]
        z, _ = model.logits(xb, "infer")
        loss, _ = nn.bce_loss(z, yb)
        total += loss * len(xb)
        probs[start:start + batch_size] = nn.sigmoid(z)
    return total / len(split), probs


def _snapshot(model):
    return ({k: v.copy() for k, v in model.params.items()},
            {k: v.copy() for k, v in model.state.items()})


def fit(model, train_set, val_set, config=None, on_epoch=None):
    """Train ``model`` in place and return it restored to its best validation epoch.

    The returned model carries per-class max-F1 thresholds selected on the
    validation predictions of the best epoch. ``on_epoch(entry, model)`` runs
    after every epoch with the log entry plus that epoch's ``val_probs``; a
    truthy return value stops training there.
    """
    from .evalstats import select_thresholds_from_scores

    cfg = (config or TrainConfig()).validate()
    if len(train_set) == 0 or len(val_set) == 0:
        raise InvalidSplit("train and validation splits must be non-empty")
    if not cfg.allow_overlap and set(train_set.ids) & set(val_set.ids):
        raise InvalidSplit("train and validation splits share exam ids")
    shuffle_rng = np.random.default_rng(derive_seed(cfg.rng_seed, "shuffle"))
    dropout_rng = np.random.default_rng(derive_seed(cfg.rng_seed, "dropout"))
    state = AdamState()
    lr = cfg.lr0
    history = TrainLog()
    best = (math.inf, None, None)
    y_train = train_set.y.astype(model.dtype)
    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(train_set))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            if len(idx) < 2:
                continue  # a single-record batch cannot be normalised
            z, tape = model.logits(train_set.x[idx], "train", dropout_rng)
            loss, grad = nn.bce_loss(z, y_train[idx])
            grads = model.backward(tape, grad)
            adam_step(model.params, grads, state, lr, cfg.beta1, cfg.beta2, cfg.eps)
            total += loss * len(idx)
        val_loss, val_probs = evaluate_loss(model, val_set, cfg.batch_size)
        entry = {"epoch": epoch, "train_loss": total / len(order), "val_loss": val_loss,
                 "lr": lr, "seconds": time.perf_counter() - t0}
        history.epochs.append(entry)
        log.info("epoch %d train %.4f val %.4f lr %.1e (%.1fs)", epoch, entry["train_loss"],
                 val_loss, lr, entry["seconds"])
        if val_loss < best[0]:
            best = (val_loss, _snapshot(model), val_probs)
        if on_epoch is not None and on_epoch({**entry, "val_probs": val_probs}, model):
            log.info("stopped by callback after epoch %d", epoch)
            break
        lr = lr_schedule(history.val_losses, lr, cfg.plateau_patience, cfg.lr_decay_factor)
    params, bn_state = best[1]
    model.params.update(params)
    model.state.update(bn_state)
    model.thresholds = select_thresholds_from_scores(best[2], val_set.y)
    model.meta.update({"epoch": history.best_epoch, "val_loss": best[0], "rng_seed": cfg.rng_seed})
    return model, history
