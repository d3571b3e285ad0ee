"""Shared test oracles."""

import numpy as np


def fd_grad(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at ``x`` (float64)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        gf[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    """Max relative error, normalised by the larger gradient magnitude."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return float(np.abs(a - b).max() / scale)


def table2_fixture(st_positives=37):
    """827 exams whose 0.5-thresholded scores give the reconstructed published counts.

    Counts come from searching all confusion matrices with the published
    positive totals; ST uses ``st_positives`` because no matrix with the
    tabulated total reproduces its printed row.
    """
    from ecgdnn import evalstats as es
    from ecgdnn.labels import CLASSES

    n = es.TEST_SET_SIZE
    rng = np.random.default_rng(0)
    truth = np.zeros((n, len(CLASSES)), bool)
    probs = np.zeros((n, len(CLASSES)))
    counts = {}
    for k, c in enumerate(CLASSES):
        n_pos = st_positives if c == "ST" else es.TEST_POSITIVES[c]
        (cm,) = es.reconcile_counts(es.PUBLISHED_TEST_SCORES[c], n_pos)
        counts[c] = cm
        t = np.r_[np.ones(cm.tp + cm.fn, bool), np.zeros(cm.fp + cm.tn, bool)]
        p = np.r_[np.ones(cm.tp, bool), np.zeros(cm.fn, bool), np.ones(cm.fp, bool), np.zeros(cm.tn, bool)]
        perm = rng.permutation(n)
        truth[:, k] = t[perm]
        probs[:, k] = np.where(p[perm], 0.75, 0.25)
    return [f"t{i:04d}" for i in range(n)], truth, probs, counts
