"""Independent reference implementations used as test oracles.

Written directly from the prose definitions, sharing no code with the package
beyond the domain types used to compare results.
"""

import itertools
import math

import numpy as np

from wsi_patterns.core import INDETERMINATE, HistologicPattern, SlideLabel

N_CANCER = 5
BENIGN = 5


def literal_aggregate(counts):
    """Drop benign and every class under 5% of all predictions, most frequent is
    predominant (lowest index on ties), the rest are minors."""
    total = sum(counts)
    if total == 0:
        return INDETERMINATE
    kept = [c for c in range(N_CANCER) if not counts[c] / total < 0.05]
    if not kept:
        return INDETERMINATE
    top = max(counts[c] for c in kept)
    predominant = min(c for c in kept if counts[c] == top)
    minors = frozenset(HistologicPattern(c) for c in kept if c != predominant)
    return SlideLabel(HistologicPattern(predominant), minors)


def literal_aggregate_arrays(counts):
    """Vectorized ``literal_aggregate`` over an (N, 6) integer array.

    Returns (predominant, minor_mask): predominant is -1 for Indeterminate,
    minor_mask has bit k set when class k is a minor.
    """
    counts = np.asarray(counts, dtype=np.int64)
    total = counts.sum(axis=1)
    safe = np.where(total == 0, 1, total)
    frac = counts[:, :N_CANCER] / safe[:, None]
    kept = ~(frac < 0.05) & (total[:, None] > 0)
    masked = np.where(kept, counts[:, :N_CANCER], -1)
    # argmax picks the first maximum, i.e. the lowest index
    predominant = np.argmax(masked, axis=1)
    predominant = np.where(kept.any(axis=1), predominant, -1)
    bits = (kept.astype(np.int64) << np.arange(N_CANCER)).sum(axis=1)
    own = np.where(predominant >= 0, 1 << np.maximum(predominant, 0), 0)
    return predominant, bits & ~own


def all_count_vectors(max_total, classes=6):
    """Every non-negative integer vector of length ``classes`` with sum <= max_total."""
    rows = np.arange(max_total + 1, dtype=np.int16)[:, None]
    for _ in range(classes - 1):
        sums = rows.sum(axis=1)
        reps = max_total + 1 - sums
        expanded = np.repeat(rows, reps, axis=0)
        starts = np.repeat(np.cumsum(reps) - reps, reps)
        nxt = (np.arange(reps.sum()) - starts).astype(np.int16)
        rows = np.concatenate([expanded, nxt[:, None]], axis=1)
    return rows


def label_code(label):
    if label.predominant is None:
        return -1, 0
    return int(label.predominant), sum(1 << int(m) for m in label.minors)


def brute_kappa(a, b):
    """Cohen's kappa from the contingency table definition."""
    cats = sorted(set(a) | set(b), key=repr)
    n = len(a)
    table = {(x, y): 0 for x in cats for y in cats}
    for x, y in zip(a, b):
        table[(x, y)] += 1
    po = sum(table[(c, c)] for c in cats) / n
    pe = sum((sum(table[(c, y)] for y in cats) / n) * (sum(table[(x, c)] for x in cats) / n) for c in cats)
    if pe == 1:
        return 1.0 if po == 1 else 0.0
    return (po - pe) / (1 - pe)


def brute_auc(scores, positives):
    pos = [s for s, p in zip(scores, positives) if p]
    neg = [s for s, p in zip(scores, positives) if not p]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p, q in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def welch_reference(x, y):
    """Welch statistic and dof from the textbook formulas."""
    mx, my = sum(x) / len(x), sum(y) / len(y)
    vx = sum((v - mx) ** 2 for v in x) / (len(x) - 1)
    vy = sum((v - my) ** 2 for v in y) / (len(y) - 1)
    se2 = vx / len(x) + vy / len(y)
    t = (mx - my) / math.sqrt(se2)
    dof = se2 ** 2 / ((vx / len(x)) ** 2 / (len(x) - 1) + (vy / len(y)) ** 2 / (len(y) - 1))
    return t, dof


def tile_positions(extent, window, stride):
    """Window origins along one axis by walking, with the last window pulled back to the edge."""
    out = []
    x = 0
    while x + window <= extent:
        out.append(x)
        x += stride
    if out[-1] + window != extent:
        out.append(extent - window)
    return out
