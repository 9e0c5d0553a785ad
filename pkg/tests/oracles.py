"""Brute-force reference implementations, deliberately sharing no code with
the package. Slow on purpose: they follow the definitions literally."""
import itertools
import math
from functools import lru_cache

import numpy as np


def der_oracle_ms(ref, hyp, collar_s):
    """DER on a 1 ms grid. Segments are (channel, label, start_s, end_s) with
    millisecond-aligned boundaries, so the grid is exact for them.

    Millisecond ``[k, k+1)`` is scored unless it lies within ``collar_s`` of
    a reference speech-region boundary of any channel. Returns None when no
    reference speech is scored.
    """
    to_ms = lambda t: int(round(t * 1000))  # noqa: E731
    channels = sorted({s[0] for s in ref} | {s[0] for s in hyp})
    c = to_ms(collar_s)
    n = max([to_ms(s[3]) for s in list(ref) + list(hyp)] + [0]) + c + 2

    def mask(segs, ch):
        m = np.zeros(n, dtype=bool)
        for s in segs:
            if s[0] == ch:
                m[to_ms(s[2]):to_ms(s[3])] = True
        return m

    R = np.array([mask(ref, ch) for ch in channels]).reshape(len(channels), n)
    H = np.array([mask(hyp, ch) for ch in channels]).reshape(len(channels), n)
    excluded = np.zeros(n, dtype=bool)
    if c > 0:
        for m in R:
            prev = np.concatenate(([False], m[:-1]))
            for k in np.flatnonzero(m != prev):
                excluded[max(0, k - c):k + c] = True
    keep = ~excluded
    n_ref = R[:, keep].sum(axis=0)
    n_hyp = H[:, keep].sum(axis=0)
    n_cor = (R & H)[:, keep].sum(axis=0)
    scored = int(n_ref.sum())
    if scored == 0:
        return None
    err = (np.maximum(n_ref - n_hyp, 0) + np.maximum(n_hyp - n_ref, 0)
           + np.minimum(n_ref, n_hyp) - n_cor).sum()
    return 100.0 * float(err) / scored


def ctc_collapse(path, blank):
    return tuple(k for k, _ in itertools.groupby(path) if k != blank)


def ctc_nll_enum(log_probs, labels, blank):
    """-log sum over every length-T path whose collapse equals ``labels``."""
    T = len(log_probs)
    V = len(log_probs[0]) if T else 0
    labels = tuple(labels)
    terms = []
    for path in itertools.product(range(V), repeat=T):
        if ctc_collapse(path, blank) == labels:
            terms.append(sum(log_probs[t][path[t]] for t in range(T)))
    if not terms:
        return math.inf
    m = max(terms)
    return -(m + math.log(sum(math.exp(x - m) for x in terms)))


def greedy_oracle(posteriors, blank):
    best = [max(range(len(row)), key=lambda j: (row[j], -j)) for row in posteriors]
    return ctc_collapse(best, blank)


def edit_distance_oracle(a, b):
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def per_oracle(ref, hyp):
    return 100.0 * edit_distance_oracle(ref, hyp) / len(ref)


def macro_f1_oracle(ref, hyp, n_classes, exclude=()):
    scores = []
    for c in range(n_classes):
        if c in exclude:
            continue
        tp = sum(1 for r, h in zip(ref, hyp) if r == c and h == c)
        fp = sum(1 for r, h in zip(ref, hyp) if r != c and h == c)
        fn = sum(1 for r, h in zip(ref, hyp) if r == c and h != c)
        if tp + fp + fn == 0:
            continue
        scores.append(2 * tp / (2 * tp + fp + fn))
    return 100.0 * math.fsum(scores) / len(scores)


def uar_oracle(ref, hyp, n_classes):
    recalls = []
    for c in range(n_classes):
        support = [h for r, h in zip(ref, hyp) if r == c]
        if support:
            recalls.append(sum(1 for h in support if h == c) / len(support))
    return 100.0 * math.fsum(recalls) / len(recalls)
