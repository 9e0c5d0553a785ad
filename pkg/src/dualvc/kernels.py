"""Hot inner loops.

Every kernel has a numba implementation (``*_nb``) and a vectorised numpy
implementation (``*_np``). The public name dispatches on
:func:`dualvc._accel.backend`, so both paths stay importable for tests and
for ``benchmarks/bench_kernels.py``.
"""
import numpy as np

from . import _accel
from ._accel import njit


# ---------------------------------------------------------------------------
# sliding mode filter (binary case == median filter)
# ---------------------------------------------------------------------------

@njit
def _mode_filter_nb(seq, window, n_classes):
    n = seq.shape[0]
    out = np.empty(n, dtype=np.int64)
    if n == 0:
        return out
    half = window // 2
    counts = np.zeros(n_classes, dtype=np.int64)
    lo = 0
    hi = min(n, half + 1)
    for j in range(lo, hi):
        counts[seq[j]] += 1
    for i in range(n):
        new_lo = max(0, i - half)
        new_hi = min(n, i + half + 1)
        while lo < new_lo:
            counts[seq[lo]] -= 1
            lo += 1
        while hi < new_hi:
            counts[seq[hi]] += 1
            hi += 1
        best = -1
        arg = 0
        n_best = 0
        for c in range(n_classes):
            if counts[c] > best:
                best = counts[c]
                arg = c
                n_best = 1
            elif counts[c] == best:
                n_best += 1
        out[i] = seq[i] if n_best > 1 else arg
    return out


def _mode_filter_np(seq, window, n_classes):
    n = seq.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    half = window // 2
    onehot = np.zeros((n + 1, n_classes), dtype=np.int64)
    onehot[np.arange(1, n + 1), seq] = 1
    prefix = np.cumsum(onehot, axis=0)
    idx = np.arange(n)
    lo = np.maximum(0, idx - half)
    hi = np.minimum(n, idx + half + 1)
    counts = prefix[hi] - prefix[lo]
    best = counts.max(axis=1)
    n_best = (counts == best[:, None]).sum(axis=1)
    return np.where(n_best > 1, seq, counts.argmax(axis=1)).astype(np.int64)


def mode_filter(seq, window, n_classes=None):
    """Centered sliding mode with shrunken edge windows; ties keep the center."""
    seq = np.ascontiguousarray(seq, dtype=np.int64)
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    if n_classes is None:
        n_classes = int(seq.max()) + 1 if seq.size else 1
    if _accel.USE_NUMBA:
        return _mode_filter_nb(seq, int(window), int(n_classes))
    return _mode_filter_np(seq, int(window), int(n_classes))


# ---------------------------------------------------------------------------
# energy-threshold grid search
# ---------------------------------------------------------------------------

@njit
def _threshold_agreement_nb(energies, offsets, target, thresholds, window):
    n_thr = thresholds.shape[0]
    out = np.zeros(n_thr, dtype=np.int64)
    n_tracks = offsets.shape[0] - 1
    for g in range(n_thr):
        thr = thresholds[g]
        total = 0
        for k in range(n_tracks):
            a = offsets[k]
            b = offsets[k + 1]
            raw = np.empty(b - a, dtype=np.int64)
            for i in range(a, b):
                raw[i - a] = 1 if energies[i] > thr else 0
            sm = _mode_filter_nb(raw, window, 2)
            for i in range(a, b):
                if sm[i - a] == target[i]:
                    total += 1
        out[g] = total
    return out


def _threshold_agreement_np(energies, offsets, target, thresholds, window):
    out = np.zeros(len(thresholds), dtype=np.int64)
    for g, thr in enumerate(thresholds):
        total = 0
        for a, b in zip(offsets[:-1], offsets[1:]):
            raw = (energies[a:b] > thr).astype(np.int64)
            total += int((_mode_filter_np(raw, window, 2) == target[a:b]).sum())
        out[g] = total
    return out


def threshold_agreement(energies, offsets, target, thresholds, window):
    """Frames where the smoothed ``energy > thr`` decision equals ``target``.

    ``offsets`` delimits independent tracks inside the concatenated arrays so
    smoothing never crosses a track boundary.
    """
    args = (
        np.ascontiguousarray(energies, dtype=np.float64),
        np.ascontiguousarray(offsets, dtype=np.int64),
        np.ascontiguousarray(target, dtype=np.int64),
        np.ascontiguousarray(thresholds, dtype=np.float64),
        int(window),
    )
    if _accel.USE_NUMBA:
        return _threshold_agreement_nb(*args)
    return _threshold_agreement_np(*args)


# ---------------------------------------------------------------------------
# edit distance
# ---------------------------------------------------------------------------

@njit
def _levenshtein_nb(a, b):
    n = a.shape[0]
    m = b.shape[0]
    prev = np.arange(m + 1)
    cur = np.empty(m + 1, dtype=prev.dtype)
    for i in range(1, n + 1):
        cur[0] = i
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            v = prev[j - 1] + cost
            if prev[j] + 1 < v:
                v = prev[j] + 1
            if cur[j - 1] + 1 < v:
                v = cur[j - 1] + 1
            cur[j] = v
        prev, cur = cur, prev
    return prev[m]


def _levenshtein_np(a, b):
    m = b.shape[0]
    ar = np.arange(m + 1)
    prev = ar.copy()
    for i in range(1, a.shape[0] + 1):
        # substitution/deletion candidates, then the in-row insertion chain
        # cur[j] = min_k<=j (cand[k] + j - k) via a running minimum
        cand = np.empty(m + 1, dtype=np.int64)
        cand[0] = i
        cand[1:] = np.minimum(prev[:-1] + (b != a[i - 1]), prev[1:] + 1)
        prev = np.minimum.accumulate(cand - ar) + ar
    return prev[m]


def levenshtein(a, b):
    """Unit-cost edit distance between two integer sequences."""
    a = np.ascontiguousarray(a, dtype=np.int64)
    b = np.ascontiguousarray(b, dtype=np.int64)
    if _accel.USE_NUMBA:
        return int(_levenshtein_nb(a, b))
    return int(_levenshtein_np(a, b))


# ---------------------------------------------------------------------------
# CTC
# ---------------------------------------------------------------------------

@njit
def _greedy_collapse_nb(path, blank):
    out = np.empty(path.shape[0], dtype=np.int64)
    k = 0
    prev = -1
    for t in range(path.shape[0]):
        p = path[t]
        if p != prev and p != blank:
            out[k] = p
            k += 1
        prev = p
    return out[:k]


def _greedy_collapse_np(path, blank):
    if path.size == 0:
        return path.astype(np.int64)
    keep = np.ones(path.shape[0], dtype=bool)
    keep[1:] = path[1:] != path[:-1]
    keep &= path != blank
    return path[keep].astype(np.int64)


def greedy_collapse(path, blank):
    """Collapse repeated ids then drop blanks."""
    path = np.ascontiguousarray(path, dtype=np.int64)
    if _accel.USE_NUMBA:
        return _greedy_collapse_nb(path, int(blank))
    return _greedy_collapse_np(path, int(blank))


@njit
def _logadd(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + np.log1p(np.exp(b - a))
    return b + np.log1p(np.exp(a - b))


@njit
def _ctc_nll_nb(log_probs, labels, blank):
    T = log_probs.shape[0]
    L = labels.shape[0]
    S = 2 * L + 1
    ext = np.full(S, blank, dtype=np.int64)
    for i in range(L):
        ext[2 * i + 1] = labels[i]
    alpha = np.full(S, -np.inf)
    alpha[0] = log_probs[0, blank]
    if S > 1:
        alpha[1] = log_probs[0, ext[1]]
    nxt = np.empty(S)
    for t in range(1, T):
        for s in range(S):
            v = alpha[s]
            if s >= 1:
                v = _logadd(v, alpha[s - 1])
            if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                v = _logadd(v, alpha[s - 2])
            nxt[s] = v + log_probs[t, ext[s]] if v > -np.inf else -np.inf
        for s in range(S):
            alpha[s] = nxt[s]
    total = alpha[S - 1]
    if S > 1:
        total = _logadd(total, alpha[S - 2])
    return -total


def _ctc_nll_np(log_probs, labels, blank):
    T = log_probs.shape[0]
    L = labels.shape[0]
    S = 2 * L + 1
    ext = np.full(S, blank, dtype=np.int64)
    ext[1::2] = labels
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    alpha = np.full(S, -np.inf)
    alpha[0] = log_probs[0, blank]
    if S > 1:
        alpha[1] = log_probs[0, ext[1]]
    with np.errstate(invalid="ignore"):
        for t in range(1, T):
            shift1 = np.full(S, -np.inf)
            shift1[1:] = alpha[:-1]
            shift2 = np.full(S, -np.inf)
            shift2[2:] = alpha[:-2]
            shift2[~skip] = -np.inf
            alpha = np.logaddexp(np.logaddexp(alpha, shift1), shift2) + log_probs[t, ext]
    return -float(np.logaddexp(alpha[-1], alpha[-2]) if S > 1 else alpha[-1])


def ctc_nll(log_probs, labels, blank):
    """Negative log-likelihood of ``labels`` under per-frame log posteriors.

    Returns ``inf`` when the label sequence cannot be aligned in ``T`` frames.
    """
    log_probs = np.ascontiguousarray(log_probs, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if log_probs.shape[0] == 0:
        return 0.0 if labels.size == 0 else np.inf
    if _accel.USE_NUMBA:
        return float(_ctc_nll_nb(log_probs, labels, int(blank)))
    return _ctc_nll_np(log_probs, labels, int(blank))


# ---------------------------------------------------------------------------
# diarization scoring sweep
# ---------------------------------------------------------------------------

@njit
def _covered_nb(starts, ends, t):
    # starts sorted, intervals disjoint
    lo = 0
    hi = starts.shape[0]
    while lo < hi:
        mid = (lo + hi) // 2
        if starts[mid] <= t:
            lo = mid + 1
        else:
            hi = mid
    k = lo - 1
    return k >= 0 and ends[k] > t


@njit
def _der_sweep_nb(bounds, ref_s, ref_e, ref_off, hyp_s, hyp_e, hyp_off, ex_s, ex_e):
    n_spk = ref_off.shape[0] - 1
    scored_ref = 0.0
    miss = 0.0
    fa = 0.0
    conf = 0.0
    for k in range(bounds.shape[0] - 1):
        t0 = bounds[k]
        t1 = bounds[k + 1]
        dur = t1 - t0
        if dur <= 0.0:
            continue
        mid = 0.5 * (t0 + t1)
        if _covered_nb(ex_s, ex_e, mid):
            continue
        n_ref = 0
        n_hyp = 0
        n_cor = 0
        for s in range(n_spk):
            r = _covered_nb(ref_s[ref_off[s]:ref_off[s + 1]], ref_e[ref_off[s]:ref_off[s + 1]], mid)
            h = _covered_nb(hyp_s[hyp_off[s]:hyp_off[s + 1]], hyp_e[hyp_off[s]:hyp_off[s + 1]], mid)
            if r:
                n_ref += 1
            if h:
                n_hyp += 1
            if r and h:
                n_cor += 1
        scored_ref += dur * n_ref
        if n_ref > n_hyp:
            miss += dur * (n_ref - n_hyp)
        else:
            fa += dur * (n_hyp - n_ref)
        conf += dur * (min(n_ref, n_hyp) - n_cor)
    return scored_ref, miss, fa, conf


def _covered_np(starts, ends, t):
    k = np.searchsorted(starts, t, side="right") - 1
    ok = k >= 0
    out = np.zeros(t.shape, dtype=bool)
    out[ok] = ends[k[ok]] > t[ok]
    return out


def _der_sweep_np(bounds, ref_s, ref_e, ref_off, hyp_s, hyp_e, hyp_off, ex_s, ex_e):
    dur = np.diff(bounds)
    mid = 0.5 * (bounds[:-1] + bounds[1:])
    live = (dur > 0) & ~_covered_np(ex_s, ex_e, mid)
    dur, mid = dur[live], mid[live]
    n_ref = np.zeros(mid.shape, dtype=np.int64)
    n_hyp = np.zeros(mid.shape, dtype=np.int64)
    n_cor = np.zeros(mid.shape, dtype=np.int64)
    for s in range(len(ref_off) - 1):
        r = _covered_np(ref_s[ref_off[s]:ref_off[s + 1]], ref_e[ref_off[s]:ref_off[s + 1]], mid)
        h = _covered_np(hyp_s[hyp_off[s]:hyp_off[s + 1]], hyp_e[hyp_off[s]:hyp_off[s + 1]], mid)
        n_ref += r
        n_hyp += h
        n_cor += r & h
    scored_ref = float((dur * n_ref).sum())
    miss = float((dur * np.maximum(n_ref - n_hyp, 0)).sum())
    fa = float((dur * np.maximum(n_hyp - n_ref, 0)).sum())
    conf = float((dur * (np.minimum(n_ref, n_hyp) - n_cor)).sum())
    return scored_ref, miss, fa, conf


def der_sweep(ref, hyp, excluded):
    """Exact interval sweep for diarization error components.

    ``ref`` and ``hyp`` are lists (one per speaker) of ``(starts, ends)``
    arrays of sorted disjoint intervals; ``excluded`` is a single sorted
    disjoint ``(starts, ends)`` pair. Returns
    ``(scored_ref_time, missed, false_alarm, confusion)`` in seconds.
    """
    def pack(per_spk):
        s = [np.asarray(a, dtype=np.float64) for a, _ in per_spk]
        e = [np.asarray(b, dtype=np.float64) for _, b in per_spk]
        off = np.zeros(len(per_spk) + 1, dtype=np.int64)
        off[1:] = np.cumsum([len(x) for x in s])
        cat = lambda xs: np.concatenate(xs) if xs else np.empty(0)  # noqa: E731
        return cat(s), cat(e), off

    ref_s, ref_e, ref_off = pack(ref)
    hyp_s, hyp_e, hyp_off = pack(hyp)
    ex_s = np.asarray(excluded[0], dtype=np.float64)
    ex_e = np.asarray(excluded[1], dtype=np.float64)
    bounds = np.unique(np.concatenate([ref_s, ref_e, hyp_s, hyp_e, ex_s, ex_e]))
    args = (bounds, ref_s, ref_e, ref_off, hyp_s, hyp_e, hyp_off, ex_s, ex_e)
    if bounds.size < 2:
        return 0.0, 0.0, 0.0, 0.0
    if _accel.USE_NUMBA:
        return tuple(float(x) for x in _der_sweep_nb(*args))
    return _der_sweep_np(*args)
