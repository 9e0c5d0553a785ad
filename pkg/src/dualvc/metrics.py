"""Diarization and classification scoring.

DER treats the two channels as two fixed speakers, so no speaker mapping is
searched. Error time is accumulated with the usual components: missed
speech, false alarm and confusion (speech attributed to the wrong
channel), over the timeline minus a collar around every reference
speech-region boundary.
"""
import json
import logging
import math
from collections import namedtuple
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .corpus import SPEECH

logger = logging.getLogger(__name__)

Segment = namedtuple("Segment", "channel label start_s end_s")


class UndefinedMetricError(ValueError):
    """Raised when a metric has no defined value (e.g. no reference speech)."""

    code = "undefined"


@dataclass
class DiarizationTimeline:
    """Per-channel class-index sequences on a regular grid.

    Bin ``i`` covers ``[offset_s + i*hop_s, offset_s + (i+1)*hop_s)``.
    """
    channels: dict
    inventories: dict
    hop_s: float = 0.1
    offset_s: float = 0.0

    def __post_init__(self):
        self.channels = {k: np.asarray(v, dtype=np.int64) for k, v in self.channels.items()}
        lengths = {len(v) for v in self.channels.values()}
        if len(lengths) > 1:
            raise ValueError(f"channel sequences differ in length: {lengths}")

    def __len__(self):
        return len(next(iter(self.channels.values()))) if self.channels else 0


def smooth(seq, window=11, n_classes=None):
    """Sliding mode filter (the median filter when ``seq`` is binary)."""
    return kernels.mode_filter(seq, window, n_classes)


def speech_timeline(tl, window=11):
    """Merge non-silent classes into speech, then median-filter each channel."""
    chans = {}
    for ch, seq in tl.channels.items():
        binary = (seq != tl.inventories[ch].silence_index).astype(np.int64)
        chans[ch] = smooth(binary, window, 2) if window and window > 1 else binary
    return DiarizationTimeline(chans, {ch: SPEECH for ch in chans}, tl.hop_s, tl.offset_s)


def timeline_to_segments(tl):
    """Maximal runs of one non-silent class become segments (silence omitted)."""
    out = []
    for ch in sorted(tl.channels):
        seq = tl.channels[ch]
        inv = tl.inventories[ch]
        if len(seq) == 0:
            continue
        change = np.flatnonzero(np.diff(seq)) + 1
        starts = np.concatenate(([0], change))
        ends = np.concatenate((change, [len(seq)]))
        for a, b in zip(starts, ends):
            c = int(seq[a])
            if c == inv.silence_index:
                continue
            out.append(Segment(ch, inv.classes[c],
                               round(tl.offset_s + a * tl.hop_s, 6),
                               round(tl.offset_s + b * tl.hop_s, 6)))
    return out


def segments_to_timeline(segments, n_frames, inventories, hop_s=0.1, offset_s=0.0):
    """Paint segments onto a grid by bin midpoint."""
    mids = offset_s + (np.arange(n_frames) + 0.5) * hop_s
    chans = {}
    for ch, inv in inventories.items():
        seq = np.full(n_frames, inv.silence_index, dtype=np.int64)
        for s in segments:
            if s.channel == ch:
                seq[(mids >= s.start_s) & (mids < s.end_s)] = inv.index(s.label)
        chans[ch] = seq
    return DiarizationTimeline(chans, dict(inventories), hop_s, offset_s)


def merge_intervals(intervals):
    """Union of half-open intervals as sorted disjoint (starts, ends) arrays."""
    ivs = sorted((float(a), float(b)) for a, b in intervals if b > a)
    starts, ends = [], []
    for a, b in ivs:
        if starts and a <= ends[-1]:
            ends[-1] = max(ends[-1], b)
        else:
            starts.append(a)
            ends.append(b)
    return np.array(starts), np.array(ends)


def der_components(ref, hyp, collar_s=0.25, score_overlap=True):
    """Seconds of scored reference speech, miss, false alarm and confusion."""
    channels = sorted({s.channel for s in ref} | {s.channel for s in hyp})
    ref_regions = [merge_intervals((s.start_s, s.end_s) for s in ref if s.channel == ch) for ch in channels]
    hyp_regions = [merge_intervals((s.start_s, s.end_s) for s in hyp if s.channel == ch) for ch in channels]
    excluded = []
    if collar_s > 0:
        for starts, ends in ref_regions:
            for t in np.concatenate([starts, ends]):
                excluded.append((t - collar_s, t + collar_s))
    if not score_overlap:
        for i in range(len(channels)):
            for j in range(i + 1, len(channels)):
                for a0, a1 in zip(*ref_regions[i]):
                    for b0, b1 in zip(*ref_regions[j]):
                        if min(a1, b1) > max(a0, b0):
                            excluded.append((max(a0, b0), min(a1, b1)))
    scored, miss, fa, conf = kernels.der_sweep(ref_regions, hyp_regions, merge_intervals(excluded))
    return {"scored_ref_s": scored, "missed_s": miss, "false_alarm_s": fa, "confusion_s": conf}


def der(ref, hyp, collar_s=0.25, score_overlap=True):
    """Diarization error rate in percent.

    Raises :class:`UndefinedMetricError` when the reference has no speech.
    If the collar swallows all reference speech the result is 0.0 when
    nothing else is wrong and ``inf`` otherwise.
    """
    if not any(s.end_s > s.start_s for s in ref):
        raise UndefinedMetricError("reference contains no speech; DER is undefined")
    c = der_components(ref, hyp, collar_s, score_overlap)
    err = c["missed_s"] + c["false_alarm_s"] + c["confusion_s"]
    if c["scored_ref_s"] <= 0:
        return 0.0 if err <= 1e-12 else float("inf")
    return 100.0 * err / c["scored_ref_s"]


def confusion_matrix(ref, hyp, n_classes):
    ref = np.asarray(ref, dtype=np.int64)
    hyp = np.asarray(hyp, dtype=np.int64)
    return np.bincount(ref * n_classes + hyp, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def f1_unweighted(ref, hyp, n_classes, exclude=()):
    """Macro F1 (%) over classes present in ``ref`` or ``hyp``.

    ``exclude`` lists class indices dropped from the average (e.g. silence).
    """
    cm = confusion_matrix(ref, hyp, n_classes)
    tp = np.diag(cm).astype(float)
    n_ref = cm.sum(axis=1)
    n_hyp = cm.sum(axis=0)
    present = (n_ref + n_hyp) > 0
    present[list(exclude)] = False
    if not present.any():
        raise UndefinedMetricError("no classes present")
    f1 = 2 * tp[present] / (n_ref[present] + n_hyp[present])
    return 100.0 * math.fsum(f1.tolist()) / len(f1)


def uar(ref, hyp, n_classes):
    """Unweighted average recall (%) over classes present in ``ref``."""
    cm = confusion_matrix(ref, hyp, n_classes)
    n_ref = cm.sum(axis=1)
    present = n_ref > 0
    if not present.any():
        raise UndefinedMetricError("empty reference")
    recall = np.diag(cm)[present] / n_ref[present]
    return 100.0 * math.fsum(recall.tolist()) / len(recall)


def accuracy(ref, hyp):
    ref = np.asarray(ref)
    return 100.0 * float((ref == np.asarray(hyp)).mean())


def bootstrap_ci(labels, preds, metric, n_resamples=1000, seed=0, groups=None, level=0.95):
    """Percentile bootstrap interval of ``metric(labels, preds)``.

    With ``groups`` the resampling unit is the group (e.g. a session) and
    every item of a drawn group is included.
    """
    labels = np.asarray(labels)
    preds = np.asarray(preds)
    rng = np.random.default_rng(seed)
    if groups is None:
        units = [np.array([i]) for i in range(len(labels))]
    else:
        groups = np.asarray(groups)
        units = [np.flatnonzero(groups == g) for g in np.unique(groups)]
    n = len(units)
    stats = np.empty(n_resamples)
    for r in range(n_resamples):
        pick = rng.integers(0, n, size=n)
        idx = np.concatenate([units[i] for i in pick])
        stats[r] = metric(labels[idx], preds[idx])
    alpha = (1 - level) / 2 * 100
    lo, hi = np.percentile(stats, [alpha, 100 - alpha])
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# RTTM
# ---------------------------------------------------------------------------

def format_rttm(session_id, segments, with_class=True):
    lines = []
    for s in sorted(segments, key=lambda s: (s.start_s, s.channel)):
        line = (f"SPEAKER {session_id} 1 {s.start_s:.3f} {s.end_s - s.start_s:.3f} "
                f"<NA> <NA> {s.channel} <NA> <NA>")
        if with_class:
            line += f" {s.label}"
        lines.append(line)
    return "\n".join(lines) + ("\n" if lines else "")


def parse_rttm(text):
    """Map ``session_id -> [Segment]``; the optional 11th field is the class."""
    out = {}
    for line in text.splitlines():
        parts = line.split()
        if not parts or parts[0] != "SPEAKER":
            continue
        start, dur = float(parts[3]), float(parts[4])
        label = parts[10] if len(parts) > 10 else "SPEECH"
        out.setdefault(parts[1], []).append(Segment(parts[7], label, start, round(start + dur, 6)))
    return out


@dataclass
class MetricReport:
    der: float = None
    f1: dict = field(default_factory=dict)
    f1_no_silence: dict = field(default_factory=dict)
    uar: dict = field(default_factory=dict)
    ci: dict = field(default_factory=dict)
    support: dict = field(default_factory=dict)
    protocol: str = "test-selection"
    config_hash: str = None
    version: str = None

    def __post_init__(self):
        for name, (lo, hi) in self.ci.items():
            point = self.f1.get(name.split(":")[-1]) if name.startswith("f1") else None
            if not lo <= hi:
                raise ValueError(f"bad interval for {name}: {lo} > {hi}")
            if point is not None and not lo - 1e-9 <= point <= hi + 1e-9:
                logger.warning("point estimate %s outside bootstrap interval for %s", point, name)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)
