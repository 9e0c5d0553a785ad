"""Energy-thresholding speech detection baselines for the two lapel channels."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .corpus import CHANNELS, SAMPLE_RATE, SPEECH
from .metrics import DiarizationTimeline

FLOOR_DB = -120.0
HOP_S = 0.1


@dataclass(frozen=True)
class EnergyTrack:
    values: np.ndarray
    frame_hop_s: float = HOP_S

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class EtModel:
    threshold_adult: float
    threshold_child: float
    median_len: int = 11

    def __post_init__(self):
        if self.median_len < 1 or self.median_len % 2 == 0:
            raise ValueError("median_len must be an odd integer >= 1")

    def threshold(self, channel):
        return self.threshold_adult if channel == "adult" else self.threshold_child

    def to_dict(self):
        return {"threshold_adult": self.threshold_adult, "threshold_child": self.threshold_child,
                "median_len": self.median_len}


def energy_track(waveform, hop_s=HOP_S, rate=SAMPLE_RATE):
    """RMS level in dBFS over non-overlapping frames; a short tail frame is kept."""
    x = np.asarray(waveform, dtype=np.float64)
    n = int(round(hop_s * rate))
    n_frames = -(-len(x) // n)
    padded = np.zeros(n_frames * n)
    padded[:len(x)] = x
    counts = np.full(n_frames, n)
    if n_frames:
        counts[-1] = len(x) - (n_frames - 1) * n
    ms = (padded.reshape(n_frames, n) ** 2).sum(axis=1) / counts
    with np.errstate(divide="ignore"):
        db = 10 * np.log10(ms)
    return EnergyTrack(np.maximum(db, FLOOR_DB), hop_s)


def reference_vad(track, margin_db=16.0, median_len=11):
    """Adaptive detector: voiced when above the track median by ``margin_db``."""
    v = np.asarray(track.values)
    if v.size == 0:
        return np.zeros(0, dtype=np.int64)
    raw = (v > np.median(v) + margin_db).astype(np.int64)
    return kernels.mode_filter(raw, median_len, 2)


def _grid(values):
    return np.arange(np.floor(values.min()), np.ceil(values.max()) + 1.0)


def fit_unsupervised(tracks, margin_db=16.0, median_len=11):
    """Per channel, the 1 dB grid threshold whose smoothed decisions best agree
    with :func:`reference_vad`; ties go to the lowest threshold.

    ``tracks`` maps channel name to a list of training :class:`EnergyTrack`.
    """
    thresholds = {}
    for ch in CHANNELS:
        chan_tracks = [t for t in tracks.get(ch, []) if len(t)]
        if not chan_tracks:
            raise ValueError(f"no training tracks for channel {ch}")
        energies = np.concatenate([t.values for t in chan_tracks])
        target = np.concatenate([reference_vad(t, margin_db, median_len) for t in chan_tracks])
        offsets = np.concatenate(([0], np.cumsum([len(t) for t in chan_tracks])))
        grid = _grid(energies)
        agree = kernels.threshold_agreement(energies, offsets, target, grid, median_len)
        thresholds[ch] = float(grid[int(np.argmax(agree))])
    return EtModel(thresholds["adult"], thresholds["child"], median_len)


def activity(segments, n_frames, hop_s=HOP_S):
    """1 where any labelled segment overlaps frame ``[i*hop, (i+1)*hop)``."""
    act = np.zeros(n_frames, dtype=bool)
    for s in segments:
        a = int(np.floor(s.start_s / hop_s + 1e-9))
        b = int(np.ceil(s.end_s / hop_s - 1e-9))
        act[max(a, 0):min(b, n_frames)] = True
    return act


def session_tracks(sessions, hop_s=HOP_S):
    return {ch: [energy_track(s.audio(ch), hop_s) for s in sessions] for ch in CHANNELS}


def weak_violations(session, channel, hop_s=HOP_S):
    """Energies on ``channel`` at frames where its own speaker is silent.

    Whatever the microphone picks up there is background (the other speaker's
    bleed or room noise), so a threshold must sit above all of it.
    """
    e = energy_track(session.audio(channel), hop_s).values
    active = activity(session.tier_segments(channel), len(e), hop_s)
    return e[~active]


def fit_weak_supervised(sessions, median_len=11, margin_db=1.0, hop_s=HOP_S):
    """Lowest threshold above which every training frame is foreground speech.

    T = (loudest background-only frame) + ``margin_db``; digital-silence frames
    cannot exceed any threshold and impose no constraint. With no constraining
    frame the threshold is the grid minimum (the dBFS floor).
    """
    thresholds = {}
    for ch in CHANNELS:
        bg = np.concatenate([weak_violations(s, ch, hop_s) for s in sessions]) if sessions else np.zeros(0)
        bg = bg[bg > FLOOR_DB]
        thresholds[ch] = float(bg.max() + margin_db) if bg.size else FLOOR_DB
    return EtModel(thresholds["adult"], thresholds["child"], median_len)


def detect(track, threshold, median_len=11):
    raw = (np.asarray(track.values) > threshold).astype(np.int64)
    if median_len > 1:
        return kernels.mode_filter(raw, median_len, 2)
    return raw


def diarize_et(model, session, hop_s=HOP_S):
    """VOICED/SIL timeline per channel (speech detection only, no classes)."""
    chans = {}
    for ch in CHANNELS:
        track = energy_track(session.audio(ch), hop_s)
        chans[ch] = detect(track, model.threshold(ch), model.median_len)
    return DiarizationTimeline(chans, {ch: SPEECH for ch in CHANNELS}, hop_s, 0.0)
