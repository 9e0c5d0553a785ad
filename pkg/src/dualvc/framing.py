"""Fixed-length labelled frames cut from two-channel sessions."""
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import ADU, CHI, SAMPLE_RATE

_EPS = 1e-9


@dataclass(frozen=True)
class FrameSpec:
    frame_len_s: float = 2.0
    hop_s: float = 0.1
    center_len_s: float = 0.1

    def __post_init__(self):
        if self.hop_s <= 0:
            raise ValueError("hop_s must be positive")
        if self.center_len_s > self.frame_len_s:
            raise ValueError("center_len_s must not exceed frame_len_s")

    @property
    def center_offset_s(self):
        """Start of frame 0's center window."""
        return (self.frame_len_s - self.center_len_s) / 2

    @property
    def frame_samples(self):
        return int(round(self.frame_len_s * SAMPLE_RATE))


@dataclass(frozen=True)
class FrameExample:
    session_id: str
    start_s: float
    adult_samples: np.ndarray = field(repr=False)
    child_samples: np.ndarray = field(repr=False)
    adu_label: str
    chi_label: str


def frame_count(duration_s, spec):
    """Number of frames whose center window ends inside the session."""
    last_end = (spec.frame_len_s + spec.center_len_s) / 2
    if duration_s + _EPS < last_end:
        return 0
    return int(math.floor((duration_s - last_end) / spec.hop_s + _EPS)) + 1


def center_windows(n_frames, spec):
    i = np.arange(n_frames)
    start = i * spec.hop_s + spec.center_offset_s
    return start, start + spec.center_len_s


def window_labels(segments, starts, ends, inventory):
    """Vectorised :func:`label_for_window`; returns class indices."""
    starts = np.asarray(starts, dtype=np.float64)
    ends = np.asarray(ends, dtype=np.float64)
    overlap = np.zeros((len(starts), len(inventory)))
    for seg in segments:
        ov = np.minimum(ends, seg.end_s) - np.maximum(starts, seg.start_s)
        overlap[:, inventory.index(seg.label)] += np.clip(ov, 0, None)
    sil = inventory.silence_index
    overlap[:, sil] = (ends - starts) - overlap.sum(axis=1) + overlap[:, sil]
    # tolerate float noise so exact ties are detected
    overlap = np.round(overlap, 9)
    # ties go to the class listed last: argmax over the reversed class axis
    rev = overlap[:, ::-1]
    return len(inventory) - 1 - rev.argmax(axis=1)


def label_for_window(segments, window, inventory):
    """Class with maximal overlap in ``[t0, t1)``; ties go to later-listed classes."""
    t0, t1 = window
    if not t1 > t0:
        raise ValueError("window must have positive length")
    idx = window_labels(segments, [t0], [t1], inventory)[0]
    return inventory.classes[idx]


def session_frame_labels(session, spec=FrameSpec()):
    """(adu_idx, chi_idx) label arrays over the frame grid of a session."""
    n = frame_count(session.duration_s, spec)
    a, b = center_windows(n, spec)
    adu = window_labels(session.tier_segments("adult"), a, b, ADU)
    chi = window_labels(session.tier_segments("child"), a, b, CHI)
    return adu, chi


def cut(audio, start, n):
    """``n`` samples from ``start``, zero-padded on the right."""
    piece = audio[start:start + n]
    if len(piece) < n:
        piece = np.pad(piece, (0, n - len(piece)))
    return piece


def frames_from_session(session, spec=FrameSpec()):
    """Yield one :class:`FrameExample` per hop from t=0."""
    adu, chi = session_frame_labels(session, spec)
    n = spec.frame_samples
    for i in range(len(adu)):
        start_s = round(i * spec.hop_s, 6)
        s = int(round(start_s * SAMPLE_RATE))
        yield FrameExample(
            session.session_id, start_s,
            cut(session.adult_audio, s, n), cut(session.child_audio, s, n),
            ADU.classes[adu[i]], CHI.classes[chi[i]],
        )


@dataclass
class SamplingPolicy:
    """Per-tier class caps (subsample) and minimums (oversample with replacement).

    ``caps={"CHI": {"SIL": 1000}}`` keeps at most 1000 frames whose CHI label
    is SIL.
    """
    caps: dict = field(default_factory=dict)
    minimums: dict = field(default_factory=dict)


def _tier_label(frame, tier):
    return frame.adu_label if tier == "ADU" else frame.chi_label


def balance_sample(frames, policy=None, seed=0):
    frames = list(frames)
    if policy is None or policy == "none" or not (policy.caps or policy.minimums):
        return frames
    rng = np.random.default_rng(seed)
    keep = np.arange(len(frames))
    for tier in sorted(policy.caps):
        for label, cap in sorted(policy.caps[tier].items()):
            hit = np.array([_tier_label(frames[i], tier) == label for i in keep], dtype=bool)
            if hit.sum() > cap:
                chosen = rng.choice(keep[hit], size=cap, replace=False)
                keep = np.sort(np.concatenate([keep[~hit], chosen]))
    extra = []
    for tier in sorted(policy.minimums):
        for label, floor in sorted(policy.minimums[tier].items()):
            pool = np.array([i for i in keep if _tier_label(frames[i], tier) == label])
            if 0 < len(pool) < floor:
                extra.extend(rng.choice(pool, size=floor - len(pool), replace=True).tolist())
    order = np.sort(np.concatenate([keep, np.asarray(extra, dtype=np.int64)]))
    return [frames[i] for i in order]


def write_frame_cache(path, sessions, spec=FrameSpec()):
    """One JSON record per frame: session, start time and both labels."""
    with open(path, "w") as fh:
        for sess in sessions:
            adu, chi = session_frame_labels(sess, spec)
            for i in range(len(adu)):
                fh.write(json.dumps({
                    "session_id": sess.session_id,
                    "start_s": round(i * spec.hop_s, 6),
                    "adu": ADU.classes[adu[i]],
                    "chi": CHI.classes[chi[i]],
                }) + "\n")


def read_frame_cache(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
