"""Two-channel session annotations, single-clip corpora and fold manifests.

On-disk layout (all paths in a manifest are relative to the manifest file):

* session manifest: JSON lines with ``session_id``, ``child_id``,
  ``adult_audio``, ``child_audio``, ``adult_segments``, ``child_segments``
* segment file: CSV with header ``tier,label,start_s,end_s``
* clip manifest: JSON lines with ``clip_id``, ``child_id``, ``audio``,
  ``label`` and an optional ``split``
* audio: RIFF/WAVE PCM16 mono; anything else is converted to 16 kHz mono
"""
import csv
import json
import logging
from dataclasses import dataclass, field
from math import gcd
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000
CHANNELS = ("adult", "child")
MAX_PAD_S = 0.05


class IngestError(Exception):
    """A manifest entry or a file it references could not be read."""


class SegmentValidationError(ValueError):
    """Annotations violate the segment invariants."""

    def __init__(self, message, intervals=()):
        super().__init__(message)
        self.intervals = list(intervals)


@dataclass(frozen=True)
class ClassInventory:
    tier_name: str
    classes: tuple
    silence_class: str

    def __post_init__(self):
        if len(set(self.classes)) != len(self.classes):
            raise ValueError(f"duplicate class names in {self.tier_name}")
        if self.silence_class not in self.classes:
            raise ValueError(f"silence class {self.silence_class!r} not in {self.classes}")

    def __len__(self):
        return len(self.classes)

    def index(self, label):
        return self.classes.index(label)

    @property
    def silence_index(self):
        return self.classes.index(self.silence_class)


ADU = ClassInventory("ADU", ("SIL", "VOC", "LAU"), "SIL")
CHI = ClassInventory("CHI", ("SIL", "VOC", "VERB", "LAU", "CRY"), "SIL")
BABBLE = ClassInventory("BABBLE", ("JUNK", "NON-CAN", "CAN", "LAU", "CRY"), "JUNK")
# generic speech/non-speech tier used by the energy baselines
SPEECH = ClassInventory("SPEECH", ("SIL", "VOICED"), "SIL")

INVENTORIES = {inv.tier_name: inv for inv in (ADU, CHI, BABBLE, SPEECH)}
CHANNEL_TIER = {"adult": ADU, "child": CHI}


@dataclass(frozen=True)
class AnnotatedSegment:
    channel: str
    tier: str
    label: str
    start_s: float
    end_s: float

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise SegmentValidationError(f"unknown channel {self.channel!r}")
        if self.tier not in INVENTORIES:
            raise SegmentValidationError(f"unknown tier {self.tier!r}")
        if self.label not in INVENTORIES[self.tier].classes:
            raise SegmentValidationError(f"label {self.label!r} not in tier {self.tier}")
        if not (self.start_s >= 0 and self.end_s > self.start_s):
            raise SegmentValidationError(
                f"bad interval [{self.start_s}, {self.end_s})", [(self.start_s, self.end_s)]
            )

    @property
    def inventory(self):
        return INVENTORIES[self.tier]

    @property
    def duration_s(self):
        return self.end_s - self.start_s


def _readonly(x):
    x = np.asarray(x, dtype=np.float32)
    x.flags.writeable = False
    return x


@dataclass(frozen=True)
class Session:
    session_id: str
    child_id: str
    adult_audio: np.ndarray = field(repr=False)
    child_audio: np.ndarray = field(repr=False)
    segments: tuple
    duration_s: float
    sample_rate: int = SAMPLE_RATE
    adult_path: str = None
    child_path: str = None

    def audio(self, channel):
        return self.adult_audio if channel == "adult" else self.child_audio

    def tier_segments(self, channel, tier=None):
        tier = tier or CHANNEL_TIER[channel].tier_name
        return [s for s in self.segments if s.channel == channel and s.tier == tier]


@dataclass(frozen=True)
class Clip:
    clip_id: str
    child_id: str
    audio: np.ndarray = field(repr=False)
    label: str
    split: str = None
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.label not in BABBLE.classes:
            raise SegmentValidationError(f"clip label {self.label!r} not in BABBLE")
        if len(self.audio) == 0:
            raise IngestError(f"clip {self.clip_id} has no audio")


@dataclass(frozen=True)
class FoldManifest:
    fold_id: int
    train_ids: frozenset
    test_ids: frozenset

    def __post_init__(self):
        shared = self.train_ids & self.test_ids
        if shared:
            raise ValueError(f"fold {self.fold_id} is not speaker-disjoint: {sorted(shared)}")

    def split(self, items):
        """Partition sessions or clips into (train, test) by ``child_id``."""
        train = [x for x in items if x.child_id in self.train_ids]
        test = [x for x in items if x.child_id in self.test_ids]
        return train, test

    def to_dict(self):
        return {
            "fold_id": self.fold_id,
            "train_ids": sorted(self.train_ids),
            "test_ids": sorted(self.test_ids),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["fold_id"]), frozenset(d["train_ids"]), frozenset(d["test_ids"]))


# ---------------------------------------------------------------------------
# audio
# ---------------------------------------------------------------------------

def read_wav(path, target_rate=SAMPLE_RATE):
    """Read a WAV file as float32 mono at ``target_rate``."""
    path = Path(path)
    if not path.exists():
        raise IngestError(f"missing audio file: {path}")
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise IngestError(f"unreadable audio file {path}: {exc}") from exc
    if data.dtype == np.int16:
        x = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float32) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float32) - 128.0) / 128.0
    else:
        x = data.astype(np.float32)
    if x.ndim == 2:
        x = x.mean(axis=1)
    if rate != target_rate:
        g = gcd(int(rate), int(target_rate))
        x = resample_poly(x, target_rate // g, rate // g).astype(np.float32)
    return x


def write_wav(path, x, rate=SAMPLE_RATE):
    pcm = np.clip(np.round(np.asarray(x, dtype=np.float64) * 32767.0), -32768, 32767)
    wavfile.write(Path(path), rate, pcm.astype(np.int16))


# ---------------------------------------------------------------------------
# segments
# ---------------------------------------------------------------------------

def normalize_segments(segments):
    """Sort per (channel, tier), merge same-label overlaps, reject conflicts.

    Touching segments (``end == next start``) are kept apart.
    """
    groups = {}
    for seg in segments:
        if seg.label == seg.inventory.silence_class:
            logger.debug("dropping explicit silence segment %s", seg)
            continue
        groups.setdefault((seg.channel, seg.tier), []).append(seg)
    out = []
    for key in sorted(groups):
        merged = []
        conflicts = []
        for seg in sorted(groups[key], key=lambda s: (s.start_s, s.end_s, s.label)):
            if merged and seg.start_s < merged[-1].end_s:
                last = merged[-1]
                if seg.label == last.label:
                    if seg.end_s > last.end_s:
                        merged[-1] = AnnotatedSegment(
                            last.channel, last.tier, last.label, last.start_s, seg.end_s
                        )
                    continue
                conflicts.append((seg.start_s, min(seg.end_s, last.end_s)))
                continue
            merged.append(seg)
        if conflicts:
            spans = ", ".join(f"[{a:.3f},{b:.3f})" for a, b in conflicts)
            raise SegmentValidationError(
                f"conflicting overlapping labels on {key[0]}/{key[1]}: {spans}", conflicts
            )
        out.extend(merged)
    return tuple(out)


def check_segments(segments, duration_s):
    """Assert the post-ingestion invariants; raises SegmentValidationError."""
    last = {}
    for seg in segments:
        key = (seg.channel, seg.tier)
        if seg.end_s > duration_s + 1e-6:
            raise SegmentValidationError(
                f"segment {seg} exceeds session duration {duration_s:.3f}", [(seg.start_s, seg.end_s)]
            )
        if key in last and seg.start_s < last[key]:
            raise SegmentValidationError(f"segments on {key} overlap or are unsorted at {seg.start_s}")
        last[key] = seg.end_s


def read_segments(path, channel):
    path = Path(path)
    if not path.exists():
        raise IngestError(f"missing segment file: {path}")
    segs = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != [
            "tier", "label", "start_s", "end_s"
        ]:
            raise IngestError(f"{path}: expected header tier,label,start_s,end_s")
        for row in reader:
            segs.append(
                AnnotatedSegment(
                    channel, row["tier"].strip(), row["label"].strip(),
                    float(row["start_s"]), float(row["end_s"]),
                )
            )
    return segs


def write_segments(path, segments):
    """Write one channel's segments in the CSV layout (3-decimal seconds)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tier", "label", "start_s", "end_s"])
        for s in segments:
            w.writerow([s.tier, s.label, f"{s.start_s:.3f}", f"{s.end_s:.3f}"])


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def _read_jsonl(path):
    path = Path(path)
    if not path.exists():
        raise IngestError(f"missing manifest: {path}")
    rows = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise IngestError(f"{path}:{n}: {exc}") from exc
    return rows


def _match_lengths(adult, child, session_id):
    diff = abs(len(adult) - len(child))
    if diff > MAX_PAD_S * SAMPLE_RATE:
        raise IngestError(
            f"session {session_id}: channel lengths differ by {diff / SAMPLE_RATE:.3f}s "
            f"(limit {MAX_PAD_S}s)"
        )
    n = max(len(adult), len(child))
    return np.pad(adult, (0, n - len(adult))), np.pad(child, (0, n - len(child)))


def load_sessions(manifest_path):
    """Load every session listed in a JSON-lines manifest."""
    root = Path(manifest_path).parent
    sessions = []
    for row in _read_jsonl(manifest_path):
        try:
            sid = str(row["session_id"])
            adult_path = root / row["adult_audio"]
            child_path = root / row["child_audio"]
            seg_paths = {"adult": root / row["adult_segments"], "child": root / row["child_segments"]}
            child_id = str(row["child_id"])
        except KeyError as exc:
            raise IngestError(f"{manifest_path}: manifest row missing field {exc}") from exc
        adult, child = _match_lengths(read_wav(adult_path), read_wav(child_path), sid)
        duration = len(adult) / SAMPLE_RATE
        raw = []
        for ch in CHANNELS:
            raw.extend(read_segments(seg_paths[ch], ch))
        segments = normalize_segments(raw)
        check_segments(segments, duration)
        sessions.append(
            Session(sid, child_id, _readonly(adult), _readonly(child), segments, duration,
                    adult_path=str(adult_path), child_path=str(child_path))
        )
    return sessions


def write_session_files(out_dir, session_id, child_id, adult, child, segments):
    """Write audio + segment files for one session; returns its manifest row."""
    out_dir = Path(out_dir)
    row = {
        "session_id": session_id,
        "child_id": child_id,
        "adult_audio": f"{session_id}_adult.wav",
        "child_audio": f"{session_id}_child.wav",
        "adult_segments": f"{session_id}_adult.csv",
        "child_segments": f"{session_id}_child.csv",
    }
    write_wav(out_dir / row["adult_audio"], adult)
    write_wav(out_dir / row["child_audio"], child)
    for ch in CHANNELS:
        write_segments(out_dir / row[f"{ch}_segments"], [s for s in segments if s.channel == ch])
    return row


def write_manifest(path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_clips(manifest_path):
    root = Path(manifest_path).parent
    clips = []
    for row in _read_jsonl(manifest_path):
        try:
            clips.append(
                Clip(str(row["clip_id"]), str(row["child_id"]), _readonly(read_wav(root / row["audio"])),
                     row["label"], row.get("split"))
            )
        except KeyError as exc:
            raise IngestError(f"{manifest_path}: manifest row missing field {exc}") from exc
    return clips


def make_folds(items, k, seed=0):
    """Speaker-disjoint k-fold partition over the ``child_id`` of sessions/clips."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    children = sorted({x.child_id for x in items})
    if len(children) < k:
        raise ValueError(f"need at least {k} distinct children, got {len(children)}")
    order = np.random.default_rng(seed).permutation(len(children))
    shuffled = [children[i] for i in order]
    everyone = frozenset(children)
    folds = []
    for i, part in enumerate(np.array_split(np.arange(len(shuffled)), k)):
        test = frozenset(shuffled[j] for j in part)
        folds.append(FoldManifest(i + 1, everyone - test, test))
    return folds
