"""Deterministic synthetic corpora in the on-disk formats of :mod:`dualvc.corpus`.

Each vocal class is rendered with its own spectral signature (harmonic
complexes, gated noise, glides) so that a small encoder can tell them
apart. The foreground signal of each channel is copied into the other
channel attenuated by ``bleed_db``.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import (
    BABBLE, SAMPLE_RATE, AnnotatedSegment, normalize_segments,
    write_manifest, write_session_files, write_wav,
)

DEFAULT_MIX = {
    "adult": {"VOC": 0.35, "LAU": 0.03},
    "child": {"VOC": 0.08, "VERB": 0.05, "LAU": 0.03, "CRY": 0.05},
}
SEG_LEN_S = {"VOC": (0.4, 2.5), "LAU": (0.3, 1.2), "VERB": (0.5, 2.0), "CRY": (0.8, 3.0)}


@dataclass
class FixtureSpec:
    n_sessions: int = 2
    duration_s: float = 60.0
    n_children: int = None
    class_mix: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_MIX.items()})
    bleed_db: float = -15.0
    fg_db: float = -10.0
    noise_db: float = -60.0
    level_jitter_db: float = 1.0

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _fade(x, n=160):
    n = min(n, len(x) // 2)
    if n:
        ramp = 0.5 - 0.5 * np.cos(np.linspace(0, np.pi, n))
        x[:n] *= ramp
        x[-n:] *= ramp[::-1]
    return x


def _harmonic(f0_track, n_harm, tilt=1.0):
    phase = 2 * np.pi * np.cumsum(f0_track) / SAMPLE_RATE
    out = np.zeros_like(f0_track)
    for h in range(1, n_harm + 1):
        alias = h * f0_track < SAMPLE_RATE / 2
        out += alias * np.sin(h * phase) / h**tilt
    return out


def _bandnoise(n, lo, hi, rng):
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1 / SAMPLE_RATE)
    spec[(freqs < lo) | (freqs > hi)] = 0
    return np.fft.irfft(spec, n)


def _gate(n, rate_hz, duty=0.5):
    t = np.arange(n) / SAMPLE_RATE
    return ((t * rate_hz) % 1.0 < duty).astype(float)


def render_class(channel, label, n, rng):
    """Unit-RMS waveform of ``n`` samples for one vocal class."""
    t = np.arange(n) / SAMPLE_RATE
    if channel == "adult":
        if label == "VOC":
            f0 = rng.uniform(110, 190) * (1 + 0.1 * np.sin(2 * np.pi * 0.7 * t))
            x = _harmonic(f0, 20) * (0.6 + 0.4 * np.sin(2 * np.pi * 4 * t) ** 2)
        else:  # LAU
            x = _bandnoise(n, 500, 3000, rng) * _gate(n, 6, 0.4)
    elif label in ("VOC", "NON-CAN"):
        f0 = rng.uniform(300, 380) * np.ones(n)
        x = _harmonic(f0, 8, tilt=1.5)
    elif label == "VERB":
        f0 = rng.uniform(240, 300) * (1 + 0.15 * np.sin(2 * np.pi * 3 * t))
        x = _harmonic(f0, 10) * _gate(n, 3, 0.7) + 0.3 * _bandnoise(n, 2000, 5000, rng)
    elif label == "CAN":
        f0 = rng.uniform(300, 380) * np.ones(n)
        burst = min(n, int(0.06 * SAMPLE_RATE))
        x = _harmonic(f0, 8, tilt=1.5)
        x[:burst] = 3 * _bandnoise(burst, 3000, 7000, rng)
    elif label == "LAU":
        f0 = rng.uniform(330, 420) * np.ones(n)
        x = (_harmonic(f0, 6) + _bandnoise(n, 800, 4000, rng)) * _gate(n, 5, 0.4)
    elif label == "CRY":
        f0 = rng.uniform(480, 600) * (1 + 0.2 * np.sin(np.pi * t / max(t[-1], 1e-3)))
        x = _harmonic(f0, 12, tilt=0.6)
    else:  # JUNK
        x = 0.05 * _bandnoise(n, 50, 400, rng)
    rms = np.sqrt(np.mean(x**2))
    return _fade(x / rms if rms > 0 else x)


def _place(mix, duration, rng):
    """Random non-overlapping (label, start, end) triples hitting class totals."""
    pieces = []
    for label, frac in mix.items():
        target = int(round(frac * duration * 1000))
        lo, hi = SEG_LEN_S.get(label, (0.4, 2.0))
        left = target
        while left > 0:
            d = int(round(rng.uniform(lo, hi) * 1000))
            d = min(d, left)
            if left - d < lo * 1000 * 0.5 and left - d > 0:
                d = left
            pieces.append((label, d))
            left -= d
    total = sum(d for _, d in pieces)
    silence = int(round(duration * 1000)) - total
    if silence < 0:
        raise ValueError("class mix exceeds session duration")
    order = rng.permutation(len(pieces))
    gaps = rng.dirichlet(np.ones(len(pieces) + 1)) * silence if pieces else np.array([silence])
    gaps = np.floor(gaps).astype(int)
    out = []
    cursor = 0
    for gap, i in zip(gaps, order):
        label, d = pieces[i]
        cursor += gap
        out.append((label, cursor / 1000, (cursor + d) / 1000))
        cursor += d
    return out


def render_session(spec, index, seed):
    """Return (adult, child, segments) for one synthetic session."""
    rng = np.random.default_rng([seed, index])
    n = int(round(spec.duration_s * SAMPLE_RATE))
    fg = {ch: np.zeros(n) for ch in ("adult", "child")}
    segments = []
    for ch, tier in (("adult", "ADU"), ("child", "CHI")):
        for label, a, b in _place(spec.class_mix.get(ch, {}), spec.duration_s, rng):
            i0, i1 = int(round(a * SAMPLE_RATE)), int(round(b * SAMPLE_RATE))
            level = spec.fg_db + rng.uniform(-spec.level_jitter_db, spec.level_jitter_db)
            fg[ch][i0:i1] += 10 ** (level / 20) * render_class(ch, label, i1 - i0, rng)
            segments.append(AnnotatedSegment(ch, tier, label, a, b))
    gain = 0.0 if spec.bleed_db is None or not np.isfinite(spec.bleed_db) else 10 ** (spec.bleed_db / 20)
    adult = fg["adult"] + gain * fg["child"]
    child = fg["child"] + gain * fg["adult"]
    if spec.noise_db is not None and np.isfinite(spec.noise_db):
        sigma = 10 ** (spec.noise_db / 20)
        adult = adult + sigma * rng.standard_normal(n)
        child = child + sigma * rng.standard_normal(n)
    return adult, child, normalize_segments(segments)


def generate_fixture(spec, seed, out_dir):
    """Write a synthetic two-channel corpus; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_children = spec.n_children or spec.n_sessions
    rows = []
    for i in range(spec.n_sessions):
        adult, child, segs = render_session(spec, i, seed)
        rows.append(write_session_files(out_dir, f"s{i:03d}", f"c{i % n_children:03d}", adult, child, segs))
    manifest = out_dir / "manifest.jsonl"
    write_manifest(manifest, rows)
    return manifest


def generate_clip_fixture(out_dir, seed, n_per_class=6, n_children=6, clip_s=(0.3, 0.45),
                          splits=("train", "dev", "test"), fg_db=-12.0, noise_db=-60.0):
    """Single-channel BABBLE clip corpus with a speaker-disjoint split per child."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for split in splits:
        for label in BABBLE.classes:
            for j in range(n_per_class):
                n = int(rng.uniform(*clip_s) * SAMPLE_RATE)
                x = 10 ** (fg_db / 20) * render_class("child", label, n, rng)
                if noise_db is not None:
                    x = x + 10 ** (noise_db / 20) * rng.standard_normal(n)
                cid = f"{split}_{label}_{j:03d}"
                write_wav(out_dir / f"{cid}.wav", x)
                rows.append({"clip_id": cid, "child_id": f"{split}-k{j % n_children}",
                             "audio": f"{cid}.wav", "label": label, "split": split})
    manifest = out_dir / "clips.jsonl"
    write_manifest(manifest, rows)
    return manifest


PHONE_FREQS = (220.0, 330.0, 470.0, 620.0, 800.0, 1000.0, 1250.0, 1500.0)


def render_phones(phone_ids, rng, phone_s=0.07, gap_s=0.04, lead_s=0.1, level_db=-12.0):
    """Toy 'utterance': each phone id is a tone cluster separated by short silences.

    Phones are kept to a few encoder frames. A long stationary tone gives
    identical frames, and CTC then has a spurious optimum where the phone
    is smeared thinly over all of them instead of emitted.
    """
    parts = [np.zeros(int(lead_s * SAMPLE_RATE))]
    for p in phone_ids:
        n = int(phone_s * SAMPLE_RATE * rng.uniform(0.85, 1.15))
        f = PHONE_FREQS[p % len(PHONE_FREQS)] * (1 + 0.5 * (p // len(PHONE_FREQS)))
        t = np.arange(n) / SAMPLE_RATE
        x = np.sin(2 * np.pi * f * t) + 0.5 * np.sin(2 * np.pi * 2 * f * t)
        parts.append(_fade(x / np.sqrt(np.mean(x**2))) * 10 ** (level_db / 20))
        parts.append(np.zeros(int(gap_s * SAMPLE_RATE)))
    parts.append(np.zeros(int(lead_s * SAMPLE_RATE)))
    return np.concatenate(parts).astype(np.float32)


def write_fixture_spec(path, spec):
    Path(path).write_text(json.dumps(spec.__dict__, indent=2, sort_keys=True))
