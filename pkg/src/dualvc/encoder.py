"""Speech encoders that expose per-layer hidden sequences, plus pooling.

Downstream code only relies on :class:`EncoderProfile` and on ``forward``
returning a :class:`LayerFeatureSet`. :class:`StubEncoder` is a small,
seeded, checkpoint-free encoder for tests; :class:`HFWav2Vec2Encoder` wraps
pretrained wav2vec 2.0 checkpoints from ``transformers``.
"""
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .corpus import SAMPLE_RATE


class EncoderInputError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderProfile:
    name: str
    num_layers: int
    hidden_dim: int
    frame_rate_hz: float
    min_samples: int = 400

    def __post_init__(self):
        if self.num_layers < 1 or self.hidden_dim < 1:
            raise ValueError("num_layers and hidden_dim must be >= 1")


@dataclass
class LayerFeatureSet:
    """``layers[l]`` is ``[B, T, D]`` (or ``[T, D]`` when unbatched)."""
    layers: tuple
    lengths: torch.Tensor = None

    @property
    def num_layers(self):
        return len(self.layers)

    def layer(self, k):
        """1-indexed layer access."""
        return self.layers[k - 1]


def _mel_filterbank(n_fft, n_mels, rate, fmin=40.0, fmax=None):
    fmax = fmax or rate / 2
    mel = lambda f: 2595.0 * np.log10(1.0 + f / 700.0)  # noqa: E731
    imel = lambda m: 700.0 * (10 ** (m / 2595.0) - 1.0)  # noqa: E731
    pts = imel(np.linspace(mel(fmin), mel(fmax), n_mels + 2))
    freqs = np.fft.rfftfreq(n_fft, 1.0 / rate)
    fb = np.zeros((len(freqs), n_mels))
    for m in range(n_mels):
        lo, c, hi = pts[m], pts[m + 1], pts[m + 2]
        up = (freqs - lo) / (c - lo)
        down = (hi - freqs) / (hi - c)
        fb[:, m] = np.clip(np.minimum(up, down), 0, None)
    return fb


class StubEncoder(nn.Module):
    """Log-mel front end followed by seeded random residual projections.

    Frame ``t`` covers samples ``[t*hop, t*hop + 2*hop)`` of the right-padded
    input, so ``T = n_samples // hop``.
    """

    def __init__(self, seed=0, num_layers=2, hidden_dim=16, frame_rate_hz=50, n_mels=40):
        super().__init__()
        hop = SAMPLE_RATE / frame_rate_hz
        if hop != int(hop):
            raise ValueError("frame_rate_hz must divide the sample rate")
        self.hop = int(hop)
        self.win = 2 * self.hop
        self.n_fft = 1 << (self.win - 1).bit_length()
        self.profile = EncoderProfile(
            f"stub-s{seed}-l{num_layers}-d{hidden_dim}", num_layers, hidden_dim, frame_rate_hz, self.win
        )
        g = torch.Generator().manual_seed(int(seed))
        self.register_buffer("window", torch.hann_window(self.win, periodic=True, dtype=torch.float64).float())
        self.register_buffer("fbank", torch.tensor(_mel_filterbank(self.n_fft, n_mels, SAMPLE_RATE),
                                                   dtype=torch.float32))
        self.proj_in = nn.Parameter(torch.randn(n_mels, hidden_dim, generator=g) / n_mels**0.5)
        self.weights = nn.ParameterList(
            nn.Parameter(torch.randn(hidden_dim, hidden_dim, generator=g) / hidden_dim**0.5)
            for _ in range(num_layers)
        )
        self.biases = nn.ParameterList(
            nn.Parameter(0.1 * torch.randn(hidden_dim, generator=g)) for _ in range(num_layers)
        )

    def output_lengths(self, n_samples):
        return torch.div(torch.as_tensor(n_samples), self.hop, rounding_mode="floor")

    def forward(self, wave, lengths=None):
        if wave.dim() == 1:
            wave = wave[None]
        if wave.shape[-1] < self.profile.min_samples:
            raise EncoderInputError(
                f"input has {wave.shape[-1]} samples, encoder needs >= {self.profile.min_samples}; "
                "zero-pad the waveform"
            )
        n_frames = wave.shape[-1] // self.hop
        x = torch.nn.functional.pad(wave, (0, self.win))
        frames = x.unfold(-1, self.win, self.hop)[:, :n_frames] * self.window.to(x.dtype)
        power = torch.fft.rfft(frames, n=self.n_fft).abs() ** 2
        logmel = torch.log(power @ self.fbank.to(x.dtype) + 1e-8)
        h = ((logmel + 8.0) / 4.0) @ self.proj_in
        layers = []
        scale = self.profile.hidden_dim ** 0.5
        for w, b in zip(self.weights, self.biases):
            h = h + torch.tanh(h @ w / scale * 2.0 + b)
            layers.append(h)
        out_len = None
        if lengths is not None:
            out_len = self.output_lengths(lengths).clamp(min=1, max=n_frames)
        return LayerFeatureSet(tuple(layers), out_len)


class HFWav2Vec2Encoder(nn.Module):
    """wav2vec 2.0 checkpoint (hub id or local path) from ``transformers``.

    ``include_cnn_output`` prepends the feature-projection output so that a
    12-layer model yields 13 sequences.
    """

    def __init__(self, source, include_cnn_output=False, name=None):
        super().__init__()
        from transformers import Wav2Vec2Config, Wav2Vec2Model

        if isinstance(source, Wav2Vec2Config):
            self.model = Wav2Vec2Model(source)
        else:
            self.model = Wav2Vec2Model.from_pretrained(source)
        self.include_cnn_output = include_cnn_output
        cfg = self.model.config
        stride = int(np.prod(cfg.conv_stride))
        layers = cfg.num_hidden_layers + (1 if include_cnn_output else 0)
        self.profile = EncoderProfile(name or str(getattr(cfg, "_name_or_path", "") or "wav2vec2"),
                                      layers, cfg.hidden_size, SAMPLE_RATE / stride, 400)

    def output_lengths(self, n_samples):
        return self.model._get_feat_extract_output_lengths(torch.as_tensor(n_samples))

    def forward(self, wave, lengths=None):
        if wave.dim() == 1:
            wave = wave[None]
        if wave.shape[-1] < self.profile.min_samples:
            raise EncoderInputError(
                f"input has {wave.shape[-1]} samples, encoder needs >= {self.profile.min_samples}; "
                "zero-pad the waveform"
            )
        mask = None
        if lengths is not None and self.model.config.feat_extract_norm == "layer":
            mask = (torch.arange(wave.shape[-1])[None] < lengths[:, None]).long()
        out = self.model(wave, attention_mask=mask, output_hidden_states=True)
        hs = out.hidden_states if self.include_cnn_output else out.hidden_states[1:]
        out_len = self.output_lengths(lengths) if lengths is not None else None
        return LayerFeatureSet(tuple(hs), out_len)


def build_encoder(cfg):
    """Encoder from a config mapping with ``type`` = ``stub`` or ``hf``."""
    cfg = dict(cfg)
    kind = cfg.pop("type", "stub")
    trainable = cfg.pop("trainable", True)
    if kind == "stub":
        enc = StubEncoder(**cfg)
    elif kind == "hf":
        enc = HFWav2Vec2Encoder(cfg["path"], cfg.get("include_cnn_output", False), cfg.get("name"))
    else:
        raise ValueError(f"unknown encoder type {kind!r}")
    if not trainable:
        enc.requires_grad_(False)
    return enc


def stub_encoder(seed, num_layers, hidden_dim, frame_rate=50):
    return StubEncoder(seed, num_layers, hidden_dim, frame_rate)


@torch.no_grad()
def encode(encoder, waveform):
    """Per-layer features of one waveform, in inference mode."""
    was_training = encoder.training
    encoder.eval()
    try:
        x = torch.as_tensor(np.asarray(waveform, dtype=np.float32))
        feats = encoder(x[None] if x.dim() == 1 else x)
    finally:
        encoder.train(was_training)
    return LayerFeatureSet(tuple(layer[0] for layer in feats.layers))


def pool_utterance(features, lengths=None):
    """Time-mean of every layer: ``[L, B, D]`` (``[L, D]`` for unbatched input).

    ``lengths`` (or ``features.lengths``) masks out padded frames.
    """
    layers = torch.stack([torch.as_tensor(x) for x in features.layers])
    lengths = features.lengths if lengths is None else lengths
    if lengths is None:
        return layers.mean(dim=-2)
    T = layers.shape[-2]
    mask = (torch.arange(T)[None] < torch.as_tensor(lengths)[:, None]).to(layers.dtype)
    return (layers * mask[None, :, :, None]).sum(dim=-2) / mask.sum(dim=-1)[None, :, None]


class LayerWeights(nn.Module):
    """Softmax-normalised layer weights (logits initialised to zero)."""

    def __init__(self, num_layers):
        super().__init__()
        self.logits = nn.Parameter(torch.zeros(num_layers))

    def weights(self):
        return torch.softmax(self.logits, dim=0)

    def forward(self, pooled):
        return weighted_layer_avg(pooled, self.weights())


def weighted_layer_avg(pooled, weights):
    """``sum_l w_l * pooled[l]`` with ``w`` normalised to sum to one."""
    pooled = torch.as_tensor(pooled)
    if isinstance(weights, LayerWeights):
        w = weights.weights()
    else:
        w = torch.as_tensor(weights, dtype=pooled.dtype)
        w = w / w.sum()
    return torch.tensordot(w.to(pooled.dtype), pooled, dims=([0], [0]))
