"""Phone inventory, CTC greedy decoding, phone error rate, phone-recognizer
training and pseudo-transcript generation."""
import json
import logging
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import torch
from torch import nn

from . import kernels
from ._util import __version__
from .corpus import SAMPLE_RATE
from .encoder import build_encoder
from .model import ctc_feasible, ctc_loss

logger = logging.getLogger(__name__)

MAX_UTTERANCE_S = 15.0


@dataclass(frozen=True)
class PhoneInventory:
    """Ordered IPA symbols; the CTC blank takes the id right after the last phone."""
    phones: tuple

    def __post_init__(self):
        if len(set(self.phones)) != len(self.phones):
            raise ValueError("duplicate phone symbols")
        if "<blank>" in self.phones:
            raise ValueError("blank must not be listed as a phone")

    def __len__(self):
        return len(self.phones)

    @property
    def blank_id(self):
        return len(self.phones)

    def encode(self, text):
        """Space-separated IPA -> ids."""
        lookup = {p: i for i, p in enumerate(self.phones)}
        try:
            return tuple(lookup[p] for p in text.split())
        except KeyError as exc:
            raise ValueError(f"phone {exc} not in inventory") from exc

    def decode(self, ids):
        return " ".join(self.phones[i] for i in ids)


def load_inventory(path=None):
    """One symbol per line; line order is the id. Default: bundled 53-phone list."""
    if path is None:
        text = resources.files("dualvc").joinpath("data/ipa53.txt").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return PhoneInventory(tuple(line.strip() for line in text.splitlines() if line.strip()))


def write_inventory(path, inventory):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(inventory.phones) + "\n")


@dataclass(frozen=True)
class PhoneTranscript:
    phone_ids: tuple
    source: str = "reference"
    n_phones: int = None

    def __post_init__(self):
        object.__setattr__(self, "phone_ids", tuple(int(i) for i in self.phone_ids))
        if self.source not in ("reference", "pseudo", "hypothesis"):
            raise ValueError(f"bad transcript source {self.source!r}")
        if any(i < 0 for i in self.phone_ids):
            raise ValueError("negative phone id")
        if self.n_phones is not None and any(i >= self.n_phones for i in self.phone_ids):
            raise ValueError("transcript contains a blank or out-of-inventory id")

    def __len__(self):
        return len(self.phone_ids)


class EmptyReferenceError(ValueError):
    code = "empty-reference"


def greedy_decode(posteriors, source="hypothesis"):
    """Best path: per-frame argmax, collapse repeats, drop blanks (last column)."""
    post = np.asarray(posteriors)
    blank = post.shape[-1] - 1
    path = post.argmax(axis=-1)
    return PhoneTranscript(tuple(kernels.greedy_collapse(path, blank)), source, blank)


def per(ref, hyp):
    """Phone error rate (%) of one utterance, normalised by reference length."""
    r = ref.phone_ids if isinstance(ref, PhoneTranscript) else tuple(ref)
    h = hyp.phone_ids if isinstance(hyp, PhoneTranscript) else tuple(hyp)
    if not r:
        if not h:
            return 0.0
        raise EmptyReferenceError("empty reference with non-empty hypothesis")
    return 100.0 * kernels.levenshtein(r, h) / len(r)


def corpus_per(pairs):
    """Total edits over total reference length (%), plus the number of
    empty-reference utterances left out of the ratio."""
    edits = 0
    total = 0
    n_empty = 0
    for ref, hyp in pairs:
        r = ref.phone_ids if isinstance(ref, PhoneTranscript) else tuple(ref)
        h = hyp.phone_ids if isinstance(hyp, PhoneTranscript) else tuple(hyp)
        if not r:
            n_empty += 1
            continue
        edits += kernels.levenshtein(r, h)
        total += len(r)
    return (100.0 * edits / total if total else float("nan")), n_empty


class PrHead(nn.Module):
    """Linear -> LeakyReLU -> linear to phones + blank."""

    def __init__(self, hidden_dim, n_phones, width=384):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(hidden_dim, width), nn.LeakyReLU(), nn.Linear(width, n_phones + 1))

    def forward(self, x):
        return self.net(x)

    def posteriors(self, x):
        return torch.softmax(self(x), dim=-1)


class PrModel(nn.Module):
    """Encoder + :class:`PrHead` on the encoder's last layer."""

    def __init__(self, encoder, n_phones, width=384):
        super().__init__()
        self.encoder = encoder
        self.head = PrHead(encoder.profile.hidden_dim, n_phones, width)
        self.n_phones = n_phones
        self.width = width

    def forward(self, wave, lengths=None):
        feats = self.encoder(wave, lengths)
        logp = torch.log_softmax(self.head(feats.layers[-1]), dim=-1)
        n = feats.lengths if feats.lengths is not None else torch.full((logp.shape[0],), logp.shape[1])
        return logp, n

    @torch.no_grad()
    def transcribe(self, waveform, source="hypothesis"):
        was = self.training
        self.eval()
        try:
            x = np.asarray(waveform, dtype=np.float32)
            need = self.encoder.profile.min_samples
            if len(x) < need:
                x = np.pad(x, (0, need - len(x)))
            logp, _ = self(torch.tensor(x)[None])
        finally:
            self.train(was)
        return greedy_decode(logp[0].exp().numpy(), source)


@dataclass
class PrStage:
    """One fine-tuning stage: ``utterances`` is a list of (waveform, PhoneTranscript)."""
    name: str
    utterances: list
    epochs: int
    lr_head: float = 1e-3
    lr_encoder: float = 1e-5


@dataclass
class PrHistory:
    epoch_loss: list = field(default_factory=list)
    stage: list = field(default_factory=list)
    skipped_long: int = 0
    skipped_infeasible: int = 0


def _pad_batch(waves, min_len):
    n = max(max(len(w) for w in waves), min_len)
    out = np.zeros((len(waves), n), dtype=np.float32)
    for i, w in enumerate(waves):
        out[i, :len(w)] = w
    return torch.from_numpy(out), torch.tensor([max(len(w), min_len) for w in waves])


def train_pr(model, recipe, batch_size=8, seed=0):
    """CTC fine-tuning of encoder + head through the stages of ``recipe`` in order.

    Utterances of 15 s or longer and ones whose label sequence cannot align
    to the encoder output are skipped and counted in the history.
    """
    hist = PrHistory()
    gen = torch.Generator().manual_seed(seed)
    min_len = model.encoder.profile.min_samples
    for stage in recipe:
        if stage.epochs <= 0:
            continue
        usable = []
        for wave, tr in stage.utterances:
            if len(wave) >= MAX_UTTERANCE_S * SAMPLE_RATE:
                hist.skipped_long += 1
                continue
            n_out = int(model.encoder.output_lengths(max(len(wave), min_len)))
            if not ctc_feasible(tr.phone_ids, n_out):
                hist.skipped_infeasible += 1
                continue
            usable.append((np.asarray(wave, dtype=np.float32), tr.phone_ids))
        if not usable:
            logger.warning("stage %s has no usable utterances", stage.name)
            continue
        opt = torch.optim.Adam([
            {"params": [p for p in model.head.parameters()], "lr": stage.lr_head},
            {"params": [p for p in model.encoder.parameters() if p.requires_grad], "lr": stage.lr_encoder},
        ])
        model.train()
        for _ in range(stage.epochs):
            order = torch.randperm(len(usable), generator=gen).tolist()
            total, count = 0.0, 0
            for k in range(0, len(order), batch_size):
                batch = [usable[i] for i in order[k:k + batch_size]]
                x, lens = _pad_batch([b[0] for b in batch], min_len)
                logp, n = model(x, lens)
                loss = ctc_loss(logp, n, [b[1] for b in batch], blank=model.n_phones)
                opt.zero_grad()
                loss.mean().backward()
                opt.step()
                total += float(loss.detach().sum())
                count += len(batch)
            hist.epoch_loss.append(total / count)
            hist.stage.append(stage.name)
    model.eval()
    return model, hist


def save_pr_checkpoint(path, model, encoder_config, inventory):
    """Recognizer weights plus what is needed to rebuild it (blank = last id)."""
    torch.save({
        "format": "dualvc-pr-1",
        "version": __version__,
        "encoder": dict(encoder_config),
        "width": model.width,
        "phones": list(inventory.phones),
        "ctc_blank": "last",
        "state_dict": model.state_dict(),
    }, path)


def load_pr_checkpoint(path):
    """Returns ``(PrModel, PhoneInventory)`` in eval mode."""
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("format") != "dualvc-pr-1":
        raise ValueError(f"{path} is not a phone-recognizer checkpoint")
    inv = PhoneInventory(tuple(blob["phones"]))
    model = PrModel(build_encoder(blob["encoder"]), len(inv), blob["width"])
    model.load_state_dict(blob["state_dict"])
    return model.eval(), inv


@dataclass(frozen=True)
class PseudoRecord:
    id: str
    start_s: float
    end_s: float
    transcript: PhoneTranscript


def child_segment_items(sessions):
    """(id, start, end, child-channel audio) for every child vocal segment."""
    for sess in sessions:
        for k, seg in enumerate(sess.tier_segments("child")):
            a = int(round(seg.start_s * SAMPLE_RATE))
            b = int(round(seg.end_s * SAMPLE_RATE))
            yield f"{sess.session_id}:{k:04d}", seg.start_s, seg.end_s, sess.child_audio[a:b]


def clip_items(clips):
    for c in clips:
        yield c.clip_id, 0.0, round(len(c.audio) / SAMPLE_RATE, 6), c.audio


def gen_pseudo(pr_model, items):
    """Greedy-decode every item with the frozen recognizer; empties are kept."""
    return [PseudoRecord(i, a, b, pr_model.transcribe(w, source="pseudo")) for i, a, b, w in items]


def write_pseudo_manifest(path, records, inventory):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({
                "id": r.id, "start_s": r.start_s, "end_s": r.end_s,
                "phones": inventory.decode(r.transcript.phone_ids),
            }, ensure_ascii=False) + "\n")


def read_pseudo_manifest(path, inventory):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(PseudoRecord(d["id"], d["start_s"], d["end_s"],
                                        PhoneTranscript(inventory.encode(d["phones"]), "pseudo", len(inventory))))
    return out
