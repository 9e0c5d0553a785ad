"""Training driver: two learning rates, new-bob decay, per-fold runs,
resumable checkpoints and cross-validation summaries."""
import copy
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from ._util import __version__, stable_hash
from .corpus import INVENTORIES, SAMPLE_RATE, Session
from .framing import FrameSpec, center_windows, frame_count, window_labels
from .metrics import (DiarizationTimeline, Segment, UndefinedMetricError, accuracy, der_components, f1_unweighted,
                      speech_timeline, timeline_to_segments, uar)
from .model import DualChannelClassifier, ModelConfig, multitask_loss, save_checkpoint

logger = logging.getLogger(__name__)

MINIMIZE = ("der", "loss")


class NonFiniteLossError(RuntimeError):
    """Training loss became NaN/inf; ``batch_ids`` names the offending examples."""

    def __init__(self, message, batch_ids):
        super().__init__(message)
        self.batch_ids = list(batch_ids)


@dataclass(frozen=True)
class OptimConfig:
    lr_head: float = 1e-4
    lr_encoder: float = 1e-5
    epochs: int = 10
    batch_size: int = 32
    newbob_factor: float = 0.5
    newbob_patience: int = 1
    newbob_threshold: float = 0.0025
    selection_metric: str = "mean_f1"
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr_head > 0:
            raise ValueError("lr_head must be > 0")
        # 0 is allowed and means a frozen encoder
        if self.lr_encoder < 0:
            raise ValueError("lr_encoder must be >= 0")
        if not 0 < self.newbob_factor < 1:
            raise ValueError("newbob_factor must lie in (0, 1)")
        if self.newbob_patience < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("patience and batch_size must be >= 1, epochs >= 0")
        object.__setattr__(self, "betas", tuple(self.betas))

    def to_dict(self):
        return asdict(self)


class NewBob:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs
    without a relative improvement of at least ``threshold`` over the best
    metric so far."""

    def __init__(self, factor=0.5, patience=1, threshold=0.0025, mode="max"):
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.mode = mode
        self.best = None
        self.bad_epochs = 0
        self.scale = 1.0

    def improved(self, metric):
        if self.best is None:
            return True
        margin = self.threshold * abs(self.best)
        if self.mode == "max":
            return metric > self.best + margin
        return metric < self.best - margin

    def step(self, metric):
        """Record one epoch's metric; returns the LR scale for the next epoch."""
        if self.improved(metric):
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.scale *= self.factor
                self.bad_epochs = 0
        return self.scale

    def state_dict(self):
        return {"best": self.best, "bad_epochs": self.bad_epochs, "scale": self.scale}

    def load_state_dict(self, d):
        self.best, self.bad_epochs, self.scale = d["best"], d["bad_epochs"], d["scale"]


def newbob_plan(metrics, factor=0.5, patience=1, threshold=0.0025, mode="max"):
    """LR scale in effect at epochs 0..len(metrics) for a metric sequence."""
    sched = NewBob(factor, patience, threshold, mode)
    scales = [1.0]
    for m in metrics:
        scales.append(sched.step(m))
    return scales[:len(metrics) + 1]


# ---------------------------------------------------------------------------
# examples
# ---------------------------------------------------------------------------

class FrameSet:
    """Indexable training or evaluation examples.

    ``kind='frames'``: 2 s two-channel frames cut from sessions, one per hop.
    ``kind='clips'``: whole single-channel clips. Audio is cut lazily per
    batch; only (source, offset) pairs and labels are stored.
    """

    def __init__(self, kind, sources, refs, labels, ctc=None, spec=None, complete=True):
        self.kind = kind
        self.sources = list(sources)
        self.refs = np.asarray(refs, dtype=np.int64).reshape(-1, 2)
        self.labels = {k: np.asarray(v, dtype=np.int64) for k, v in labels.items()}
        self.ctc = ctc
        self.spec = spec or FrameSpec()
        # every frame of every session present, in order: DER is computable
        self.complete = complete

    def __len__(self):
        return len(self.refs)

    @classmethod
    def from_sessions(cls, sessions, tiers, spec=FrameSpec(), pseudo=None):
        refs, ctc = [], []
        labels = {t.inventory: [] for t in tiers}
        by_session = _pseudo_by_session(pseudo) if pseudo is not None else None
        for si, sess in enumerate(sessions):
            n = frame_count(sess.duration_s, spec)
            a, b = center_windows(n, spec)
            for t in tiers:
                labels[t.inventory].append(window_labels(sess.tier_segments(t.channel), a, b,
                                                         INVENTORIES[t.inventory]))
            refs.extend((si, i) for i in range(n))
            if by_session is not None:
                ctc.extend(_frame_transcripts(by_session.get(sess.session_id, []), a, b))
        labels = {k: np.concatenate(v) if v else np.zeros(0, np.int64) for k, v in labels.items()}
        return cls("frames", sessions, refs, labels, ctc if pseudo is not None else None, spec)

    @classmethod
    def from_clips(cls, clips, tiers, pseudo=None):
        if len(tiers) != 1:
            raise ValueError("clip corpora carry a single label tier")
        inv = INVENTORIES[tiers[0].inventory]
        labels = {tiers[0].inventory: [inv.index(c.label) for c in clips]}
        ctc = None
        if pseudo is not None:
            lookup = {r.id: r.transcript.phone_ids for r in pseudo}
            ctc = [tuple(lookup.get(c.clip_id, ())) for c in clips]
        return cls("clips", clips, [(i, 0) for i in range(len(clips))], labels, ctc)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        ctc = [self.ctc[i] for i in idx] if self.ctc is not None else None
        return FrameSet(self.kind, self.sources, self.refs[idx],
                        {k: v[idx] for k, v in self.labels.items()}, ctc, self.spec, complete=False)

    def example_id(self, i):
        si, fi = self.refs[i]
        src = self.sources[si]
        if self.kind == "clips":
            return src.clip_id
        return f"{src.session_id}@{round(fi * self.spec.hop_s, 6)}"

    def batch(self, idx, channels, min_samples=0):
        """(waves, lengths, targets, ctc_targets, ids) for example indices ``idx``."""
        if self.kind == "frames":
            n = self.spec.frame_samples
            waves = {}
            for ch in channels:
                out = np.zeros((len(idx), n), dtype=np.float32)
                for row, i in enumerate(idx):
                    si, fi = self.refs[i]
                    audio = self.sources[si].audio(ch)
                    s = int(round(fi * self.spec.hop_s * SAMPLE_RATE))
                    piece = audio[s:s + n]
                    out[row, :len(piece)] = piece
                waves[ch] = torch.from_numpy(out)
            lengths = None
        else:
            clips = [self.sources[self.refs[i][0]] for i in idx]
            n = max(max(len(c.audio) for c in clips), min_samples)
            out = np.zeros((len(clips), n), dtype=np.float32)
            for row, c in enumerate(clips):
                out[row, :len(c.audio)] = c.audio
            lens = torch.tensor([max(len(c.audio), min_samples) for c in clips])
            waves = {ch: torch.from_numpy(out) for ch in channels}
            lengths = {ch: lens for ch in channels}
        targets = {k: torch.from_numpy(v[idx]) for k, v in self.labels.items()}
        ctc = [self.ctc[i] for i in idx] if self.ctc is not None else None
        return waves, lengths, targets, ctc, [self.example_id(i) for i in idx]


def _pseudo_by_session(records):
    out = {}
    for r in records:
        sid = r.id.rsplit(":", 1)[0]
        out.setdefault(sid, []).append(r)
    return out


def _frame_transcripts(records, starts, ends):
    """Transcript of the segment overlapping each center window most; empty if none."""
    out = []
    for a, b in zip(starts, ends):
        best, best_ov = (), 0.0
        for r in records:
            ov = min(b, r.end_s) - max(a, r.start_s)
            if ov > best_ov + 1e-12:
                best, best_ov = r.transcript.phone_ids, ov
        out.append(tuple(best))
    return out


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@torch.no_grad()
def predict(model, frames, batch_size=32, return_logits=False):
    """Argmax class index per tier for every example (and the logits)."""
    was = model.training
    model.eval()
    preds = {k: [] for k in frames.labels}
    logit_parts = {k: [] for k in frames.labels}
    min_len = max(model.encoder_for(ch).profile.min_samples for ch in model.config.channels)
    try:
        for k in range(0, len(frames), batch_size):
            idx = np.arange(k, min(k + batch_size, len(frames)))
            waves, lengths, _, _, _ = frames.batch(idx, model.config.channels, min_len)
            out = model(waves, lengths)
            for tier, logits in out.logits.items():
                preds[tier].append(logits.argmax(-1).numpy())
                logit_parts[tier].append(logits)
    finally:
        model.train(was)
    preds = {k: np.concatenate(v) if v else np.zeros(0, np.int64) for k, v in preds.items()}
    if return_logits:
        return preds, {k: torch.cat(v) for k, v in logit_parts.items() if v}
    return preds


def reference_segments(session, channels, t0=None, t1=None):
    """Labelled segments of ``channels`` as metric segments, clipped to [t0, t1)."""
    out = []
    for ch in channels:
        for s in session.tier_segments(ch):
            a = s.start_s if t0 is None else max(s.start_s, t0)
            b = s.end_s if t1 is None else min(s.end_s, t1)
            if b > a:
                out.append(Segment(ch, s.label, a, b))
    return out


def session_timelines(frames, preds, tiers):
    """Per-session :class:`DiarizationTimeline` of predicted classes."""
    out = []
    starts = np.flatnonzero(np.r_[True, np.diff(frames.refs[:, 0]) != 0])
    bounds = np.r_[starts, len(frames)]
    for a, b in zip(bounds[:-1], bounds[1:]):
        sess = frames.sources[frames.refs[a, 0]]
        chans = {t.channel: preds[t.inventory][a:b] for t in tiers}
        invs = {t.channel: INVENTORIES[t.inventory] for t in tiers}
        out.append((sess, DiarizationTimeline(chans, invs, frames.spec.hop_s, frames.spec.center_offset_s)))
    return out


def corpus_der(timelines, collar_s=0.25, median_len=11):
    """Pooled DER (%) over sessions: total error time / total scored speech.

    Scoring is restricted to the span the frame grid covers.
    """
    tot = {"scored_ref_s": 0.0, "missed_s": 0.0, "false_alarm_s": 0.0, "confusion_s": 0.0}
    for sess, tl in timelines:
        hyp = timeline_to_segments(speech_timeline(tl, median_len))
        span = (tl.offset_s, tl.offset_s + len(tl) * tl.hop_s)
        ref = reference_segments(sess, sorted(tl.channels), *span)
        hyp = [Segment(s.channel, s.label, max(s.start_s, span[0]), min(s.end_s, span[1])) for s in hyp]
        for k, v in der_components(ref, hyp, collar_s).items():
            tot[k] += v
    err = tot["missed_s"] + tot["false_alarm_s"] + tot["confusion_s"]
    if tot["scored_ref_s"] <= 0:
        return None
    return 100.0 * err / tot["scored_ref_s"]


def score(frames, preds, tiers, collar_s=0.25, median_len=11, logits=None):
    """Frame-level F1 (with and without silence), UAR and accuracy per tier,
    their mean F1, the mean tier cross-entropy (``loss``, when ``logits`` are
    given) and, for complete sessions, DER."""
    m = {}
    if logits is not None:
        ces = [torch.nn.functional.cross_entropy(logits[t.inventory],
                                                 torch.from_numpy(frames.labels[t.inventory]))
               for t in tiers]
        m["loss"] = float(torch.stack(ces).mean())
    for t in tiers:
        inv = INVENTORIES[t.inventory]
        ref, hyp = frames.labels[t.inventory], np.asarray(preds[t.inventory])
        m[f"f1_{t.inventory}"] = f1_unweighted(ref, hyp, len(inv))
        try:
            m[f"f1ns_{t.inventory}"] = f1_unweighted(ref, hyp, len(inv), exclude=(inv.silence_index,))
        except UndefinedMetricError:
            m[f"f1ns_{t.inventory}"] = None
        m[f"uar_{t.inventory}"] = uar(ref, hyp, len(inv))
        m[f"acc_{t.inventory}"] = accuracy(ref, hyp)
    m["mean_f1"] = float(np.mean([m[f"f1_{t.inventory}"] for t in tiers]))
    m["der"] = None
    if frames.kind == "frames" and frames.complete:
        m["der"] = corpus_der(session_timelines(frames, preds, tiers), collar_s, median_len)
    return m


def evaluate(model, frames, tiers, collar_s=0.25, median_len=11, batch_size=32):
    """:func:`score` of the model's predictions; returns (metrics, predictions)."""
    preds, logits = predict(model, frames, batch_size, return_logits=True)
    return score(frames, preds, tiers, collar_s, median_len, logits), preds


def sample_indices(labels, policy=None, seed=0):
    """Frame indices after per-tier class caps and minimums (see
    :class:`~dualvc.framing.SamplingPolicy`); labels are class-name keyed."""
    n = len(next(iter(labels.values()))) if labels else 0
    keep = np.arange(n)
    if policy is None or not (policy.caps or policy.minimums):
        return keep
    rng = np.random.default_rng(seed)
    for tier in sorted(policy.caps):
        inv = INVENTORIES[tier]
        for label, cap in sorted(policy.caps[tier].items()):
            hit = labels[tier][keep] == inv.index(label)
            if hit.sum() > cap:
                chosen = rng.choice(keep[hit], size=cap, replace=False)
                keep = np.sort(np.concatenate([keep[~hit], chosen]))
    extra = []
    for tier in sorted(policy.minimums):
        inv = INVENTORIES[tier]
        for label, floor in sorted(policy.minimums[tier].items()):
            pool = keep[labels[tier][keep] == inv.index(label)]
            if 0 < len(pool) < floor:
                extra.extend(rng.choice(pool, size=floor - len(pool), replace=True).tolist())
    return np.sort(np.concatenate([keep, np.asarray(extra, dtype=np.int64)]))


# ---------------------------------------------------------------------------
# run record
# ---------------------------------------------------------------------------

@dataclass
class RunRecord:
    fold_id: int = None
    seed: int = 0
    config_hash: str = None
    version: str = __version__
    protocol: str = "test-selection"
    selection_metric: str = "mean_f1"
    optim: dict = field(default_factory=dict)
    epochs: list = field(default_factory=list)
    best_epoch: int = None
    best_metric: float = None
    best_checkpoint: str = None
    test_metrics: dict = None
    completed: bool = False

    @property
    def metric_sequence(self):
        return [e["metrics"].get(self.selection_metric) for e in self.epochs]

    @property
    def lr_trajectory(self):
        return [(e["lr_head"], e["lr_encoder"]) for e in self.epochs]

    def final_metrics(self):
        """Metrics used for reporting: the held-out test pass for the dev
        protocol, otherwise the best epoch's evaluation."""
        if self.test_metrics is not None:
            return self.test_metrics
        if self.best_epoch is None:
            return {}
        return self.epochs[self.best_epoch]["metrics"]

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path):
        return cls(**json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def set_deterministic(flag=True):
    torch.use_deterministic_algorithms(flag)
    if flag:
        os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")


def encoder_parameters(model):
    mods = [model.encoder] + ([model.child_encoder] if model.child_encoder is not None else [])
    seen, out = set(), []
    for m in mods:
        for p in m.parameters():
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                out.append(p)
    return out


def head_parameters(model):
    """Everything trainable outside the encoders: heads, layer weights, mixers, CTC head."""
    enc = {id(p) for p in encoder_parameters(model)}
    if model.pr_encoder is not None:
        enc |= {id(p) for p in model.pr_encoder.parameters()}
    return [p for p in model.parameters() if p.requires_grad and id(p) not in enc]


def build_optimizer(model, optim):
    groups = [{"params": head_parameters(model), "lr": optim.lr_head, "name": "head"}]
    if optim.lr_encoder > 0:
        groups.append({"params": encoder_parameters(model), "lr": optim.lr_encoder, "name": "encoder"})
    return torch.optim.Adam(groups, betas=optim.betas, eps=optim.eps)


def _epoch_order(n, seed, epoch):
    g = torch.Generator().manual_seed(int(seed) * 1_000_003 + int(epoch))
    return torch.randperm(n, generator=g).numpy()


def _set_scale(opt, optim, scale):
    for g in opt.param_groups:
        g["lr"] = (optim.lr_head if g["name"] == "head" else optim.lr_encoder) * scale


def train_fold(model_config, optim, train_set, eval_set, *, seed=0, fold_id=None,
               config_hash=None, protocol="test-selection", test_set=None, out_dir=None,
               resume=False, collar_s=0.25, median_len=11, eval_batch_size=None,
               checkpoint_config=None, checkpoint_extra=None):
    """Train one fold and return its :class:`RunRecord`.

    Every epoch optimises over ``train_set``, scores ``eval_set`` and applies
    new-bob to both learning rates. The best epoch's weights are kept (and
    written to ``out_dir/best.pt``). Under the dev protocol ``test_set`` is
    scored once with those weights at the end. ``resume`` continues from
    ``out_dir/state.pt`` if present.
    """
    if isinstance(model_config, dict):
        model_config = ModelConfig.from_dict(model_config)
    tiers = model_config.tiers
    config_hash = config_hash or stable_hash({"model": model_config.to_dict(), "optim": optim.to_dict()})
    torch.manual_seed(seed)
    model = DualChannelClassifier(model_config)
    opt = build_optimizer(model, optim)
    mode = "min" if optim.selection_metric in MINIMIZE else "max"
    sched = NewBob(optim.newbob_factor, optim.newbob_patience, optim.newbob_threshold, mode)
    record = RunRecord(fold_id, seed, config_hash, __version__, protocol, optim.selection_metric, optim.to_dict())
    best_state = None
    out_dir = Path(out_dir) if out_dir is not None else None
    start_epoch = 0
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        state_path = out_dir / "state.pt"
        if resume and state_path.exists():
            st = torch.load(state_path, map_location="cpu", weights_only=False)
            if st["config_hash"] != config_hash:
                raise ValueError(f"{state_path} belongs to config {st['config_hash']}, not {config_hash}")
            model.load_state_dict(st["model"])
            opt.load_state_dict(st["optimizer"])
            sched.load_state_dict(st["scheduler"])
            record = RunRecord(**st["record"])
            best_state = st["best_state"]
            start_epoch = st["next_epoch"]
            logger.info("resuming %s at epoch %d", out_dir, start_epoch)

    ctc_weight = model_config.aux_ctc.loss_weight if model_config.aux_ctc else 0.0
    channels = model_config.channels
    min_len = max(model.encoder_for(ch).profile.min_samples for ch in channels)
    eval_bs = eval_batch_size or optim.batch_size

    for epoch in range(start_epoch, optim.epochs):
        _set_scale(opt, optim, sched.scale)
        model.train()
        order = _epoch_order(len(train_set), seed, epoch)
        tot, n_seen, skipped = 0.0, 0, 0
        for k in range(0, len(order), optim.batch_size):
            idx = order[k:k + optim.batch_size]
            waves, lengths, targets, ctc, ids = train_set.batch(idx, channels, min_len)
            out = model(waves, lengths)
            loss, terms = multitask_loss(out, targets, ctc, ctc_weight)
            if not torch.isfinite(loss):
                if out_dir is not None:
                    (out_dir / "nonfinite_batch.json").write_text(json.dumps(
                        {"epoch": epoch, "batch_ids": ids,
                         "terms": {k2: float(v) for k2, v in terms.items()}}, indent=2))
                raise NonFiniteLossError(f"non-finite loss at epoch {epoch}: {ids}", ids)
            opt.zero_grad()
            loss.backward()
            opt.step()
            tot += float(loss.detach()) * len(idx)
            n_seen += len(idx)
            skipped += terms["ctc_skipped"]
        metrics, _ = evaluate(model, eval_set, tiers, collar_s, median_len, eval_bs)
        value = metrics.get(optim.selection_metric)
        if value is None:
            raise ValueError(f"selection metric {optim.selection_metric!r} is unavailable on this eval set")
        record.epochs.append({
            "epoch": epoch,
            "lr_head": opt.param_groups[0]["lr"],
            "lr_encoder": optim.lr_encoder * sched.scale,
            "train_loss": tot / max(n_seen, 1),
            "ctc_skipped": skipped,
            "metrics": metrics,
        })
        better = record.best_metric is None or (value > record.best_metric if mode == "max"
                                                else value < record.best_metric)
        if better:
            record.best_epoch, record.best_metric = epoch, value
            best_state = copy.deepcopy(model.state_dict())
            if out_dir is not None:
                save_checkpoint(out_dir / "best.pt", model,
                                checkpoint_config or {"model": model_config.to_dict(), "optim": optim.to_dict()},
                                {**(checkpoint_extra or {}), "epoch": epoch, "metric": value,
                                 "fold_id": fold_id, "run_config_hash": config_hash})
                record.best_checkpoint = str(out_dir / "best.pt")
            else:
                record.best_checkpoint = f"epoch-{epoch}"
        sched.step(value)
        if out_dir is not None:
            torch.save({"model": model.state_dict(), "optimizer": opt.state_dict(),
                        "scheduler": sched.state_dict(), "record": record.to_dict(),
                        "best_state": best_state, "next_epoch": epoch + 1,
                        "config_hash": config_hash}, out_dir / "state.pt")
            record.save(out_dir / "run_record.json")

    if best_state is not None:
        model.load_state_dict(best_state)
    if test_set is not None and best_state is not None:
        record.test_metrics, _ = evaluate(model, test_set, tiers, collar_s, median_len, eval_bs)
    record.completed = True
    if out_dir is not None:
        record.save(out_dir / "run_record.json")
    return record, model


def dev_split(items, fraction=0.2, seed=0):
    """Hold out whole children from ``items`` as a development set."""
    children = sorted({x.child_id for x in items})
    n_dev = max(1, int(round(fraction * len(children))))
    if n_dev >= len(children):
        raise ValueError("not enough children for a development split")
    perm = np.random.default_rng(seed).permutation(len(children))
    dev = {children[i] for i in perm[:n_dev]}
    return [x for x in items if x.child_id not in dev], [x for x in items if x.child_id in dev]


def make_frame_set(items, tiers, spec=FrameSpec(), pseudo=None):
    if items and isinstance(items[0], Session):
        return FrameSet.from_sessions(items, tiers, spec, pseudo)
    return FrameSet.from_clips(items, tiers, pseudo)


REPORT_KEYS = ("der", "f1_ADU", "f1_CHI", "f1_BABBLE", "uar_BABBLE", "mean_f1")


def cross_validate(records, sample_std=True):
    """Per-fold and mean/std summary of completed :class:`RunRecord` objects."""
    if not records:
        raise ValueError("no run records")
    per_fold = []
    for r in records:
        fm = r.final_metrics()
        per_fold.append({"fold_id": r.fold_id, **{k: fm[k] for k in REPORT_KEYS if fm.get(k) is not None}})
    keys = [k for k in REPORT_KEYS if all(k in f for f in per_fold)]
    mean, std = {}, {}
    if len(records) == 1:
        logger.warning("single fold: standard deviations reported as 0")
    for k in keys:
        vals = np.array([f[k] for f in per_fold], dtype=float)
        mean[k] = float(vals.mean())
        std[k] = float(vals.std(ddof=1 if sample_std else 0)) if len(vals) > 1 else 0.0
    protocols = sorted({r.protocol for r in records})
    return {
        "protocol": protocols[0] if len(protocols) == 1 else protocols,
        "std": "sample" if sample_std else "population",
        "config_hash": records[0].config_hash,
        "version": __version__,
        "per_fold": per_fold,
        "mean": mean,
        "std_dev": std,
    }

