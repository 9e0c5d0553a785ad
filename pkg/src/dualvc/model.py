"""Two-channel multi-task vocalization classifier.

Per output tier: encode the tier's foreground channel, mean-pool every
layer, take a learned weighted average over layers, optionally fuse with a
second utterance vector (the other channel, or a frozen phone-recognizer
encoder's last layer), and classify with a one-hidden-layer FFN. An
optional CTC head reads frame-level features of one encoder layer of the
child channel.
"""
from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from ._util import __version__, stable_hash
from .corpus import INVENTORIES
from .encoder import LayerWeights, build_encoder, pool_utterance

SUM_KINDS = ("C1_sum_cross", "C3_sum_pr")
CONCAT_KINDS = ("C2_concat_cross", "C4_concat_pr")
CROSS_KINDS = ("C1_sum_cross", "C2_concat_cross")
PR_KINDS = ("C3_sum_pr", "C4_concat_pr")
KINDS = ("none",) + SUM_KINDS + CONCAT_KINDS
OTHER_CHANNEL = {"adult": "child", "child": "adult"}
NEG = -1e30


class ConfigError(ValueError):
    """Model configuration is inconsistent."""


@dataclass(frozen=True)
class CombinationConfig:
    """``alpha`` weighs the tier's own channel, ``beta`` the second input."""
    kind: str = "none"
    alpha: float = 1.0
    beta: float = 0.0
    learnable: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown combination kind {self.kind!r}")
        if self.kind in SUM_KINDS:
            if self.alpha < 0 or self.beta < 0 or abs(self.alpha + self.beta - 1) > 1e-6:
                raise ConfigError(
                    f"{self.kind} needs alpha, beta >= 0 with alpha + beta = 1, "
                    f"got ({self.alpha}, {self.beta})"
                )


def combine(kind, fg, other=None, alpha=1.0, beta=0.0):
    """Fuse two utterance vectors: weighted sum, concatenation, or pass-through."""
    if kind == "none":
        return fg
    if kind in SUM_KINDS:
        if fg.shape[-1] != other.shape[-1]:
            raise ConfigError(f"{kind} needs equal dimensions, got {fg.shape[-1]} and {other.shape[-1]}")
        return alpha * fg + beta * other
    if kind in CONCAT_KINDS:
        return torch.cat([fg, other], dim=-1)
    raise ConfigError(f"unknown combination kind {kind!r}")


@dataclass(frozen=True)
class TierSpec:
    inventory: str
    channel: str
    comb: CombinationConfig = CombinationConfig()


@dataclass(frozen=True)
class AuxCtcConfig:
    tap_layer: int = 8
    num_phones: int = 53
    loss_weight: float = 1.0
    channel: str = "child"


@dataclass
class ModelConfig:
    encoder: dict = field(default_factory=lambda: {"type": "stub", "seed": 0, "num_layers": 2, "hidden_dim": 16})
    child_encoder: dict = None
    pr_encoder: dict = None
    tiers: tuple = (TierSpec("ADU", "adult"), TierSpec("CHI", "child"))
    aux_ctc: AuxCtcConfig = None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        tiers = []
        for t in d.get("tiers", ()):
            t = dict(t)
            t["comb"] = CombinationConfig(**t.get("comb", {}))
            tiers.append(TierSpec(**t))
        d["tiers"] = tuple(tiers) if tiers else cls.tiers
        if d.get("aux_ctc"):
            d["aux_ctc"] = AuxCtcConfig(**d["aux_ctc"])
        return cls(**d)

    @property
    def channels(self):
        chans = {t.channel for t in self.tiers}
        for t in self.tiers:
            if t.comb.kind in CROSS_KINDS:
                chans.add(OTHER_CHANNEL[t.channel])
        if self.aux_ctc:
            chans.add(self.aux_ctc.channel)
        return tuple(c for c in ("adult", "child") if c in chans)


@dataclass
class ModelOutput:
    logits: dict
    ctc_logits: torch.Tensor = None
    ctc_lengths: torch.Tensor = None

    @property
    def adu_logits(self):
        return self.logits.get("ADU")

    @property
    def chi_logits(self):
        return self.logits.get("CHI")


class TierHead(nn.Module):
    def __init__(self, in_dim, n_classes):
        super().__init__()
        self.ffn = nn.Sequential(nn.Linear(in_dim, in_dim), nn.LeakyReLU(), nn.Linear(in_dim, n_classes))

    def forward(self, x):
        return self.ffn(x)


class _Mixer(nn.Module):
    """Learnable convex pair ``(a, 1 - a)`` with ``a = sigmoid(logit)``."""

    def __init__(self, alpha):
        super().__init__()
        alpha = min(max(alpha, 1e-4), 1 - 1e-4)
        self.logit = nn.Parameter(torch.logit(torch.tensor(float(alpha))))

    def forward(self):
        a = torch.sigmoid(self.logit)
        return a, 1 - a


class DualChannelClassifier(nn.Module):
    def __init__(self, config):
        super().__init__()
        if isinstance(config, dict):
            config = ModelConfig.from_dict(config)
        self.config = config
        self.encoder = build_encoder(config.encoder)
        self.child_encoder = build_encoder(config.child_encoder) if config.child_encoder else None
        self.pr_encoder = None
        if config.pr_encoder:
            self.pr_encoder = build_encoder(config.pr_encoder)
            self.pr_encoder.requires_grad_(False)
        self._validate()
        self.layer_weights = nn.ModuleDict()
        self.heads = nn.ModuleDict()
        self.mixers = nn.ModuleDict()
        for t in config.tiers:
            prof = self.encoder_for(t.channel).profile
            self.layer_weights[t.inventory] = LayerWeights(prof.num_layers)
            in_dim = prof.hidden_dim
            if t.comb.kind == "C2_concat_cross":
                in_dim += self.encoder_for(OTHER_CHANNEL[t.channel]).profile.hidden_dim
            elif t.comb.kind == "C4_concat_pr":
                in_dim += self.pr_encoder.profile.hidden_dim
            self.heads[t.inventory] = TierHead(in_dim, len(INVENTORIES[t.inventory]))
            if t.comb.learnable and t.comb.kind in SUM_KINDS:
                self.mixers[t.inventory] = _Mixer(t.comb.alpha)
        self.ctc_head = None
        if config.aux_ctc:
            prof = self.encoder_for(config.aux_ctc.channel).profile
            self.ctc_head = nn.Linear(prof.hidden_dim, config.aux_ctc.num_phones + 1)

    def _validate(self):
        cfg = self.config
        if not cfg.tiers:
            raise ConfigError("at least one output tier is required")
        for t in cfg.tiers:
            if t.inventory not in INVENTORIES:
                raise ConfigError(f"unknown tier inventory {t.inventory!r}")
            if t.channel not in OTHER_CHANNEL:
                raise ConfigError(f"unknown channel {t.channel!r}")
            if t.comb.kind in PR_KINDS and self.pr_encoder is None:
                raise ConfigError(f"{t.comb.kind} on tier {t.inventory} needs a frozen pr_encoder")
            own = self.encoder_for(t.channel).profile.hidden_dim
            if t.comb.kind == "C1_sum_cross":
                other = self.encoder_for(OTHER_CHANNEL[t.channel]).profile.hidden_dim
                if other != own:
                    raise ConfigError(f"C1 needs equal dims, got {own} and {other}")
            if t.comb.kind == "C3_sum_pr" and self.pr_encoder.profile.hidden_dim != own:
                raise ConfigError(
                    f"C3 needs equal dims, got {own} and {self.pr_encoder.profile.hidden_dim}"
                )
        if cfg.aux_ctc:
            n = self.encoder_for(cfg.aux_ctc.channel).profile.num_layers
            if not 1 <= cfg.aux_ctc.tap_layer <= n:
                raise ConfigError(f"tap_layer {cfg.aux_ctc.tap_layer} outside 1..{n}")
            if cfg.aux_ctc.loss_weight < 0:
                raise ConfigError("aux CTC loss_weight must be >= 0")

    def encoder_for(self, channel):
        if channel == "child" and self.child_encoder is not None:
            return self.child_encoder
        return self.encoder

    def train(self, mode=True):
        super().train(mode)
        if self.pr_encoder is not None:
            self.pr_encoder.eval()
        return self

    def config_hash(self):
        return stable_hash(self.config.to_dict())

    def forward(self, waves, lengths=None):
        """``waves`` maps channel -> ``[B, N]`` float tensor."""
        lengths = lengths or {}
        feats = {}
        pooled = {}
        for ch in self.config.channels:
            feats[ch] = self.encoder_for(ch)(waves[ch], lengths.get(ch))
            pooled[ch] = pool_utterance(feats[ch])
        pr_vec = None
        if any(t.comb.kind in PR_KINDS for t in self.config.tiers):
            with torch.no_grad():
                pr = self.pr_encoder(waves["child"], lengths.get("child"))
                last = type(pr)((pr.layers[-1],), pr.lengths)
                pr_vec = pool_utterance(last)[0]
        logits = {}
        for t in self.config.tiers:
            lw = self.layer_weights[t.inventory]
            fg = lw(pooled[t.channel])
            kind = t.comb.kind
            other = None
            if kind in CROSS_KINDS:
                other = lw(pooled[OTHER_CHANNEL[t.channel]])
            elif kind in PR_KINDS:
                other = pr_vec
            if t.inventory in self.mixers:
                alpha, beta = self.mixers[t.inventory]()
            else:
                alpha, beta = t.comb.alpha, t.comb.beta
            logits[t.inventory] = self.heads[t.inventory](combine(kind, fg, other, alpha, beta))
        out = ModelOutput(logits)
        if self.ctc_head is not None:
            aux = self.config.aux_ctc
            tap = feats[aux.channel].layer(aux.tap_layer)
            out.ctc_logits = self.ctc_head(tap)
            n = feats[aux.channel].lengths
            out.ctc_lengths = n if n is not None else torch.full((tap.shape[0],), tap.shape[1])
        return out


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _lse3(a, b, c):
    m = torch.maximum(torch.maximum(a, b), c)
    return m + torch.log(torch.exp(a - m) + torch.exp(b - m) + torch.exp(c - m))


def ctc_feasible(target, n_frames):
    """True when ``target`` fits into ``n_frames`` under the blank/repeat rule."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats <= n_frames


def ctc_loss(log_probs, lengths, targets, blank):
    """Per-item CTC negative log-likelihood, ``[B]``.

    ``log_probs`` is ``[B, T, V]`` log-softmax output; ``targets`` a list of
    label-id sequences. Infeasible items come back as ``inf``.
    """
    B, T, _ = log_probs.shape
    dev = log_probs.device
    lengths = torch.as_tensor(lengths, device=dev).long()
    Lmax = max((len(t) for t in targets), default=0)
    S = 2 * Lmax + 1
    ext = torch.full((B, S), blank, dtype=torch.long, device=dev)
    s_len = torch.empty(B, dtype=torch.long, device=dev)
    for b, tgt in enumerate(targets):
        if len(tgt):
            ext[b, 1:2 * len(tgt):2] = torch.as_tensor(list(tgt), dtype=torch.long, device=dev)
        s_len[b] = 2 * len(tgt) + 1
    skip = torch.zeros(B, S, dtype=torch.bool, device=dev)
    skip[:, 2:] = (ext[:, 2:] != blank) & (ext[:, 2:] != ext[:, :-2])
    valid = torch.arange(S, device=dev)[None] < s_len[:, None]
    neg = torch.full((B, S), NEG, dtype=log_probs.dtype, device=dev)

    emit = log_probs.gather(2, ext[:, None, :].expand(B, T, S))  # [B, T, S]
    alpha = neg.clone()
    alpha[:, 0] = emit[:, 0, 0]
    if S > 1:
        alpha[:, 1] = torch.where(s_len > 1, emit[:, 0, 1], neg[:, 1])
    for t in range(1, T):
        a1 = torch.cat([neg[:, :1], alpha[:, :-1]], dim=1)
        a2 = torch.cat([neg[:, :2], alpha[:, :-2]], dim=1)[:, :S]
        a2 = torch.where(skip, a2, neg)
        new = _lse3(alpha, a1, a2) + emit[:, t]
        new = torch.where(valid, new, neg)
        alpha = torch.where((t < lengths)[:, None], new, alpha)
    last = alpha.gather(1, (s_len - 1)[:, None])[:, 0]
    prev = alpha.gather(1, (s_len - 2).clamp(min=0)[:, None])[:, 0]
    prev = torch.where(s_len > 1, prev, torch.full_like(prev, NEG))
    m = torch.maximum(last, prev)
    ll = m + torch.log(torch.exp(last - m) + torch.exp(prev - m))
    feasible = torch.tensor([ctc_feasible(t, int(n)) for t, n in zip(targets, lengths)], device=dev)
    return torch.where(feasible, -ll, torch.full_like(ll, float("inf")))


def multitask_loss(output, targets, ctc_targets=None, ctc_weight=0.0):
    """Mean of per-tier cross-entropies plus ``ctc_weight`` times the CTC term.

    Returns ``(total, terms)``. Items whose pseudo transcript cannot be
    aligned contribute zero and are counted in ``terms['ctc_skipped']``.
    """
    terms = {}
    ces = []
    for tier, logits in output.logits.items():
        ce = nn.functional.cross_entropy(logits, targets[tier])
        terms[f"ce_{tier}"] = ce
        ces.append(ce)
    total = torch.stack(ces).mean()
    terms["ctc"] = torch.zeros((), dtype=total.dtype)
    terms["ctc_skipped"] = 0
    if ctc_weight > 0 and output.ctc_logits is not None and ctc_targets is not None:
        lp = torch.log_softmax(output.ctc_logits, dim=-1)
        per_item = ctc_loss(lp, output.ctc_lengths, ctc_targets, blank=lp.shape[-1] - 1)
        ok = torch.isfinite(per_item)
        terms["ctc_skipped"] = int((~ok).sum())
        if ok.any():
            # infeasible items add zero but still count in the batch mean
            terms["ctc"] = per_item[ok].sum() / per_item.numel()
        total = total + ctc_weight * terms["ctc"]
    terms["total"] = total
    return total, terms


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

class CheckpointMismatchError(RuntimeError):
    pass


def save_checkpoint(path, model, config, extra=None):
    """One archive: weights (encoders, layer weights, heads) and the config."""
    torch.save({
        "format": "dualvc-checkpoint-1",
        "version": __version__,
        "config": config,
        "config_hash": stable_hash(config),
        "model_config": model.config.to_dict(),
        "state_dict": model.state_dict(),
        "ctc_blank": "last",
        "extra": extra or {},
    }, path)


def load_checkpoint(path, expected_config=None):
    """Rebuild the model; refuses a checkpoint built from a different config."""
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if stable_hash(blob["config"]) != blob["config_hash"]:
        raise CheckpointMismatchError(f"{path}: stored config does not match its hash")
    if expected_config is not None and stable_hash(expected_config) != blob["config_hash"]:
        raise CheckpointMismatchError(
            f"{path}: config hash {blob['config_hash']} differs from expected {stable_hash(expected_config)}"
        )
    model = DualChannelClassifier(ModelConfig.from_dict(blob["model_config"]))
    model.load_state_dict(blob["state_dict"])
    return model, blob
