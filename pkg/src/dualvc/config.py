"""Experiment configuration: one YAML file fully determines a run."""
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from ._util import stable_hash
from .framing import FrameSpec, SamplingPolicy
from .model import ConfigError, ModelConfig
from .training import OptimConfig

CORPUS_MODES = ("rabc_two_channel", "babblecor_single")
PROTOCOLS = ("test-selection", "dev-selection")


class ConfigValidationError(ValueError):
    pass


@dataclass
class CorpusConfig:
    mode: str = "rabc_two_channel"
    manifest: str = None
    folds: int = 3
    fold_seed: int = 0
    pseudo_manifest: str = None
    inventory: str = None


@dataclass
class EvalConfig:
    protocol: str = "test-selection"
    dev_fraction: float = 0.2
    collar_s: float = 0.25
    median_len: int = 11
    sample_std: bool = True
    bootstrap: int = 0


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    frames: FrameSpec = field(default_factory=FrameSpec)
    sampling: SamplingPolicy = field(default_factory=SamplingPolicy)
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    # energy-threshold baseline rows: {"mode": "unsupervised"|"weak", "median_len": 11}
    baseline: dict = None
    # published numbers for this row, kept for context only
    reported: dict = field(default_factory=dict)
    notes: str = ""

    def to_dict(self):
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    def config_hash(self):
        """Hash of everything that affects results (``reported``/``notes`` excluded)."""
        d = self.to_dict()
        d.pop("reported", None)
        d.pop("notes", None)
        d.pop("name", None)
        return stable_hash(d)

    def with_overrides(self, seed=None):
        d = self.to_dict()
        if seed is not None:
            d["seed"] = int(seed)
        return ExperimentConfig.from_dict(d)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigValidationError(f"unknown config keys: {sorted(unknown)}")
        try:
            cfg = cls(
                name=str(d.get("name", "experiment")),
                seed=int(d.get("seed", 0)),
                corpus=CorpusConfig(**(d.get("corpus") or {})),
                frames=FrameSpec(**(d.get("frames") or {})),
                sampling=SamplingPolicy(**(d.get("sampling") or {})),
                model=ModelConfig.from_dict(d.get("model") or {}),
                optim=OptimConfig(**(d.get("optim") or {})),
                eval=EvalConfig(**(d.get("eval") or {})),
                baseline=dict(d["baseline"]) if d.get("baseline") else None,
                reported=dict(d.get("reported") or {}),
                notes=str(d.get("notes") or ""),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigValidationError(str(exc)) from exc
        cfg.validate()
        return cfg

    def validate(self):
        if self.corpus.mode not in CORPUS_MODES:
            raise ConfigValidationError(f"corpus.mode must be one of {CORPUS_MODES}")
        if self.eval.protocol not in PROTOCOLS:
            raise ConfigValidationError(f"eval.protocol must be one of {PROTOCOLS}")
        if self.eval.median_len < 1 or self.eval.median_len % 2 == 0:
            raise ConfigValidationError("eval.median_len must be an odd integer >= 1")
        if self.corpus.mode == "rabc_two_channel" and self.corpus.folds < 2:
            raise ConfigValidationError("corpus.folds must be >= 2")
        tiers = self.model.tiers
        if self.corpus.mode == "babblecor_single":
            if [t.inventory for t in tiers] != ["BABBLE"]:
                raise ConfigValidationError("babblecor_single needs exactly one BABBLE tier")
            if self.optim.selection_metric == "der":
                raise ConfigValidationError("DER is undefined for single-clip corpora")
        if self.corpus.mode == "rabc_two_channel" and any(t.inventory == "BABBLE" for t in tiers):
            raise ConfigValidationError("BABBLE tier is only valid for babblecor_single")
        if self.baseline is not None:
            if self.baseline.get("mode") not in ("unsupervised", "weak"):
                raise ConfigValidationError("baseline.mode must be 'unsupervised' or 'weak'")
            if self.corpus.mode != "rabc_two_channel":
                raise ConfigValidationError("energy baselines need a two-channel corpus")
        if self.model.aux_ctc and not self.corpus.pseudo_manifest:
            raise ConfigValidationError("aux_ctc needs corpus.pseudo_manifest")
        # stub-only models are cheap to build, which surfaces dimension and
        # tap-layer errors now; pretrained encoders are checked when loaded
        encs = [self.model.encoder, self.model.child_encoder, self.model.pr_encoder]
        if all(e is None or e.get("type", "stub") == "stub" for e in encs):
            from .model import DualChannelClassifier
            try:
                DualChannelClassifier(self.model)
            except ConfigError as exc:
                raise ConfigValidationError(str(exc)) from exc
        else:
            for t in tiers:
                if t.comb.kind in ("C3_sum_pr", "C4_concat_pr") and not self.model.pr_encoder:
                    raise ConfigValidationError(f"{t.comb.kind} needs model.pr_encoder")


def load_config(path):
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigValidationError(f"{path}: {exc}") from exc
    cfg = ExperimentConfig.from_dict(data)
    root = path.parent
    for attr in ("manifest", "pseudo_manifest", "inventory"):
        val = getattr(cfg.corpus, attr)
        if val and not val.startswith("<") and not Path(val).is_absolute():
            setattr(cfg.corpus, attr, str((root / val).resolve()))
    return cfg


def dump_config(cfg, path):
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
