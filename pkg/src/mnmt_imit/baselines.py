"""Reference extension regimes: plain fine-tuning and on-the-fly self imitation."""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable, Mapping, Sequence

from .data import LanguageTag, ParallelCorpus
from .imitation import LanguageWeights, RunConfig, StepLog, train_imit
from .model import DEFAULT_BATCH_SIZE, DEFAULT_BEAM, DEFAULT_LR, TranslationModel

KINDS = ("imit", "finetune", "on_the_fly")
_KIND_ALIASES = {"on-the-fly": "on_the_fly", "otf": "on_the_fly", "ft": "finetune"}


def normalize_kind(kind: str) -> str:
    kind = _KIND_ALIASES.get(kind, kind)
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    return kind


@dataclass(frozen=True)
class BaselineRunConfig:
    kind: str = "finetune"
    k: int | None = None
    direction: str = "new2orig"
    steps: int = 1500
    lr: float = DEFAULT_LR
    batch_size: int = DEFAULT_BATCH_SIZE
    beam: int = DEFAULT_BEAM
    seed: int = 0
    weights_mode: str = "bleu"
    clip_norm: float | None = None
    checkpoint_every: int = 0

    def __post_init__(self):
        kind = normalize_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind == "finetune" and self.k not in (None, 0):
            raise ValueError("finetune takes no k")
        if kind == "on_the_fly" and (self.k is None or self.k < 1):
            raise ValueError("on_the_fly needs k >= 1")
        self.run_config()

    def run_config(self) -> RunConfig:
        shared = {f.name: getattr(self, f.name) for f in fields(RunConfig) if f.name != "k"}
        return RunConfig(k=self.k or 0, **shared)

    @classmethod
    def from_dict(cls, d: Mapping) -> "BaselineRunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown run-config keys: {sorted(unknown)}")
        return cls(**dict(d))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _as_run_config(cfg, kind: str) -> RunConfig:
    if isinstance(cfg, BaselineRunConfig):
        if cfg.kind != kind:
            raise ValueError(f"config is for {cfg.kind}, not {kind}")
        return cfg.run_config()
    return cfg


def run_finetune(expert: TranslationModel, gold: ParallelCorpus, cfg: BaselineRunConfig | RunConfig,
                 originals: Sequence[LanguageTag] = (), log: Callable[[StepLog], None] | None = None,
                 checkpoint: Callable | None = None) -> TranslationModel:
    """Gold-only training of an expert copy; the imitation loop with ``k = 0``."""
    rc = _as_run_config(cfg, "finetune")
    if rc.k != 0:
        raise ValueError("finetune runs with k = 0")
    return train_imit(expert, gold, rc, None, originals=tuple(originals), log=log, checkpoint=checkpoint)


def run_on_the_fly(expert: TranslationModel, gold: ParallelCorpus, cfg: BaselineRunConfig | RunConfig,
                   weights: LanguageWeights | None = None, originals: Sequence[LanguageTag] | None = None,
                   log: Callable[[StepLog], None] | None = None, checkpoint: Callable | None = None) -> TranslationModel:
    """Like imitation, but the model being trained generates its own pseudo data.

    ``weights`` come from the initial expert and stay fixed.
    """
    rc = _as_run_config(cfg, "on_the_fly")
    if rc.k < 1:
        raise ValueError("on_the_fly needs k >= 1")
    return train_imit(expert, gold, rc, weights, originals=originals, frozen_generator=False,
                      log=log, checkpoint=checkpoint)
