"""Extending a frozen multilingual expert to a new language by imitation.

Each training batch of new<->pivot gold pairs is expanded online: ``k``
original languages are sampled, the expert translates the pivot side of
every pair into each of them, and the learner is trained on

    total = L_gold + sum_k W(lang_k) * L_imit(lang_k)

where both terms are per-pair summed cross-entropies averaged over their
pairs, and ``W`` is proportional to the expert's pivot->language BLEU,
renormalised over the sampled languages to sum to ``k``.
"""
from __future__ import annotations

import logging
import random
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import torch

from .corpus import BOS, EOS, encode_for_model
from .data import LanguageTag, ParallelCorpus
from .metrics import corpus_bleu
from .model import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_BEAM,
    DEFAULT_LR,
    ExpertMutationError,
    TranslationModel,
    apply_update,
    generate,
    iterate_batches,
    sequence_nll,
    translate,
)

logger = logging.getLogger(__name__)

NEW_TO_ORIG = "new2orig"
ORIG_TO_NEW = "orig2new"
DIRECTIONS = (NEW_TO_ORIG, ORIG_TO_NEW)
_DIRECTION_ALIASES = {"new->orig": NEW_TO_ORIG, "orig->new": ORIG_TO_NEW, "n2o": NEW_TO_ORIG, "o2n": ORIG_TO_NEW}


class GeneratorMismatchError(RuntimeError):
    """Pseudo data was not produced by the model the caller expected."""


def normalize_direction(direction: str) -> str:
    d = _DIRECTION_ALIASES.get(direction, direction)
    if d not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    return d


@dataclass(frozen=True)
class RunConfig:
    k: int = 4
    direction: str = NEW_TO_ORIG
    steps: int = 1500
    lr: float = DEFAULT_LR
    batch_size: int = DEFAULT_BATCH_SIZE
    beam: int = DEFAULT_BEAM
    seed: int = 0
    weights_mode: str = "bleu"
    clip_norm: float | None = None
    checkpoint_every: int = 0

    def __post_init__(self):
        object.__setattr__(self, "direction", normalize_direction(self.direction))
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.steps < 0 or self.batch_size < 1 or self.beam < 1:
            raise ValueError("steps >= 0, batch_size >= 1 and beam >= 1 required")
        if self.weights_mode not in ("bleu", "uniform"):
            raise ValueError("weights_mode must be 'bleu' or 'uniform'")

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        names = set(cls.__dataclass_fields__)
        unknown = set(d) - names - {"kind"}
        if unknown:
            raise ValueError(f"unknown run-config keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in names})

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


@dataclass(frozen=True)
class KLanguageSample:
    langs: tuple
    batch_index: int = 0


def sample_k_languages(originals: Sequence[LanguageTag], k: int, rng: random.Random, batch_index: int = 0) -> KLanguageSample:
    """``k`` distinct languages drawn uniformly, returned in ``originals`` order."""
    originals = list(originals)
    if not 1 <= k <= len(originals):
        raise ValueError(f"k must be in [1, {len(originals)}], got {k}")
    picked = set(rng.sample(originals, k))
    return KLanguageSample(tuple(lang for lang in originals if lang in picked), batch_index)


@dataclass(frozen=True)
class PseudoCorpus:
    """Expert-generated pairs for one batch.

    ``pairs`` holds ``(src_ids, tgt_ids, (src_lang, tgt_lang))``.
    """

    pairs: tuple
    generator_hash: str
    beam: int
    direction: str
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.pairs)

    def languages(self) -> list:
        """Original language of every pair (the non-new side)."""
        idx = 1 if self.direction == NEW_TO_ORIG else 0
        return [lp[idx] for _, _, lp in self.pairs]


def empty_pseudo(generator_hash: str, beam: int, direction: str) -> PseudoCorpus:
    return PseudoCorpus((), generator_hash, beam, normalize_direction(direction))


def build_pseudo_batch(expert: TranslationModel, gold: Sequence, sample: KLanguageSample, direction: str,
                       beam: int = DEFAULT_BEAM, new_lang: LanguageTag | None = None,
                       pivot: LanguageTag | None = None, allow_learner: bool = False) -> PseudoCorpus:
    """Translate the pivot side of each gold pair into every sampled language.

    ``gold`` holds ``(x_new, x_pivot)`` sentence pairs. For ``new2orig`` a
    pseudo pair is ``(x_new, gen(x_pivot -> lang))``; for ``orig2new`` it is
    ``(gen(x_pivot -> lang), x_new)``. Empty generations are dropped and
    counted. The generator must be a frozen expert unless ``allow_learner``.
    """
    direction = normalize_direction(direction)
    if expert.role != "expert" and not allow_learner:
        raise ExpertMutationError("pseudo data must come from a frozen expert")
    if new_lang is None or pivot is None:
        raise ValueError("new_lang and pivot are required")
    tok = expert.tokenizer
    before = expert.param_hash()
    srcs, meta = [], []
    for x_new, x_piv in gold:
        piv_ids = tok.encode(x_piv)
        for lang in sample.langs:
            srcs.append((tok.tag_id(pivot), tok.tag_id(lang), *piv_ids, EOS))
            meta.append((x_new, lang))
    longest = max((len(s) for s in srcs), default=0)
    max_len = min(expert.config.max_decode_len, 2 * longest + 4)
    gens = generate(expert, srcs, beam, max_len) if srcs else []
    if expert.param_hash() != before:
        raise ExpertMutationError("generator parameters changed during generation")

    pairs, dropped = [], 0
    # a generation cut at the length limit gets an eos appended; keep room for it
    limit = expert.config.max_decode_len - 1
    for (x_new, lang), gen in zip(meta, gens):
        body = tuple(i for i in gen[1:] if i != EOS)[:limit]
        if not body:
            dropped += 1
            continue
        if direction == NEW_TO_ORIG:
            src = encode_for_model(tok, x_new, new_lang, lang, "source")
            pairs.append((src, (BOS, *body, EOS), (new_lang, lang)))
        else:
            src = (tok.tag_id(lang), tok.tag_id(new_lang), *body, EOS)
            pairs.append((src, encode_for_model(tok, x_new, lang, new_lang, "target"), (lang, new_lang)))
    if dropped:
        logger.debug("dropped %d empty generations", dropped)
    return PseudoCorpus(tuple(pairs), before, beam, direction, dropped)


@dataclass(frozen=True)
class LanguageWeights:
    bleu: dict
    weights: dict
    k: int
    mode: str = "bleu"

    def for_sample(self, langs: Sequence[LanguageTag]) -> dict:
        """Weights renormalised over ``langs`` so they sum to ``len(langs)``."""
        langs = list(langs)
        missing = [lang for lang in langs if lang not in self.bleu]
        if missing:
            raise KeyError(f"no weight for languages {missing}")
        if self.mode == "uniform":
            return {lang: 1.0 for lang in langs}
        return weights_from_bleu({lang: self.bleu[lang] for lang in langs}, len(langs))


def weights_from_bleu(bleu: Mapping[LanguageTag, float], k: int) -> dict:
    """``W(l) = B(l) / sum(B) * k``; uniform ones when every score is zero."""
    total = float(sum(bleu.values()))
    if any(b < 0 for b in bleu.values()):
        raise ValueError("BLEU scores must be non-negative")
    if total <= 0:
        warnings.warn("all BLEU scores are zero; falling back to uniform language weights", RuntimeWarning)
        return {lang: 1.0 for lang in bleu}
    return {lang: b / total * k for lang, b in bleu.items()}


def compute_language_weights(expert: TranslationModel, devsets: Mapping[LanguageTag, ParallelCorpus], k: int,
                             pivot: LanguageTag | None = None, mode: str = "bleu", beam: int = DEFAULT_BEAM) -> LanguageWeights:
    """Score the expert on pivot->language dev sets and derive weights.

    Dev sets may be stored in either orientation; each is read as
    pivot -> language.
    """
    bleu = {}
    for lang, dev in devsets.items():
        if dev.src_lang == lang:
            dev = dev.reversed()
        if dev.tgt_lang != lang or (pivot is not None and dev.src_lang != pivot):
            raise ValueError(f"dev set for {lang} must pair it with the pivot")
        hyps = translate(expert, dev.sources, dev.src_lang, lang, beam)
        bleu[lang] = corpus_bleu(hyps, dev.targets)
    if mode == "uniform":
        weights = {lang: 1.0 for lang in bleu}
    else:
        weights = weights_from_bleu(bleu, k)
    return LanguageWeights(bleu, weights, k, mode)


@dataclass(frozen=True)
class ImitLossBreakdown:
    gold_loss: float
    imit_losses: dict
    weights: dict
    total: float

    @property
    def weighted_imit(self) -> float:
        return sum(self.weights[lang] * v for lang, v in self.imit_losses.items())


def _gold_encodings(tok, gold: Sequence, direction: str, new_lang: LanguageTag, pivot: LanguageTag) -> list:
    out = []
    for x_new, x_piv in gold:
        if direction == NEW_TO_ORIG:
            out.append((encode_for_model(tok, x_new, new_lang, pivot, "source"),
                        encode_for_model(tok, x_piv, new_lang, pivot, "target")))
        else:
            out.append((encode_for_model(tok, x_piv, pivot, new_lang, "source"),
                        encode_for_model(tok, x_new, pivot, new_lang, "target")))
    return out


def imit_objective(learner: TranslationModel, gold_batch: Sequence, pseudo: PseudoCorpus,
                   weights: LanguageWeights | Mapping | None, train: bool = True) -> tuple:
    """The composite loss as a float64 tensor plus its breakdown.

    ``gold_batch`` holds encoded ``(src_ids, tgt_ids)`` pairs. One forward
    pass covers gold and pseudo pairs; the loss is split afterwards.
    """
    langs = pseudo.languages()
    sampled = list(dict.fromkeys(langs))
    if isinstance(weights, LanguageWeights):
        w = weights.for_sample(sampled) if sampled else {}
    else:
        w = {lang: float((weights or {})[lang]) for lang in sampled}
    items = list(gold_batch) + [(s, t) for s, t, _ in pseudo.pairs]
    nll = sequence_nll(learner, [s for s, _ in items], [t for _, t in items], train=train).double()
    n_gold = len(gold_batch)
    gold_loss = nll[:n_gold].mean()
    total = gold_loss
    imit = {}
    pseudo_nll = nll[n_gold:]
    for lang in sampled:
        idx = torch.tensor([i for i, x in enumerate(langs) if x == lang])
        loss = pseudo_nll[idx].mean()
        imit[lang] = loss
        total = total + w[lang] * loss
    breakdown = ImitLossBreakdown(
        gold_loss=gold_loss.item(),
        imit_losses={lang: v.item() for lang, v in imit.items()},
        weights=dict(w),
        total=total.item(),
    )
    return total, breakdown


def imit_loss_step(learner: TranslationModel, gold_batch: Sequence, pseudo: PseudoCorpus,
                   weights: LanguageWeights | Mapping | None, direction: str, lr: float = DEFAULT_LR,
                   expected_hash: str | None = None, clip_norm: float | None = None) -> ImitLossBreakdown:
    """One optimisation step on the composite objective; returns pre-update losses."""
    learner.check_mutable()
    if normalize_direction(direction) != pseudo.direction:
        raise ValueError("pseudo data was built for the other direction")
    if expected_hash is not None and pseudo.generator_hash != expected_hash:
        raise GeneratorMismatchError("pseudo data hash does not match the expected generator")
    learner.net.train()
    total, breakdown = imit_objective(learner, gold_batch, pseudo, weights)
    apply_update(learner, total, lr, clip_norm)
    return breakdown


@dataclass
class StepLog:
    step: int
    breakdown: ImitLossBreakdown
    sample: tuple
    generator_hash: str
    dropped: int = 0

    def line(self) -> str:
        b = self.breakdown
        return "\t".join([str(self.step), f"{b.gold_loss:.6f}", f"{b.weighted_imit:.6f}", f"{b.total:.6f}",
                          ",".join(self.sample)])


def _gold_pairs(gold: ParallelCorpus) -> tuple:
    return gold.pairs, gold.src_lang, gold.tgt_lang


def train_imit(expert: TranslationModel, gold: ParallelCorpus, cfg: RunConfig,
               weights: LanguageWeights | None = None, originals: Sequence[LanguageTag] | None = None, *,
               frozen_generator: bool = True, log: Callable[[StepLog], None] | None = None,
               checkpoint: Callable[[int, TranslationModel], None] | None = None) -> TranslationModel:
    """Train a learner initialised from ``expert`` on ``gold`` (new, pivot) pairs.

    With ``frozen_generator=False`` the learner produces its own pseudo
    data (the on-the-fly regime); everything else is shared.
    """
    if expert.role != "expert":
        raise ValueError("train_imit needs a frozen expert")
    pairs, new_lang, pivot = _gold_pairs(gold)
    if originals is None:
        if weights is None:
            raise ValueError("pass weights or originals")
        originals = tuple(weights.bleu)
    if cfg.k > len(originals):
        raise ValueError(f"k={cfg.k} exceeds the {len(originals)} original languages")
    if cfg.k > 0 and weights is None:
        if cfg.weights_mode != "uniform":
            raise ValueError("bleu weighting needs precomputed LanguageWeights")
        weights = LanguageWeights({lang: 0.0 for lang in originals}, {lang: 1.0 for lang in originals}, cfg.k, "uniform")
    if weights is not None and cfg.weights_mode == "uniform" and weights.mode != "uniform":
        weights = replace(weights, mode="uniform", weights={lang: 1.0 for lang in weights.bleu})

    expert_hash = expert.param_hash()
    learner = expert.clone("learner")
    learner.reseed(cfg.seed)
    generator = expert if frozen_generator else learner
    batch_rng = random.Random(f"batches:{cfg.seed}")
    lang_rng = random.Random(f"languages:{cfg.seed}")
    tok = learner.tokenizer

    for step, batch in enumerate(iterate_batches(pairs, cfg.batch_size, batch_rng, cfg.steps)):
        gen_hash = expert_hash if frozen_generator else learner.param_hash()
        if cfg.k > 0:
            sample = sample_k_languages(originals, cfg.k, lang_rng, step)
            pseudo = build_pseudo_batch(generator, batch, sample, cfg.direction, cfg.beam, new_lang, pivot,
                                        allow_learner=not frozen_generator)
        else:
            sample = KLanguageSample((), step)
            pseudo = empty_pseudo(gen_hash, cfg.beam, cfg.direction)
        gold_batch = _gold_encodings(tok, batch, cfg.direction, new_lang, pivot)
        breakdown = imit_loss_step(learner, gold_batch, pseudo, weights, cfg.direction, cfg.lr,
                                   expected_hash=gen_hash, clip_norm=cfg.clip_norm)
        if log is not None:
            log(StepLog(step, breakdown, sample.langs, pseudo.generator_hash, pseudo.dropped))
        if checkpoint is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            checkpoint(step + 1, learner)

    if expert.param_hash() != expert_hash:
        raise ExpertMutationError("expert parameters changed during training")
    return learner
