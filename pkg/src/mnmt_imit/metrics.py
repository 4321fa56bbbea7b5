"""Translation metrics and result analysis.

BLEU and chrF++ work on whitespace-tokenised sentences (tuples of words).
BLEU follows the usual corpus definition with a brevity penalty; a zero
match count at n >= 2 is smoothed to ``1 / (total + 1)``. chrF++ uses
character 1..6-grams (spaces removed) and word 1..2-grams, corpus-level
statistics, precision and recall averaged over orders, beta = 2.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import LanguageTag, Sentence
from .synthlang import LanguageFamily, oracle_langid

BLEU_ORDER = 4
CHRF_CHAR_ORDER = 6
CHRF_WORD_ORDER = 2
CHRF_BETA = 2
DEFAULT_ALPHA = 0.01
DEFAULT_TIER_CUTOFFS = (1000, 4000)
TIERS = ("Low", "Mid", "High")


def _check_lengths(hyps, refs) -> None:
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses but {len(refs)} references")
    if not hyps:
        raise ValueError("need at least one sentence")


def _ngrams(seq: Sequence, n: int) -> Counter:
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def bleu_stats(hyp: Sentence, ref: Sentence) -> np.ndarray:
    """``[match_1..4, total_1..4, hyp_len, ref_len]`` for one sentence."""
    out = np.zeros(2 * BLEU_ORDER + 2, dtype=np.int64)
    for n in range(1, BLEU_ORDER + 1):
        h = _ngrams(hyp, n)
        r = _ngrams(ref, n)
        out[n - 1] = sum(min(c, r[g]) for g, c in h.items())
        out[BLEU_ORDER + n - 1] = max(len(hyp) - n + 1, 0)
    out[-2] = len(hyp)
    out[-1] = len(ref)
    return out


def bleu_from_stats(stats: np.ndarray) -> float:
    match = stats[:BLEU_ORDER]
    total = stats[BLEU_ORDER:2 * BLEU_ORDER]
    hyp_len, ref_len = stats[-2], stats[-1]
    if hyp_len == 0 or match[0] == 0:
        return 0.0
    log_p = 0.0
    for n in range(BLEU_ORDER):
        m, t = float(match[n]), float(total[n])
        if n > 0 and m == 0:
            m, t = 1.0, t + 1.0
        log_p += math.log(m / t)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p / BLEU_ORDER)


def corpus_bleu(hyps: Sequence[Sentence], refs: Sequence[Sentence]) -> float:
    _check_lengths(hyps, refs)
    return bleu_from_stats(sum(bleu_stats(tuple(h), tuple(r)) for h, r in zip(hyps, refs)))


_PUNCT = set("!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~")


def _split_punct(words: Sentence) -> list:
    out = []
    for w in words:
        if len(w) > 1 and w[-1] in _PUNCT:
            out += [w[:-1], w[-1]]
        elif len(w) > 1 and w[0] in _PUNCT:
            out += [w[0], w[1:]]
        else:
            out.append(w)
    return out


def _chrf_stats(hyp: Sentence, ref: Sentence) -> np.ndarray:
    """Per order ``[hyp_count, ref_count, matches]``: char orders then word orders.

    A hypothesis count is zeroed when the reference has no n-gram of that
    order, and word n-grams split off leading or trailing punctuation.
    """
    out = []
    pairs = [(_ngrams("".join(hyp), n), _ngrams("".join(ref), n)) for n in range(1, CHRF_CHAR_ORDER + 1)]
    hw, rw = _split_punct(hyp), _split_punct(ref)
    pairs += [(_ngrams(hw, n), _ngrams(rw, n)) for n in range(1, CHRF_WORD_ORDER + 1)]
    for h, r in pairs:
        n_ref = sum(r.values())
        out += [sum(h.values()) if n_ref else 0, n_ref, sum((h & r).values())]
    return np.array(out, dtype=np.int64)


def _chrf_from_stats(stats: np.ndarray) -> float:
    beta2 = CHRF_BETA ** 2
    prec = rec = 0.0
    effective = 0
    for i in range(CHRF_CHAR_ORDER + CHRF_WORD_ORDER):
        n_hyp, n_ref, n_match = stats[3 * i:3 * i + 3]
        if n_hyp > 0 and n_ref > 0:
            prec += n_match / n_hyp
            rec += n_match / n_ref
            effective += 1
    if effective == 0:
        return 0.0
    prec /= effective
    rec /= effective
    if prec + rec == 0:
        return 0.0
    return 100.0 * (1 + beta2) * prec * rec / (beta2 * prec + rec)


def chrfpp(hyps: Sequence[Sentence], refs: Sequence[Sentence]) -> float:
    _check_lengths(hyps, refs)
    return _chrf_from_stats(sum(_chrf_stats(tuple(h), tuple(r)) for h, r in zip(hyps, refs)))


def copy_ratio(srcs: Sequence[Sentence], hyps: Sequence[Sentence]) -> float:
    """Source-copied tokens plus consecutive repeats, over hypothesis tokens.

    Copies are clipped by the token's multiplicity in the source. The two
    terms are added without deduplication and the result is not clamped.
    """
    _check_lengths(srcs, hyps)
    copied = repeated = count = 0
    for src, hyp in zip(srcs, hyps):
        src_counts = Counter(src)
        copied += sum(min(c, src_counts[w]) for w, c in Counter(hyp).items())
        repeated += sum(1 for a, b in zip(hyp, hyp[1:]) if a == b)
        count += len(hyp)
    if count == 0:
        raise ValueError("all hypotheses are empty")
    return (copied + repeated) / count


def off_target_ratio(hyps: Sequence[Sentence], expected: LanguageTag, family: LanguageFamily) -> float:
    if not hyps:
        raise ValueError("need at least one hypothesis")
    return sum(oracle_langid(family, tuple(h)) != expected for h in hyps) / len(hyps)


@dataclass(frozen=True)
class TierSpec:
    cutoffs: tuple = DEFAULT_TIER_CUTOFFS

    def __post_init__(self):
        c = tuple(self.cutoffs)
        if len(c) != 2 or not c[0] < c[1]:
            raise ValueError("tier cutoffs must be two strictly increasing sizes")
        object.__setattr__(self, "cutoffs", c)


def tier_of(corpus_size: int, spec: TierSpec = TierSpec()) -> str:
    """``Low`` below the first cutoff, ``High`` at or above the second."""
    if corpus_size < 0:
        raise ValueError("corpus size must be >= 0")
    lo, hi = spec.cutoffs
    if corpus_size < lo:
        return "Low"
    return "Mid" if corpus_size < hi else "High"


def bootstrap_significance(hyps_a: Sequence[Sentence], hyps_b: Sequence[Sentence], refs: Sequence[Sentence],
                           iterations: int = 1000, alpha: float = DEFAULT_ALPHA, seed: int = 0) -> tuple:
    """Paired bootstrap over sentence indices.

    ``p`` is the fraction of resamples where system A's BLEU is not above
    system B's; A is significantly better when ``p < alpha``.
    """
    _check_lengths(hyps_a, refs)
    _check_lengths(hyps_b, refs)
    if iterations < 100:
        raise ValueError("iterations must be >= 100")
    sa = np.stack([bleu_stats(tuple(h), tuple(r)) for h, r in zip(hyps_a, refs)])
    sb = np.stack([bleu_stats(tuple(h), tuple(r)) for h, r in zip(hyps_b, refs)])
    rng = np.random.default_rng(seed)
    n = len(refs)
    not_better = 0
    for _ in range(iterations):
        idx = rng.integers(0, n, size=n)
        if bleu_from_stats(sa[idx].sum(axis=0)) <= bleu_from_stats(sb[idx].sum(axis=0)):
            not_better += 1
    p = not_better / iterations
    return p, p < alpha


@dataclass
class EvalReport:
    direction: tuple
    bleu: float
    chrfpp: float
    cr: float
    otr: float
    T: int
    tier: str | None = None
    delta_vs_expert: float | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.otr <= 1:
            raise ValueError("otr must lie in [0, 1]")
        if self.cr < 0 or self.T < 1:
            raise ValueError("cr must be >= 0 and T >= 1")
        for name in ("bleu", "chrfpp"):
            if not 0 <= getattr(self, name) <= 100 + 1e-9:
                raise ValueError(f"{name} must lie in [0, 100]")


def evaluate_outputs(srcs: Sequence[Sentence], hyps: Sequence[Sentence], refs: Sequence[Sentence],
                     direction: tuple, family: LanguageFamily, tier: str | None = None) -> EvalReport:
    """All metrics for one translation direction."""
    nonempty = any(len(h) for h in hyps)
    return EvalReport(
        direction=tuple(direction),
        bleu=corpus_bleu(hyps, refs),
        chrfpp=chrfpp(hyps, refs),
        cr=copy_ratio(srcs, hyps) if nonempty else 0.0,
        otr=off_target_ratio(hyps, direction[1], family),
        T=len(hyps),
        tier=tier,
    )


def forgetting_delta(extended: Mapping | Sequence[EvalReport], expert: Mapping | Sequence[EvalReport]) -> dict:
    """Per-direction BLEU of the extended model minus the expert's."""
    ext = _by_direction(extended)
    base = _by_direction(expert)
    missing = (set(ext) ^ set(base))
    if missing:
        raise KeyError(f"directions not covered by both report sets: {sorted(missing)}")
    return {d: ext[d].bleu - base[d].bleu for d in base}


def _by_direction(reports) -> dict:
    if isinstance(reports, Mapping):
        return dict(reports)
    return {tuple(r.direction): r for r in reports}
