"""Synthetic language families with exact translation and language-id oracles.

Every non-pivot language is a word-substitution cipher of the pivot lexicon.
On top of the substitution, a fixed 20% of pivot words take a separate
language-specific suffix token, and some languages swap adjacent word pairs.
Surface lexicons of all languages are pairwise disjoint, so the language of
any token is known exactly.
"""
from __future__ import annotations

import bisect
import itertools
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import UNKNOWN, LanguageTag, ParallelCorpus, Sentence

MIN_LEXICON_SIZE = 50
MIN_LEN, MAX_LEN = 3, 20
ZIPF_EXPONENT = 1.1
AFFIX_RATE = 0.2

_CONSONANTS = "bcdfghjklmnprstvwz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class FamilySpec:
    pivot: LanguageTag
    originals: tuple
    new: tuple
    lexicon_size: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "originals", tuple(self.originals))
        object.__setattr__(self, "new", tuple(self.new))

    @classmethod
    def from_dict(cls, d: dict) -> "FamilySpec":
        new = d["new"]
        if isinstance(new, str):
            new = [new]
        return cls(
            pivot=str(d["pivot"]),
            originals=tuple(str(x) for x in d["originals"]),
            new=tuple(str(x) for x in new),
            lexicon_size=int(d["lexicon_size"]),
            seed=int(d.get("seed", 0)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "FamilySpec":
        return cls.from_dict(yaml.safe_load(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return {
            "pivot": self.pivot,
            "originals": list(self.originals),
            "new": list(self.new),
            "lexicon_size": self.lexicon_size,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class LanguageRule:
    """How one language's surface form derives from the pivot."""

    code: LanguageTag
    words: dict  # pivot word -> surface word
    affix: str | None
    affixed: frozenset  # pivot words that take the affix token
    swap: bool

    @property
    def inverse(self) -> dict:
        return {v: k for k, v in self.words.items()}

    @property
    def lexicon(self) -> frozenset:
        toks = set(self.words.values())
        if self.affix is not None:
            toks.add(self.affix)
        return frozenset(toks)


@dataclass(frozen=True)
class LanguageFamily:
    spec: FamilySpec
    pivot_lexicon: tuple
    rules: dict  # LanguageTag -> LanguageRule (pivot included, identity rule)
    _owner: dict = field(repr=False, compare=False)
    _inverse: dict = field(repr=False, compare=False)

    @property
    def pivot(self) -> LanguageTag:
        return self.spec.pivot

    @property
    def originals(self) -> tuple:
        return self.spec.originals

    @property
    def new_langs(self) -> tuple:
        return self.spec.new

    @property
    def languages(self) -> tuple:
        return (self.pivot,) + self.originals + self.new_langs

    def lexicon(self, lang: LanguageTag) -> frozenset:
        return self.rules[lang].lexicon

    def owner(self, token: str) -> LanguageTag | None:
        return self._owner.get(token)

    def to_dict(self) -> dict:
        out = {"spec": self.spec.to_dict(), "pivot_lexicon": list(self.pivot_lexicon), "languages": {}}
        for code in self.languages:
            r = self.rules[code]
            out["languages"][code] = {
                "words": [r.words[w] for w in self.pivot_lexicon],
                "affix": r.affix,
                "affixed": sorted(r.affixed, key=self.pivot_lexicon.index),
                "swap": r.swap,
            }
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "LanguageFamily":
        spec = FamilySpec.from_dict(d["spec"])
        lex = tuple(d["pivot_lexicon"])
        rules = {}
        for code, r in d["languages"].items():
            rules[code] = LanguageRule(
                code=code,
                words=dict(zip(lex, r["words"])),
                affix=r["affix"],
                affixed=frozenset(r["affixed"]),
                swap=bool(r["swap"]),
            )
        return _assemble(spec, lex, rules)

    @classmethod
    def load(cls, path: str | Path) -> "LanguageFamily":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _assemble(spec: FamilySpec, lex: tuple, rules: dict) -> LanguageFamily:
    owner = {}
    for code, rule in rules.items():
        for tok in rule.lexicon:
            if tok in owner:
                raise ValueError(f"surface token {tok!r} shared by {owner[tok]} and {code}")
            owner[tok] = code
    inverse = {code: rule.inverse for code, rule in rules.items()}
    return LanguageFamily(spec, lex, rules, owner, inverse)


def _validate_spec(spec: FamilySpec) -> None:
    if not spec.pivot:
        raise ValueError("family needs a pivot language")
    if len(spec.originals) < 2:
        raise ValueError("family needs at least 2 original languages")
    if len(spec.new) < 1:
        raise ValueError("family needs at least 1 new language")
    codes = [spec.pivot, *spec.originals, *spec.new]
    if len(set(codes)) != len(codes):
        raise ValueError(f"language codes must be unique: {codes}")
    if spec.lexicon_size < MIN_LEXICON_SIZE:
        raise ValueError(
            f"lexicon_size {spec.lexicon_size} too small for disjoint surface lexicons "
            f"(minimum {MIN_LEXICON_SIZE})"
        )


def _word_source(rng: random.Random, used: set):
    syllables = [c + v for c in _CONSONANTS for v in _VOWELS]
    while True:
        n = rng.choice((2, 2, 3))
        w = "".join(rng.choice(syllables) for _ in range(n))
        if w not in used:
            used.add(w)
            yield w


def make_language_family(spec: FamilySpec | dict, seed: int | None = None) -> LanguageFamily:
    """Build a language family deterministically from ``(spec, seed)``.

    ``seed`` overrides ``spec.seed`` when given.
    """
    if isinstance(spec, dict):
        spec = FamilySpec.from_dict(spec)
    if seed is not None and seed != spec.seed:
        spec = FamilySpec(spec.pivot, spec.originals, spec.new, spec.lexicon_size, seed)
    _validate_spec(spec)

    rng = random.Random(f"family:{spec.seed}")
    used: set = set()
    words = _word_source(rng, used)
    lex = tuple(itertools.islice(words, spec.lexicon_size))
    rules = {spec.pivot: LanguageRule(spec.pivot, {w: w for w in lex}, None, frozenset(), False)}
    n_affixed = max(1, round(AFFIX_RATE * spec.lexicon_size))
    for code in spec.originals + spec.new:
        surface = list(itertools.islice(words, spec.lexicon_size))
        rng.shuffle(surface)
        affix = "-" + next(words)
        affixed = frozenset(rng.sample(lex, n_affixed))
        rules[code] = LanguageRule(code, dict(zip(lex, surface)), affix, affixed, rng.random() < 0.5)
    return _assemble(spec, lex, rules)


def _to_pivot(family: LanguageFamily, s: Sentence, src: LanguageTag) -> list:
    if src not in family.rules:
        raise KeyError(f"unknown language {src!r}")
    rule = family.rules[src]
    inv = family._inverse[src]
    out = []
    i = 0
    while i < len(s):
        tok = s[i]
        if tok not in inv:
            raise ValueError(f"unknown token {tok!r} for language {src}")
        w = inv[tok]
        has_affix = i + 1 < len(s) and rule.affix is not None and s[i + 1] == rule.affix
        if (w in rule.affixed) != has_affix:
            raise ValueError(f"token {tok!r} has an invalid affix for language {src}")
        out.append(w)
        i += 2 if has_affix else 1
    if rule.swap:
        out = _swap_pairs(out)
    return out


def _from_pivot(family: LanguageFamily, words: list, tgt: LanguageTag) -> Sentence:
    rule = family.rules[tgt]
    if rule.swap:
        words = _swap_pairs(words)
    out = []
    for w in words:
        out.append(rule.words[w])
        if w in rule.affixed:
            out.append(rule.affix)
    return tuple(out)


def _swap_pairs(words: list) -> list:
    out = list(words)
    for i in range(0, len(out) - 1, 2):
        out[i], out[i + 1] = out[i + 1], out[i]
    return out


def oracle_translate(family: LanguageFamily, s: Sentence, src: LanguageTag, tgt: LanguageTag) -> Sentence:
    """Exact translation of ``s`` from ``src`` to ``tgt`` through the pivot."""
    if tgt not in family.rules:
        raise KeyError(f"unknown language {tgt!r}")
    words = _to_pivot(family, tuple(s), src)
    if src == tgt:
        return tuple(s)
    return _from_pivot(family, words, tgt)


def oracle_langid(family: LanguageFamily, s: Sentence) -> LanguageTag:
    """Language owning a strict majority of the tokens of ``s``, else ``"unknown"``."""
    if not s:
        return UNKNOWN
    counts: dict = {}
    for tok in s:
        lang = family._owner.get(tok)
        if lang is not None:
            counts[lang] = counts.get(lang, 0) + 1
    for lang, c in counts.items():
        if 2 * c > len(s):
            return lang
    return UNKNOWN


class _ZipfSampler:
    def __init__(self, lexicon: tuple, exponent: float = ZIPF_EXPONENT):
        self.lexicon = lexicon
        weights = [r ** -exponent for r in range(1, len(lexicon) + 1)]
        self.cum = list(itertools.accumulate(weights))

    def sentence(self, rng: random.Random) -> Sentence:
        n = rng.randint(MIN_LEN, MAX_LEN)
        total = self.cum[-1]
        return tuple(self.lexicon[bisect.bisect_right(self.cum, rng.random() * total)] for _ in range(n))


def sample_pivot_sentences(family: LanguageFamily, n: int, seed) -> list:
    rng = random.Random(f"sentences:{family.spec.seed}:{seed}")
    sampler = _ZipfSampler(family.pivot_lexicon)
    return [sampler.sentence(rng) for _ in range(n)]


def sample_gold_corpus(family: LanguageFamily, lang: LanguageTag, n: int, seed: int) -> ParallelCorpus:
    """``n`` oracle-consistent ``(lang, pivot)`` pairs."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if lang not in family.rules:
        raise KeyError(f"unknown language {lang!r}")
    pivots = sample_pivot_sentences(family, n, f"{lang}:{n}:{seed}")
    pairs = tuple((_from_pivot(family, list(p), lang), p) for p in pivots)
    return ParallelCorpus(pairs, lang, family.pivot)


def sample_multiway(family: LanguageFamily, langs, n: int, seed) -> dict:
    """``n`` pivot sentences rendered in every language of ``langs``.

    Used for evaluation sets where any direction among ``langs`` needs
    aligned references.
    """
    pivots = sample_pivot_sentences(family, n, f"multiway:{n}:{seed}")
    return {lang: [_from_pivot(family, list(p), lang) for p in pivots] for lang in langs}
