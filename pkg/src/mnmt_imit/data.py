"""Core data containers and the plain-text corpus format.

A corpus file is UTF-8 text with one sentence pair per line: source and
target separated by a single TAB, tokens separated by single spaces.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

LanguageTag = str
Sentence = tuple  # tuple[str, ...]; non-empty, every token non-empty

UNKNOWN = "unknown"


def make_sentence(tokens: Iterable[str] | str) -> Sentence:
    """Build a validated sentence from a token iterable or a whitespace string."""
    if isinstance(tokens, str):
        tokens = tokens.split()
    sent = tuple(tokens)
    if not sent:
        raise ValueError("sentence must contain at least one token")
    for tok in sent:
        if not isinstance(tok, str) or not tok or any(c.isspace() for c in tok):
            raise ValueError(f"invalid token {tok!r}")
    return sent


@dataclass(frozen=True)
class ParallelCorpus:
    """Sentence pairs between two languages, in order."""

    pairs: tuple
    src_lang: LanguageTag
    tgt_lang: LanguageTag
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        pairs = tuple((tuple(s), tuple(t)) for s, t in self.pairs)
        for s, t in pairs:
            if not s or not t:
                raise ValueError("corpus pairs must have non-empty sides")
        object.__setattr__(self, "pairs", pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[tuple[Sentence, Sentence]]:
        return iter(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    @property
    def sources(self) -> list[Sentence]:
        return [s for s, _ in self.pairs]

    @property
    def targets(self) -> list[Sentence]:
        return [t for _, t in self.pairs]

    def reversed(self) -> "ParallelCorpus":
        return ParallelCorpus(tuple((t, s) for s, t in self.pairs), self.tgt_lang, self.src_lang)

    def subset(self, pairs: Sequence) -> "ParallelCorpus":
        return ParallelCorpus(tuple(pairs), self.src_lang, self.tgt_lang)


def format_sentence(s: Sentence) -> str:
    return " ".join(s)


def write_corpus(corpus: ParallelCorpus, path: str | Path) -> None:
    lines = [f"{format_sentence(s)}\t{format_sentence(t)}\n" for s, t in corpus.pairs]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_corpus(path: str | Path, src_lang: LanguageTag, tgt_lang: LanguageTag) -> ParallelCorpus:
    pairs = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected exactly one TAB separator")
        pairs.append((make_sentence(parts[0]), make_sentence(parts[1])))
    return ParallelCorpus(tuple(pairs), src_lang, tgt_lang)


def write_sentences(sents: Iterable[Sentence], path: str | Path) -> None:
    Path(path).write_text("".join(format_sentence(s) + "\n" for s in sents), encoding="utf-8")


def read_sentences(path: str | Path) -> list[Sentence]:
    """One sentence per line; an empty line is an empty hypothesis."""
    text = Path(path).read_text(encoding="utf-8")
    return [tuple(line.split()) for line in text.splitlines()]
