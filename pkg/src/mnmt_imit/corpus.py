"""Corpus cleaning and the shared subword tokenizer."""
from __future__ import annotations

import hashlib
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

from .data import LanguageTag, ParallelCorpus, Sentence
from .synthlang import LanguageFamily, oracle_langid

MAX_TOKENS = 120

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<s>", "</s>", "<unk>")
EOW = "</w>"
_HEADER = "#mnmt-imit tokenizer v1"


def tag_token(lang: LanguageTag) -> str:
    return f"__{lang}__"


def preprocess(c: ParallelCorpus, max_tokens: int = MAX_TOKENS, family: LanguageFamily | None = None) -> ParallelCorpus:
    """Drop duplicate pairs, over-long sides and wrong-language sides.

    Length is counted in whitespace tokens before subword splitting; a side
    of exactly ``max_tokens`` tokens is kept. Survivors keep their order.
    """
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    seen = set()
    kept = []
    for src, tgt in c.pairs:
        key = (" ".join(src), " ".join(tgt))
        if key in seen:
            continue
        if len(src) > max_tokens or len(tgt) > max_tokens:
            continue
        if family is not None and (
            oracle_langid(family, src) != c.src_lang or oracle_langid(family, tgt) != c.tgt_lang
        ):
            continue
        seen.add(key)
        kept.append((src, tgt))
    return ParallelCorpus(tuple(kept), c.src_lang, c.tgt_lang, dict(c.meta))


def _word_symbols(word: str) -> tuple:
    return tuple(word[:-1]) + (word[-1] + EOW,)


class Tokenizer:
    """Character-level byte-pair-merge tokenizer with language tag symbols.

    Merges never cross word boundaries; the last symbol of every word
    carries an end-of-word marker so decoding restores the spacing.
    """

    def __init__(self, merges: Sequence[tuple], vocab: dict):
        self.merges = [tuple(m) for m in merges]
        self.vocab = dict(vocab)
        self.id_to_token = {i: t for t, i in self.vocab.items()}
        if sorted(self.id_to_token) != list(range(len(self.vocab))):
            raise ValueError("vocabulary ids must be dense from 0")
        for i, name in enumerate(RESERVED):
            if self.vocab.get(name) != i:
                raise ValueError(f"reserved symbol {name} must have id {i}")
        self._ranks = {m: r for r, m in enumerate(self.merges)}
        self._cache: dict = {}
        self.languages = tuple(
            t[2:-2] for t, _ in sorted(self.vocab.items(), key=lambda kv: kv[1])
            if t.startswith("__") and t.endswith("__") and len(t) > 4
        )

    def __len__(self) -> int:
        return len(self.vocab)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def tag_id(self, lang: LanguageTag) -> int:
        try:
            return self.vocab[tag_token(lang)]
        except KeyError:
            raise KeyError(f"tokenizer has no tag for language {lang!r}") from None

    def tag_lang(self, token_id: int) -> LanguageTag | None:
        tok = self.id_to_token.get(token_id, "")
        if tok.startswith("__") and tok.endswith("__") and tok[2:-2] in self.languages:
            return tok[2:-2]
        return None

    def segment_word(self, word: str) -> tuple:
        if word in self._cache:
            return self._cache[word]
        symbols = list(_word_symbols(word))
        while len(symbols) > 1:
            best = None
            for i in range(len(symbols) - 1):
                r = self._ranks.get((symbols[i], symbols[i + 1]))
                if r is not None and (best is None or r < best[0]):
                    best = (r, i)
            if best is None:
                break
            pair = self.merges[best[0]]
            merged = []
            i = 0
            while i < len(symbols):
                if i < len(symbols) - 1 and (symbols[i], symbols[i + 1]) == pair:
                    merged.append(symbols[i] + symbols[i + 1])
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        out = tuple(symbols)
        self._cache[word] = out
        return out

    def encode(self, s: Iterable[str]) -> list:
        ids = []
        for word in s:
            for sym in self.segment_word(word):
                ids.append(self.vocab.get(sym, UNK))
        return ids

    def decode(self, ids: Iterable[int]) -> Sentence:
        """Subword ids back to words; special and tag ids are skipped."""
        words = []
        cur = ""
        for i in ids:
            i = int(i)
            if i in (PAD, BOS, EOS) or self.tag_lang(i) is not None:
                continue
            sym = self.id_to_token.get(i, RESERVED[UNK])
            if sym.endswith(EOW):
                words.append(cur + sym[: -len(EOW)])
                cur = ""
            else:
                cur += sym
        if cur:
            words.append(cur)
        return tuple(words)

    def to_text(self) -> str:
        lines = [_HEADER]
        lines += [f"{a} {b}" for a, b in self.merges]
        lines += [f"{tok}\t{i}" for tok, i in sorted(self.vocab.items(), key=lambda kv: kv[1])]
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str) -> "Tokenizer":
        lines = text.splitlines()
        if not lines or lines[0] != _HEADER:
            raise ValueError("not a tokenizer file")
        merges, vocab = [], {}
        for line in lines[1:]:
            if "\t" in line:
                tok, i = line.rsplit("\t", 1)
                vocab[tok] = int(i)
            elif line:
                a, b = line.split(" ")
                merges.append((a, b))
        return cls(merges, vocab)

    @classmethod
    def load(cls, path: str | Path) -> "Tokenizer":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def __eq__(self, other) -> bool:
        return isinstance(other, Tokenizer) and self.to_text() == other.to_text()

    def __repr__(self) -> str:
        return f"Tokenizer(vocab_size={len(self.vocab)}, merges={len(self.merges)})"


def _corpus_languages(corpora: Sequence[ParallelCorpus]) -> list:
    langs = []
    for c in corpora:
        for lang in (c.src_lang, c.tgt_lang):
            if lang not in langs:
                langs.append(lang)
    return langs


def train_tokenizer(corpora: Sequence[ParallelCorpus], vocab_size: int | None, languages: Sequence[LanguageTag] | None = None) -> Tokenizer:
    """Learn pair merges over every word in ``corpora`` until ``vocab_size``.

    The most frequent adjacent symbol pair is merged first; ties go to the
    lexicographically smallest pair, so identical input gives identical
    merges. ``vocab_size=None`` keeps merging until every word is a single
    symbol.
    """
    langs = list(languages) if languages is not None else _corpus_languages(corpora)
    freqs: Counter = Counter()
    for c in corpora:
        for src, tgt in c.pairs:
            freqs.update(src)
            freqs.update(tgt)
    words = {w: list(_word_symbols(w)) for w in sorted(freqs)}
    base = sorted({sym for syms in words.values() for sym in syms})

    vocab = {name: i for i, name in enumerate(RESERVED)}
    for lang in langs:
        vocab[tag_token(lang)] = len(vocab)
    for sym in base:
        if sym in vocab:
            raise ValueError(f"symbol {sym!r} collides with a reserved token")
        vocab[sym] = len(vocab)
    if vocab_size is not None and vocab_size < len(vocab):
        raise ValueError(
            f"vocab_size {vocab_size} too small: {len(RESERVED)} reserved + {len(langs)} tags "
            f"+ {len(base)} base symbols need {len(vocab)}"
        )

    merges = []
    while vocab_size is None or len(vocab) < vocab_size:
        pairs: Counter = Counter()
        for w, syms in words.items():
            f = freqs[w]
            for a, b in zip(syms, syms[1:]):
                pairs[(a, b)] += f
        if not pairs:
            if vocab_size is None:
                break
            raise ValueError(f"vocab_size {vocab_size} exceeds the {len(vocab)} symbols this corpus supports")
        top = max(pairs.values())
        pair = min(p for p, n in pairs.items() if n == top)
        merged = pair[0] + pair[1]
        merges.append(pair)
        if merged not in vocab:
            vocab[merged] = len(vocab)
        for w, syms in words.items():
            i = 0
            out = []
            while i < len(syms):
                if i < len(syms) - 1 and (syms[i], syms[i + 1]) == pair:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            words[w] = out
    return Tokenizer(merges, vocab)


def encode_for_model(t: Tokenizer, s: Sentence, src: LanguageTag, tgt: LanguageTag, side: str = "source") -> tuple:
    """Model-ready ids.

    source: ``[src-tag, tgt-tag, subwords..., eos]``
    target: ``[bos, subwords..., eos]``
    """
    if side == "source":
        return (t.tag_id(src), t.tag_id(tgt), *t.encode(s), EOS)
    if side == "target":
        return (BOS, *t.encode(s), EOS)
    raise ValueError(f"side must be 'source' or 'target', got {side!r}")


def encode_pair(t: Tokenizer, src_sent: Sentence, tgt_sent: Sentence, src: LanguageTag, tgt: LanguageTag) -> tuple:
    return encode_for_model(t, src_sent, src, tgt, "source"), encode_for_model(t, tgt_sent, src, tgt, "target")
