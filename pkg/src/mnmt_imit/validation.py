"""Input checks shared by the estimator wrappers and the CLI."""
from __future__ import annotations

import numbers
from typing import Iterable, Sequence

from .data import ParallelCorpus, Sentence, make_sentence


def check_sentences(X: Iterable, name: str = "X", allow_empty: bool = False) -> list:
    """Coerce strings or token sequences to a list of sentence tuples."""
    if isinstance(X, (str, bytes)):
        raise TypeError(f"{name} must be a sequence of sentences, not a single string")
    out = []
    for i, s in enumerate(X):
        if allow_empty and (s == "" or (not isinstance(s, str) and len(s) == 0)):
            out.append(())
            continue
        try:
            out.append(make_sentence(s))
        except (TypeError, ValueError) as e:
            raise ValueError(f"{name}[{i}]: {e}") from None
    if not out:
        raise ValueError(f"{name} is empty")
    return out


def check_consistent_length(*arrays: Sequence, names: Sequence[str] | None = None) -> int:
    lengths = [len(a) for a in arrays]
    if len(set(lengths)) > 1:
        names = names or [f"arg{i}" for i in range(len(arrays))]
        desc = ", ".join(f"{n}={m}" for n, m in zip(names, lengths))
        raise ValueError(f"inconsistent lengths: {desc}")
    return lengths[0] if lengths else 0


def check_int(value, name: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if minimum is not None and value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_probability(value, name: str, allow_one: bool = False) -> float:
    v = float(value)
    if not (0.0 <= v < 1.0 or (allow_one and v == 1.0)):
        raise ValueError(f"{name} must lie in [0, 1{']' if allow_one else ')'}, got {value}")
    return v


def check_positive(value, name: str) -> float:
    v = float(value)
    if not v > 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    return v


def check_language(lang: str, known: Iterable[str], name: str = "language") -> str:
    known = tuple(known)
    if lang not in known:
        raise ValueError(f"unknown {name} {lang!r}; expected one of {known}")
    return lang


def check_corpus(c, name: str = "corpus") -> ParallelCorpus:
    if not isinstance(c, ParallelCorpus):
        raise TypeError(f"{name} must be a ParallelCorpus, got {type(c).__name__}")
    if not c.pairs:
        raise ValueError(f"{name} has no pairs")
    return c


def as_sentence(s) -> Sentence:
    return make_sentence(s)
