"""scikit-learn style wrappers around tokenizer training, expert training and extension.

These follow the estimator protocol (constructor stores hyperparameters
verbatim, ``fit`` returns ``self``, learned state ends in ``_``) so they
work with ``get_params``/``set_params``/``clone``.
"""
from __future__ import annotations

from typing import Mapping, Sequence

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .baselines import BaselineRunConfig, normalize_kind, run_finetune, run_on_the_fly
from .corpus import Tokenizer, train_tokenizer
from .data import LanguageTag, ParallelCorpus
from .imitation import RunConfig, compute_language_weights, train_imit
from .model import DEFAULT_BATCH_SIZE, DEFAULT_BEAM, DEFAULT_LR, ModelConfig, TranslationModel, train_expert, translate
from .synthlang import LanguageFamily
from .validation import check_corpus, check_int, check_language, check_positive, check_probability, check_sentences


def _require(est, attr: str):
    if not hasattr(est, attr):
        raise NotFittedError(f"{type(est).__name__} is not fitted yet; call fit first")
    return getattr(est, attr)


class SubwordTokenizer(BaseEstimator, TransformerMixin):
    """Learns the shared subword vocabulary; transforms sentences to id lists."""

    def __init__(self, vocab_size: int | None = None, languages: Sequence[LanguageTag] | None = None):
        self.vocab_size = vocab_size
        self.languages = languages

    def fit(self, X: Sequence[ParallelCorpus], y=None):
        corpora = [check_corpus(c, f"X[{i}]") for i, c in enumerate(X)]
        if self.vocab_size is not None:
            check_int(self.vocab_size, "vocab_size", 1)
        self.tokenizer_ = train_tokenizer(corpora, self.vocab_size, self.languages)
        return self

    def transform(self, X):
        tok = _require(self, "tokenizer_")
        return [tok.encode(s) for s in check_sentences(X)]

    def inverse_transform(self, X):
        tok = _require(self, "tokenizer_")
        return [tok.decode(ids) for ids in X]


class ExpertTranslator(BaseEstimator):
    """Trains the frozen multilingual expert on original<->pivot corpora."""

    def __init__(self, embed_dim: int = 32, hidden_dim: int = 64, num_layers: int = 1, dropout: float = 0.1,
                 max_decode_len: int = 64, steps: int = 3000, batch_size: int = DEFAULT_BATCH_SIZE,
                 lr: float = DEFAULT_LR, clip_norm: float | None = 1.0, beam: int = DEFAULT_BEAM, seed: int = 0):
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.dropout = dropout
        self.max_decode_len = max_decode_len
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.clip_norm = clip_norm
        self.beam = beam
        self.seed = seed

    def model_config(self) -> ModelConfig:
        for name in ("embed_dim", "hidden_dim", "num_layers", "max_decode_len"):
            check_int(getattr(self, name), name, 1)
        check_probability(self.dropout, "dropout")
        return ModelConfig(self.embed_dim, self.hidden_dim, self.num_layers, self.dropout, self.max_decode_len, self.seed)

    def fit(self, X: Mapping[LanguageTag, ParallelCorpus], y=None, *, family: LanguageFamily,
            tokenizer: Tokenizer):
        check_int(self.steps, "steps", 0)
        check_int(self.batch_size, "batch_size", 1)
        check_positive(self.lr, "lr")
        for lang, c in X.items():
            check_language(lang, family.originals, "original language")
            check_corpus(c, f"X[{lang!r}]")
        self.model_ = train_expert(family, dict(X), self.model_config(), tokenizer, steps=self.steps,
                                   batch_size=self.batch_size, lr=self.lr, clip_norm=self.clip_norm)
        return self

    def predict(self, X, src_lang: LanguageTag, tgt_lang: LanguageTag) -> list:
        model = _require(self, "model_")
        return translate(model, check_sentences(X), src_lang, tgt_lang, self.beam)


class LanguageExtender(BaseEstimator):
    """Extends a fitted expert to a new language with imitation or a baseline regime."""

    def __init__(self, expert: TranslationModel | None = None, method: str = "imit", k: int = 4,
                 direction: str = "new2orig", steps: int = 1500, lr: float = DEFAULT_LR,
                 batch_size: int = DEFAULT_BATCH_SIZE, beam: int = DEFAULT_BEAM, seed: int = 0,
                 weights_mode: str = "bleu"):
        self.expert = expert
        self.method = method
        self.k = k
        self.direction = direction
        self.steps = steps
        self.lr = lr
        self.batch_size = batch_size
        self.beam = beam
        self.seed = seed
        self.weights_mode = weights_mode

    def run_config(self) -> RunConfig:
        k = 0 if normalize_kind(self.method) == "finetune" else self.k
        return RunConfig(k=k, direction=self.direction, steps=self.steps, lr=self.lr, batch_size=self.batch_size,
                         beam=self.beam, seed=self.seed, weights_mode=self.weights_mode)

    def fit(self, X: ParallelCorpus, y=None, *, devsets: Mapping[LanguageTag, ParallelCorpus] | None = None,
            originals: Sequence[LanguageTag] | None = None):
        """``X`` is the (new, pivot) gold corpus; ``devsets`` feed the language weights."""
        if self.expert is None or self.expert.role != "expert":
            raise ValueError("expert must be a frozen expert model")
        gold = check_corpus(X, "X")
        kind = normalize_kind(self.method)
        rc = self.run_config()
        weights = None
        if kind != "finetune" and devsets is not None:
            weights = compute_language_weights(self.expert, devsets, rc.k, gold.tgt_lang, rc.weights_mode, rc.beam)
            self.weights_ = weights
        if kind == "finetune":
            self.model_ = run_finetune(self.expert, gold, rc, originals or ())
        elif kind == "on_the_fly":
            self.model_ = run_on_the_fly(self.expert, gold, BaselineRunConfig(kind="on_the_fly", **rc.to_dict()),
                                         weights, originals)
        else:
            self.model_ = train_imit(self.expert, gold, rc, weights, originals)
        return self

    def predict(self, X, src_lang: LanguageTag, tgt_lang: LanguageTag) -> list:
        model = _require(self, "model_")
        return translate(model, check_sentences(X), src_lang, tgt_lang, self.beam)
