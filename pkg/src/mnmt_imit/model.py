"""Tiny GRU encoder-decoder used as both the frozen expert and the learner.

Checkpoint layout (all integers little-endian):

    magic       8 bytes  b"MNMTCKPT"
    version     uint32   (1)
    config      uint32 length + UTF-8 JSON (model config, role, vocab size)
    tokenizer   64 bytes ASCII sha256 hex digest of the tokenizer file
    n_tensors   uint32
    per tensor  uint16 name length, UTF-8 name, uint8 ndim, uint32 dims
    data        float32 values of every tensor, concatenated in header order

Tensor order is the ``state_dict`` order of :class:`Seq2Seq`: embedding,
encoder GRU, memory/initial-state bridges, decoder cells, combiner, output
projection.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import random
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .corpus import BOS, EOS, PAD, Tokenizer, encode_pair
from .data import LanguageTag, ParallelCorpus
from .search import beam_search_batch
from .synthlang import LanguageFamily

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
DEFAULT_LR = 5e-5
DEFAULT_BATCH_SIZE = 16
DEFAULT_BEAM = 4

_MAGIC = b"MNMTCKPT"
_VERSION = 1


class ExpertMutationError(RuntimeError):
    """Raised when an API path would change a frozen expert."""


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 32
    hidden_dim: int = 64
    num_layers: int = 1
    dropout: float = 0.1
    max_decode_len: int = 64
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("embed_dim", "hidden_dim", "num_layers", "max_decode_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def torch_dtype(self):
        return torch.float64 if self.dtype == "float64" else torch.float32


@dataclass(frozen=True)
class TrainStepReport:
    loss: float
    grad_norm: float
    tokens: int


def _dropout(x: torch.Tensor, p: float, gen: torch.Generator | None) -> torch.Tensor:
    if p <= 0 or gen is None:
        return x
    keep = torch.rand(x.shape, generator=gen, dtype=x.dtype) >= p
    return x * keep / (1 - p)


class Seq2Seq(nn.Module):
    """Bidirectional GRU encoder, input-feeding GRU decoder, dot-product attention.

    The target-language tag (second source id) is embedded once and fed to
    the decoder at every step alongside the previous token.
    """

    def __init__(self, vocab_size: int, cfg: ModelConfig):
        super().__init__()
        E, H = cfg.embed_dim, cfg.hidden_dim
        self.cfg = cfg
        self.embed = nn.Embedding(vocab_size, E)
        self.encoder = nn.GRU(E, H, num_layers=cfg.num_layers, batch_first=True, bidirectional=True)
        self.mem_proj = nn.Linear(2 * H, H)
        self.init_proj = nn.Linear(2 * H, H)
        self.cells = nn.ModuleList(
            [nn.GRUCell(2 * E + H if i == 0 else H, H) for i in range(cfg.num_layers)]
        )
        self.combine = nn.Linear(2 * H, H)
        self.out = nn.Linear(H, vocab_size)

    def encode(self, src: torch.Tensor, lengths: torch.Tensor, gen=None, p: float = 0.0):
        emb = _dropout(self.embed(src), p, gen)
        packed = nn.utils.rnn.pack_padded_sequence(emb, lengths, batch_first=True, enforce_sorted=False)
        out, h_n = self.encoder(packed)
        out, _ = nn.utils.rnn.pad_packed_sequence(out, batch_first=True, total_length=src.shape[1])
        memory = self.mem_proj(out)
        mask = src.ne(PAD)
        last = torch.cat([h_n[-2], h_n[-1]], dim=-1)
        h0 = torch.tanh(self.init_proj(last))
        hs = [h0 for _ in self.cells]
        feed = torch.zeros_like(h0)
        lang = self.embed(src[:, 1])
        return memory, mask, hs, feed, lang

    def _step(self, emb: torch.Tensor, hs: list, feed: torch.Tensor, lang: torch.Tensor, memory, mask,
              gen=None, p: float = 0.0):
        x = torch.cat([emb, feed, lang], dim=-1)
        new_hs = []
        for i, cell in enumerate(self.cells):
            h = cell(x, hs[i])
            new_hs.append(h)
            x = h
        scores = torch.bmm(memory, x.unsqueeze(-1)).squeeze(-1)
        scores = scores.masked_fill(~mask, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        ctx = torch.bmm(attn.unsqueeze(1), memory).squeeze(1)
        # Linear readout: a tanh here saturates under Adam while the
        # zero-initialised output layer is still learning the unigram.
        combined = self.combine(torch.cat([x, ctx], dim=-1))
        combined = _dropout(combined, p, gen)
        return combined, new_hs

    def forward(self, src, lengths, tgt_in, gen=None, p: float = 0.0) -> torch.Tensor:
        """Teacher-forced logits, shape ``(batch, tgt_len, vocab)``."""
        memory, mask, hs, feed, lang = self.encode(src, lengths, gen, p)
        emb = _dropout(self.embed(tgt_in), p, gen)
        outs = []
        for t in range(tgt_in.shape[1]):
            feed, hs = self._step(emb[:, t], hs, feed, lang, memory, mask, gen, p)
            outs.append(feed)
        return self.out(torch.stack(outs, dim=1))


class TranslationModel:
    """A :class:`Seq2Seq` network bound to its tokenizer, config and role.

    ``role`` is ``"learner"`` (trainable) or ``"expert"`` (frozen). Every
    mutating method refuses to run on an expert.
    """

    def __init__(self, net: Seq2Seq, tokenizer: Tokenizer, config: ModelConfig, role: str = "learner"):
        self.net = net
        self.tokenizer = tokenizer
        self.config = config
        self._role = "learner"
        self._optimizer: torch.optim.Optimizer | None = None
        self.dropout_gen = torch.Generator().manual_seed(config.seed)
        if role == "expert":
            self.freeze()
        elif role != "learner":
            raise ValueError(f"unknown role {role!r}")

    @property
    def role(self) -> str:
        return self._role

    @property
    def vocab_size(self) -> int:
        return self.net.out.out_features

    def freeze(self) -> "TranslationModel":
        self._role = "expert"
        self._optimizer = None
        self.net.requires_grad_(False)
        self.net.eval()
        return self

    def check_mutable(self) -> None:
        if self._role == "expert":
            raise ExpertMutationError("expert model parameters are immutable")

    def clone(self, role: str = "learner") -> "TranslationModel":
        """Deep copy of the parameters; optimizer state is not carried over."""
        net = copy.deepcopy(self.net)
        net.requires_grad_(True)
        net.train()
        return TranslationModel(net, self.tokenizer, self.config, role=role)

    def reseed(self, seed: int) -> None:
        self.dropout_gen = torch.Generator().manual_seed(seed)

    def parameters(self) -> list:
        return list(self.net.parameters())

    def named_tensors(self) -> list:
        return list(self.net.state_dict().items())

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for name, t in self.named_tensors():
            h.update(name.encode())
            h.update(str(tuple(t.shape)).encode())
            h.update(t.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()

    def load_params(self, params: dict) -> None:
        self.check_mutable()
        self.net.load_state_dict(params)

    def optimizer(self, lr: float) -> torch.optim.Optimizer:
        self.check_mutable()
        if self._optimizer is None:
            self._optimizer = torch.optim.Adam(self.net.parameters(), lr=lr, betas=ADAM_BETAS, eps=ADAM_EPS)
        for g in self._optimizer.param_groups:
            g["lr"] = lr
        return self._optimizer

    def save(self, path: str | Path) -> None:
        save_checkpoint(self, path)

    def __repr__(self) -> str:
        return f"TranslationModel(role={self._role!r}, vocab={self.vocab_size}, cfg={self.config})"


def init_model(cfg: ModelConfig, tok: Tokenizer) -> TranslationModel:
    """Seeded initialisation; the output layer starts at zero (uniform predictions)."""
    if len(tok) < 5:
        raise ValueError("tokenizer vocabulary too small")
    net = Seq2Seq(len(tok), cfg).to(cfg.torch_dtype)
    gen = torch.Generator().manual_seed(cfg.seed)
    with torch.no_grad():
        for name, p in net.named_parameters():
            if name.startswith("out."):
                p.zero_()
            else:
                nn.init.uniform_(p, -0.1, 0.1, generator=gen)
    return TranslationModel(net, tok, cfg)


# ---------------------------------------------------------------- batching

def _pad(seqs: Sequence[Sequence[int]]) -> torch.Tensor:
    width = max(len(s) for s in seqs)
    out = torch.full((len(seqs), width), PAD, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.as_tensor(s, dtype=torch.long)
    return out


def _check_lengths(m: TranslationModel, srcs, tgts) -> None:
    limit = m.config.max_decode_len
    for s, t in zip(srcs, tgts):
        if len(t) - 1 > limit:
            raise ValueError(f"target of {len(t) - 1} steps exceeds max_decode_len {limit}")
        if len(s) > limit + 2:
            raise ValueError(f"source of {len(s)} ids exceeds max_decode_len {limit}")
        if len(t) < 2:
            raise ValueError("target must contain bos and at least one more id")


def sequence_nll(m: TranslationModel, srcs: Sequence, tgts: Sequence, train: bool = False) -> torch.Tensor:
    """Per-pair summed teacher-forced negative log-likelihood, shape ``(batch,)``."""
    _check_lengths(m, srcs, tgts)
    src = _pad(srcs)
    lengths = torch.tensor([len(s) for s in srcs])
    tgt = _pad(tgts)
    tgt_in, tgt_out = tgt[:, :-1], tgt[:, 1:]
    p = m.config.dropout if train else 0.0
    gen = m.dropout_gen if train and p > 0 else None
    logits = m.net(src, lengths, tgt_in, gen, p)
    logp = torch.log_softmax(logits, dim=-1)
    picked = logp.gather(-1, tgt_out.unsqueeze(-1)).squeeze(-1)
    mask = tgt_out.ne(PAD)
    return -(picked * mask).sum(dim=1)


def nll_loss(m: TranslationModel, src: Sequence[int], tgt: Sequence[int]) -> float:
    """Summed negative log-probability of ``tgt[1:]`` given ``src`` (dropout off)."""
    with torch.no_grad():
        return sequence_nll(m, [src], [tgt]).item()


def output_distributions(m: TranslationModel, src: Sequence[int], tgt: Sequence[int]) -> torch.Tensor:
    """Per-position next-token probabilities under teacher forcing."""
    with torch.no_grad():
        src_t = _pad([src])
        logits = m.net(src_t, torch.tensor([len(src)]), _pad([tgt])[:, :-1])
        return torch.softmax(logits, dim=-1)[0]


def apply_update(m: TranslationModel, loss: torch.Tensor, lr: float, clip_norm: float | None = None) -> float:
    """Backpropagate ``loss`` and take one Adam step; returns the gradient norm.

    The norm is measured before optional clipping to ``clip_norm``. A
    non-finite loss or gradient aborts before any parameter changes.
    """
    m.check_mutable()
    if not torch.isfinite(loss).item():
        raise NonFiniteLossError(f"non-finite loss {loss.item()}; parameters left unchanged")
    opt = m.optimizer(lr)
    opt.zero_grad(set_to_none=True)
    loss.backward()
    sq = 0.0
    for p in m.net.parameters():
        if p.grad is not None:
            sq += float(p.grad.detach().double().pow(2).sum())
    norm = math.sqrt(sq)
    if not math.isfinite(norm):
        opt.zero_grad(set_to_none=True)
        raise NonFiniteLossError("non-finite gradient; parameters left unchanged")
    if clip_norm is not None and norm > clip_norm:
        for p in m.net.parameters():
            if p.grad is not None:
                p.grad.mul_(clip_norm / norm)
    opt.step()
    return norm


def batch_objective(m: TranslationModel, batch: Sequence, train: bool = True) -> tuple:
    """Mean per-token loss over ``batch`` and its token count."""
    srcs = [s for s, _ in batch]
    tgts = [t for _, t in batch]
    nll = sequence_nll(m, srcs, tgts, train=train)
    tokens = sum(len(t) - 1 for t in tgts)
    return nll.sum() / tokens, tokens


def train_step(m: TranslationModel, batch: Sequence, lr: float = DEFAULT_LR,
               clip_norm: float | None = None) -> TrainStepReport:
    m.check_mutable()
    if not batch:
        raise ValueError("batch must be non-empty")
    m.net.train()
    loss, tokens = batch_objective(m, batch)
    norm = apply_update(m, loss, lr, clip_norm)
    return TrainStepReport(loss.item(), norm, tokens)


# ---------------------------------------------------------------- decoding

class _DecoderState:
    __slots__ = ("hs", "feed", "lang", "memory", "mask")

    def __init__(self, hs, feed, lang, memory, mask):
        self.hs, self.feed, self.lang, self.memory, self.mask = hs, feed, lang, memory, mask


def _searcher(m: TranslationModel):
    net = m.net

    def step(prev, st):
        emb = net.embed(prev)
        feed, hs = net._step(emb, st.hs, st.feed, st.lang, st.memory, st.mask)
        logp = torch.log_softmax(net.out(feed), dim=-1)
        return logp, _DecoderState(hs, feed, st.lang, st.memory, st.mask)

    def reorder(st, idx):
        if st.memory.shape[0] != idx.shape[0]:
            # initial expansion to beams: per-sentence tensors follow the batch row
            return _DecoderState([h[idx] for h in st.hs], st.feed[idx], st.lang[idx], st.memory[idx], st.mask[idx])
        # beams never move between sentences, so shared tensors stay put
        return _DecoderState([h[idx] for h in st.hs], st.feed[idx], st.lang, st.memory, st.mask)

    return step, reorder


def _banned_ids(tok: Tokenizer) -> list:
    return [PAD, BOS] + [tok.tag_id(lang) for lang in tok.languages]


def generate(m: TranslationModel, srcs: Sequence[Sequence[int]], beam: int = DEFAULT_BEAM,
             max_len: int | None = None, chunk: int = 256) -> list:
    """Beam-search translations for already-tagged source encodings.

    Returns ``[bos, ..., eos]`` id tuples in input order.
    """
    max_len = m.config.max_decode_len if max_len is None else max_len
    out: list = []
    was_training = m.net.training
    m.net.eval()
    try:
        with torch.no_grad():
            step, reorder = _searcher(m)
            banned = _banned_ids(m.tokenizer)
            for start in range(0, len(srcs), chunk):
                part = list(srcs[start:start + chunk])
                src = _pad(part)
                lengths = torch.tensor([len(s) for s in part])
                memory, mask, hs, feed, lang = m.net.encode(src, lengths)
                state = _DecoderState(hs, feed, lang, memory, mask)
                best = beam_search_batch(step, reorder, state, len(part), beam, max_len, BOS, EOS, banned)
                for toks, _ in best:
                    toks = tuple(toks)
                    if not toks or toks[-1] != EOS:
                        toks = toks + (EOS,)
                    out.append((BOS,) + toks)
    finally:
        if was_training:
            m.net.train()
    return out


def hypothesis_score(m: TranslationModel, src: Sequence[int], hyp: Sequence[int]) -> float:
    """Length-normalised log-probability of a ``[bos, ..., eos]`` hypothesis.

    A hypothesis truncated at the length limit carries an eos that was not
    generated; callers pass the generated ids only in that case.
    """
    return -nll_loss(m, src, hyp) / (len(hyp) - 1)


def beam_search(m: TranslationModel, src: Sequence[int], tgt_lang: LanguageTag, beam: int = DEFAULT_BEAM,
                max_len: int | None = None) -> tuple:
    """Translate one tagged source; the target tag slot is set to ``tgt_lang``."""
    if beam < 1:
        raise ValueError("beam must be >= 1")
    src = list(src)
    src[1] = m.tokenizer.tag_id(tgt_lang)
    return generate(m, [src], beam, max_len)[0]


def translate(m: TranslationModel, sentences: Sequence, src_lang: LanguageTag, tgt_lang: LanguageTag,
              beam: int = DEFAULT_BEAM) -> list:
    """Sentences in, decoded sentences out (possibly empty tuples)."""
    from .corpus import encode_for_model

    encs = [encode_for_model(m.tokenizer, s, src_lang, tgt_lang, "source") for s in sentences]
    return [m.tokenizer.decode(h) for h in generate(m, encs, beam)]


# ---------------------------------------------------------------- expert

def train_expert(family: LanguageFamily, tiered_corpora: dict, cfg: ModelConfig, tokenizer: Tokenizer, *,
                 steps: int = 3000, batch_size: int = DEFAULT_BATCH_SIZE, lr: float = DEFAULT_LR,
                 clip_norm: float | None = 1.0, schedule: str = "constant", log: Callable[[int, TrainStepReport], None] | None = None) -> TranslationModel:
    """Train the many-to-many expert on every original<->pivot corpus.

    Both directions of each pair enter one pool, so languages keep their
    imbalanced shares. ``schedule="linear"`` decays the learning rate
    linearly to zero over ``steps``. The returned model is frozen.
    """
    if schedule not in ("constant", "linear"):
        raise ValueError(f"unknown schedule {schedule!r}")
    missing = [lang for lang in family.originals if lang not in tiered_corpora]
    if missing:
        raise ValueError(f"no corpus for original languages {missing}")
    pool = []
    for lang in family.originals:
        c: ParallelCorpus = tiered_corpora[lang]
        if {c.src_lang, c.tgt_lang} != {lang, family.pivot}:
            raise ValueError(f"corpus for {lang} must pair it with the pivot {family.pivot}")
        for a, b in c.pairs:
            pool.append(encode_pair(tokenizer, a, b, c.src_lang, c.tgt_lang))
            pool.append(encode_pair(tokenizer, b, a, c.tgt_lang, c.src_lang))
    m = init_model(cfg, tokenizer)
    rng = random.Random(cfg.seed)
    for i, batch in enumerate(iterate_batches(pool, batch_size, rng, steps)):
        step_lr = lr * (1 - i / steps) if schedule == "linear" else lr
        report = train_step(m, batch, step_lr, clip_norm)
        if log is not None:
            log(i, report)
    return m.freeze()


def iterate_batches(items: Sequence, batch_size: int, rng: random.Random, steps: int):
    """``steps`` batches drawn by reshuffling ``items`` every epoch."""
    if not items:
        raise ValueError("no training items")
    order: list = []
    for _ in range(steps):
        if len(order) < batch_size:
            perm = list(range(len(items)))
            rng.shuffle(perm)
            order.extend(perm)
        idx, order = order[:batch_size], order[batch_size:]
        yield [items[i] for i in idx]


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(m: TranslationModel, path: str | Path) -> None:
    cfg = dict(asdict(m.config), role=m.role, vocab_size=m.vocab_size)
    cfg_bytes = json.dumps(cfg, sort_keys=True).encode("utf-8")
    tensors = m.named_tensors()
    parts = [_MAGIC, struct.pack("<I", _VERSION), struct.pack("<I", len(cfg_bytes)), cfg_bytes,
             m.tokenizer.hash().encode("ascii"), struct.pack("<I", len(tensors))]
    for name, t in tensors:
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", t.dim()))
        parts.append(struct.pack(f"<{t.dim()}I", *t.shape))
    for _, t in tensors:
        parts.append(t.detach().cpu().numpy().astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path, tokenizer: Tokenizer) -> TranslationModel:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    (version,) = struct.unpack_from("<I", data, 8)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (n,) = struct.unpack_from("<I", data, 12)
    off = 16
    cfg = json.loads(data[off:off + n].decode("utf-8"))
    off += n
    tok_hash = data[off:off + 64].decode("ascii")
    off += 64
    if tok_hash != tokenizer.hash():
        raise ValueError(f"{path}: tokenizer hash mismatch")
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    shapes = []
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + ln].decode("utf-8")
        off += ln
        (nd,) = struct.unpack_from("<B", data, off)
        off += 1
        dims = struct.unpack_from(f"<{nd}I", data, off)
        off += 4 * nd
        shapes.append((name, dims))
    role = cfg.pop("role")
    vocab = cfg.pop("vocab_size")
    if vocab != len(tokenizer):
        raise ValueError(f"{path}: vocab size {vocab} does not match tokenizer ({len(tokenizer)})")
    config = ModelConfig(**cfg)
    m = init_model(config, tokenizer)
    state = {}
    for name, dims in shapes:
        size = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(dims)
        off += 4 * size
        state[name] = torch.from_numpy(arr.copy()).to(config.torch_dtype)
    m.load_params(state)
    if role == "expert":
        m.freeze()
    return m
