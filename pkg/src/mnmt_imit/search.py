"""Batched beam search over an abstract step function.

``step(prev_tokens, state) -> (log_probs, state)`` advances every live row
by one token; ``reorder(state, index) -> state`` gathers rows after
pruning. Scores are cumulative log-probabilities divided by hypothesis
length (generated tokens, eos included). A hypothesis that reaches
``max_len`` without eos is completed as-is.
"""
from __future__ import annotations

from typing import Callable, Sequence

import torch


def _top_k(cand: torch.Tensor, K: int) -> tuple:
    """Row-wise ``K`` best candidates ordered by (score desc, flat index asc).

    Equivalent to a stable descending sort truncated to ``K``, so ties keep
    beam rank order and then token id order.
    """
    kth = torch.topk(cand, K, dim=1).values[:, -1:]
    above = cand > kth
    at = cand == kth
    need = K - above.sum(dim=1, keepdim=True)
    chosen = above | (at & (at.cumsum(dim=1) <= need))
    idx = chosen.nonzero()[:, 1].reshape(cand.shape[0], K)
    vals = cand.gather(1, idx)
    vals, order = torch.sort(vals, dim=1, descending=True, stable=True)
    return vals, idx.gather(1, order)


def _search(step: Callable, reorder: Callable, state, batch_size: int, beam: int, max_len: int,
            bos: int, eos: int, banned: Sequence[int]) -> list:
    K = beam
    N = batch_size * K
    state = reorder(state, torch.arange(batch_size).repeat_interleave(K))
    prev = torch.full((N,), bos, dtype=torch.long)
    scores = None
    hist = torch.zeros((batch_size, K, 0), dtype=torch.long)
    finished: list = [[] for _ in range(batch_size)]
    n_finished = torch.zeros(batch_size, dtype=torch.long)
    done = torch.zeros(batch_size, dtype=torch.bool)
    banned = list(banned)

    for t in range(1, max_len + 1):
        logp, state = step(prev, state)
        if banned:
            logp = logp.clone()
            logp[:, banned] = float("-inf")
        V = logp.shape[-1]
        if scores is None:
            scores = torch.full((batch_size, K), float("-inf"), dtype=logp.dtype)
            scores[:, 0] = 0.0
        scores = scores.masked_fill(done.unsqueeze(1), float("-inf"))
        cand = (scores.reshape(N, 1) + logp).reshape(batch_size, K * V)
        top_scores, top = _top_k(cand, K)
        beam_idx = top // V
        tok = top % V
        hist = torch.cat([hist.gather(1, beam_idx.unsqueeze(-1).expand(-1, -1, hist.shape[-1])), tok.unsqueeze(-1)], dim=-1)

        is_eos = tok == eos
        closing = is_eos if t < max_len else torch.ones_like(is_eos)
        closing = closing & torch.isfinite(top_scores) & ~done.unsqueeze(1)
        if closing.any():
            for b, k in closing.nonzero().tolist():
                finished[b].append((tuple(hist[b, k].tolist()), top_scores[b, k].item() / t))
            n_finished += closing.sum(dim=1)
        scores = top_scores.masked_fill(is_eos, float("-inf"))
        done = done | (n_finished >= K) | ~torch.isfinite(scores).any(dim=1)
        if bool(done.all()):
            break
        flat = (torch.arange(batch_size).unsqueeze(1) * K + beam_idx).reshape(-1)
        state = reorder(state, flat)
        prev = tok.reshape(-1)
    return finished


def _best(cands: list, eos: int) -> tuple:
    if not cands:
        return (eos,), float("-inf")
    return min(cands, key=lambda c: (-c[1], c[0]))


def beam_search_batch(step: Callable, reorder: Callable, state, batch_size: int, beam: int, max_len: int,
                      bos: int, eos: int, banned: Sequence[int] = (), include_greedy: bool = True) -> list:
    """Best ``(tokens, score)`` per batch row; ``tokens`` excludes bos.

    With ``include_greedy`` the greedy path is searched too, so the result
    never scores below greedy decoding under the same normalisation.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    finished = _search(step, reorder, state, batch_size, beam, max_len, bos, eos, banned)
    if include_greedy and beam > 1:
        greedy = _search(step, reorder, state, batch_size, 1, max_len, bos, eos, banned)
        finished = [f + g for f, g in zip(finished, greedy)]
    return [_best(f, eos) for f in finished]
