"""Greedy and length-normalised beam search decoding.

Both searches run over a ``step_fn(prefixes) -> log_probs`` callback, which
keeps them testable on hand-built toy distributions. A finished hypothesis
scores ``sum(log p) / len**length_penalty`` where ``len`` counts generated
tokens including EOS; at ``max_len`` generated tokens EOS is forced.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .model import Model, pad_batch
from .tokenizer import EOS_ID, PAD_ID, TokenSeq

StepFn = Callable[[list[tuple[int, ...]]], np.ndarray]


@dataclass
class Hypothesis:
    tokens: tuple[int, ...]
    logprob: float
    score: float


def normalized_score(logprob: float, length: int, length_penalty: float) -> float:
    return logprob / (length ** length_penalty)


def _forced(logp: np.ndarray, step: int, max_len: int, eos: int) -> np.ndarray:
    if step + 1 < max_len:
        return logp
    out = np.full_like(logp, -np.inf)
    out[..., eos] = logp[..., eos]
    return out


def greedy_search(step_fn: StepFn, start: Sequence[int], eos: int, max_len: int) -> Hypothesis:
    prefix = tuple(start)
    total = 0.0
    for step in range(max_len):
        logp = _forced(np.asarray(step_fn([prefix])[0], dtype=np.float64), step, max_len, eos)
        tok = eos if step + 1 == max_len else int(np.argmax(logp))
        total += float(logp[tok])
        prefix = prefix + (tok,)
        if tok == eos:
            break
    n = len(prefix) - len(start)
    return Hypothesis(prefix, total, total / n if n else total)


def beam_search_core(step_fn: StepFn, start: Sequence[int], eos: int, beam: int = 4,
                     length_penalty: float = 1.5, max_len: int = 200) -> Hypothesis:
    """Return the best finished hypothesis.

    Each step ranks every ``(live hypothesis, token)`` extension by summed
    log-probability (ties: earlier hypothesis, then lower token id). An EOS
    extension ranked within the top ``beam`` finishes its hypothesis; the
    first ``beam`` non-EOS extensions stay live. Search stops once ``beam``
    hypotheses have finished.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    start = tuple(start)
    live: list[tuple[tuple[int, ...], float]] = [(start, 0.0)]
    finished: list[Hypothesis] = []
    for step in range(max_len):
        logp = np.asarray(step_fn([p for p, _ in live]), dtype=np.float64)
        if step + 1 == max_len:
            # out of room: every live hypothesis ends here
            for i, (prefix, s) in enumerate(live):
                val = s + float(logp[i, eos])
                finished.append(Hypothesis(prefix + (eos,), val,
                                           normalized_score(val, len(prefix) + 1 - len(start),
                                                            length_penalty)))
            break
        V = logp.shape[-1]
        scores = np.array([s for _, s in live])[:, None] + logp
        flat = scores.reshape(-1)
        order = np.argsort(-flat, kind="stable")
        new_live = []
        for rank, j in enumerate(order):
            val = flat[j]
            if not np.isfinite(val):
                break
            h, tok = divmod(int(j), V)
            prefix = live[h][0] + (tok,)
            if tok == eos:
                if rank < beam:
                    n = len(prefix) - len(start)
                    finished.append(Hypothesis(prefix, float(val),
                                               normalized_score(float(val), n, length_penalty)))
                continue
            if len(new_live) < beam:
                new_live.append((prefix, float(val)))
            if len(new_live) >= beam and rank >= beam - 1:
                break
        if len(finished) >= beam or not new_live:
            break
        live = new_live
    if not finished:
        # every extension was -inf; fall back to the best surviving prefix
        prefix, val = live[0]
        n = len(prefix) - len(start)
        return Hypothesis(prefix, val, normalized_score(val, max(n, 1), length_penalty))
    # ties between equal scores go to the earlier-finished hypothesis
    return max(finished, key=lambda h: h.score)


def model_step_fn(model: Model, src: np.ndarray, lid_override: str | None = None) -> StepFn:
    """Next-token log-probabilities for decoder prefixes given one source."""
    src = np.asarray(src)[None] if np.ndim(src) == 1 else np.asarray(src)
    with T.no_grad():
        enc = model.encode(src, lid_override=lid_override)
    nonpad = src != PAD_ID

    def step(prefixes):
        n = len(prefixes)
        tgt = pad_batch(prefixes)
        with T.no_grad():
            enc_n = T.Tensor(np.repeat(enc.data, n, axis=0))
            logits = model.decode(enc_n, np.repeat(nonpad, n, axis=0), tgt).data
        lengths = np.array([len(p) for p in prefixes]) - 1
        last = logits[np.arange(n), lengths].astype(np.float64)
        m = last.max(axis=-1, keepdims=True)
        return last - m - np.log(np.exp(last - m).sum(axis=-1, keepdims=True))
    return step


def beam_search(model: Model, src: TokenSeq, tgt_lang: str, beam: int = 4,
                length_penalty: float = 1.5, max_len: int = 200,
                lid_override: str | None = None) -> TokenSeq:
    start = (model.vocab.lang_id(tgt_lang),)
    step = model_step_fn(model, np.asarray(src.ids), lid_override)
    hyp = beam_search_core(step, start, EOS_ID, beam, length_penalty, max_len)
    return TokenSeq(hyp.tokens, tgt_lang)


def greedy_decode(model: Model, src: TokenSeq, tgt_lang: str, max_len: int = 200,
                  lid_override: str | None = None) -> TokenSeq:
    start = (model.vocab.lang_id(tgt_lang),)
    step = model_step_fn(model, np.asarray(src.ids), lid_override)
    return TokenSeq(greedy_search(step, start, EOS_ID, max_len).tokens, tgt_lang)
