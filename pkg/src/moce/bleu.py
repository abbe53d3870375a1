"""Corpus-level BLEU over whitespace-split words."""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence


def ngrams(words: Sequence[str], n: int) -> Counter:
    return Counter(tuple(words[i:i + n]) for i in range(len(words) - n + 1))


def bleu_stats(hyp: str, ref: str, max_n: int = 4) -> tuple[list[int], list[int], int, int]:
    """Clipped n-gram matches, n-gram totals, hypothesis length, reference length."""
    h, r = hyp.split(), ref.split()
    matches, totals = [], []
    for n in range(1, max_n + 1):
        hc, rc = ngrams(h, n), ngrams(r, n)
        matches.append(sum(min(c, rc[g]) for g, c in hc.items()))
        totals.append(max(len(h) - n + 1, 0))
    return matches, totals, len(h), len(r)


def corpus_bleu(hypotheses: Sequence[str], references: Sequence[str], max_n: int = 4) -> float:
    """Geometric mean of modified n-gram precisions times the brevity penalty, in [0, 100]."""
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise ValueError("empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    c = r = 0
    for hyp, ref in zip(hypotheses, references):
        m, t, hl, rl = bleu_stats(hyp, ref, max_n)
        matches = [a + b for a, b in zip(matches, m)]
        totals = [a + b for a, b in zip(totals, t)]
        c += hl
        r += rl
    if c == 0 or any(m == 0 for m in matches):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_p)
