"""Routing statistics, Jensen-Shannon divergence and language conciseness.

The selected ratio of an expert is the share of top-k selection events that
picked it: with top-2 routing every site contributes two events. Gate-weight
mass (the sum of mixture weights an expert received) is tracked alongside.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import Model, pad_batch
from .router import STREAMS
from .synthetic import ParallelCorpus
from .tensor import no_grad
from .tokenizer import encode


@dataclass
class RoutingStats:
    """Selection counts and weight mass indexed ``[stream, head, delta]``."""

    heads: int
    n_experts: int
    counts: np.ndarray = None
    weight_mass: np.ndarray = None
    sites: int = 0

    def __post_init__(self):
        shape = (len(STREAMS), self.heads, self.n_experts)
        if self.counts is None:
            self.counts = np.zeros(shape, dtype=np.int64)
        if self.weight_mass is None:
            self.weight_mass = np.zeros(shape, dtype=np.float64)

    def add(self, indices: np.ndarray, weights: np.ndarray, nonpad: np.ndarray) -> None:
        """Tally ``(3, B, h, L, k)`` selections, skipping padded tokens."""
        S, B, H, L, k = indices.shape
        keep = np.broadcast_to(nonpad[None, :, None, :, None], indices.shape)
        sh = (np.arange(S)[:, None] * H + np.arange(H)[None, :])[:, None, :, None, None]
        key = (sh * self.n_experts + indices)[keep]
        n = S * H * self.n_experts
        self.counts += np.bincount(key, minlength=n).reshape(self.counts.shape)
        self.weight_mass += np.bincount(key, weights=weights[keep].astype(np.float64),
                                        minlength=n).reshape(self.weight_mass.shape)
        self.sites += int(nonpad.sum()) * S * H

    def merge(self, other: "RoutingStats") -> "RoutingStats":
        if (self.heads, self.n_experts) != (other.heads, other.n_experts):
            raise ValueError("cannot merge stats of different shapes")
        return RoutingStats(self.heads, self.n_experts, self.counts + other.counts,
                            self.weight_mass + other.weight_mass, self.sites + other.sites)

    @property
    def total_selections(self) -> int:
        return int(self.counts.sum())

    def ratios(self, stream: int | None = None, head: int | None = None) -> np.ndarray:
        """Selection ratio per expert, optionally restricted to a stream and/or head."""
        c = self._slice(self.counts, stream, head).astype(np.float64)
        total = c.sum()
        if total == 0:
            raise ValueError("no routing events recorded")
        return c / total

    def mass_ratios(self, stream: int | None = None, head: int | None = None) -> np.ndarray:
        m = self._slice(self.weight_mass, stream, head)
        total = m.sum()
        if total == 0:
            raise ValueError("no routing events recorded")
        return m / total

    @staticmethod
    def _slice(a: np.ndarray, stream, head) -> np.ndarray:
        if stream is not None:
            a = a[stream:stream + 1]
        if head is not None:
            a = a[:, head:head + 1]
        return a.sum(axis=(0, 1))

    def rows(self) -> list[dict]:
        """CSV rows for every breakdown: all, per stream, per head, per stream and head."""
        out = []
        scopes = [("all", None, None)]
        scopes += [("stream", s, None) for s in range(len(STREAMS))]
        scopes += [("head", None, h) for h in range(self.heads)]
        scopes += [("stream_head", s, h) for s in range(len(STREAMS)) for h in range(self.heads)]
        for scope, s, h in scopes:
            counts = self._slice(self.counts, s, h)
            mass = self._slice(self.weight_mass, s, h)
            total = counts.sum()
            for d in range(self.n_experts):
                out.append({
                    "scope": scope,
                    "stream": "*" if s is None else STREAMS[s],
                    "head": "*" if h is None else h,
                    "delta": d,
                    "count": int(counts[d]),
                    "ratio": float(counts[d] / total) if total else 0.0,
                    "weight_mass": float(mass[d]),
                })
        return out


STATS_COLUMNS = ["scope", "stream", "head", "delta", "count", "ratio", "weight_mass"]
REPORT_COLUMNS = ["lang", "avg_bytes", "ratio_vs_pivot"]


def write_stats_csv(stats: RoutingStats, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.DictWriter(f, fieldnames=STATS_COLUMNS)
        w.writeheader()
        w.writerows(stats.rows())


def record_expert_ratios(model: Model, corpus: ParallelCorpus, direction: tuple[str, str] | None = None,
                         lid_override: str | None = None, batch_size: int = 64) -> RoutingStats:
    """Encode every source sentence of ``direction`` and tally the gate's selections."""
    c = model.config
    if not c.has_ada or c.msha_scales is not None:
        raise ValueError("model has no adaptive routing layer (max_delta=0 or fixed scales)")
    records = list(corpus)
    if direction is not None:
        records = [r for r in records if (r.src_lang, r.tgt_lang) == tuple(direction)]
    stats = RoutingStats(c.heads, c.max_delta + 1)
    seqs = [encode(r.src_text, r.src_lang, model.vocab) for r in records]
    with no_grad():
        for i in range(0, len(seqs), batch_size):
            model.encode(pad_batch(seqs[i:i + batch_size]), lid_override=lid_override, recorder=stats)
    return stats


def avg_delta(stats: RoutingStats, weighted: bool = False, stream: int | None = None,
              head: int | None = None) -> float:
    """Mean contextualization radius under the selection (or weight-mass) distribution."""
    r = stats.mass_ratios(stream, head) if weighted else stats.ratios(stream, head)
    return float(np.dot(r, np.arange(len(r))))


def js_divergence(p, q, tol: float = 1e-6) -> float:
    """Jensen-Shannon divergence in nats (bounded by ln 2)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    for name, d in (("P", p), ("Q", q)):
        if (d < 0).any():
            raise ValueError(f"{name} has negative entries")
        if abs(d.sum() - 1.0) > tol:
            raise ValueError(f"{name} sums to {d.sum()}, not 1")
    m = 0.5 * (p + q)

    def kl(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log(a[nz] / m[nz])))
    return 0.5 * kl(p) + 0.5 * kl(q)


@dataclass
class ConcisenessReport:
    pivot: str
    avg_bytes: dict[str, float] = field(default_factory=dict)

    def ratio(self, lang: str) -> float:
        return self.avg_bytes[lang] / self.avg_bytes[self.pivot]

    def rows(self) -> list[dict]:
        return [{"lang": l, "avg_bytes": b, "ratio_vs_pivot": self.ratio(l)}
                for l, b in self.avg_bytes.items()]


def conciseness_report(texts: dict[str, Sequence[str]], pivot: str) -> ConcisenessReport:
    """Average UTF-8 byte length per language over sentence-aligned texts."""
    if pivot not in texts:
        raise ValueError(f"pivot {pivot!r} not in corpus")
    counts = {len(v) for v in texts.values()}
    if len(counts) != 1:
        raise ValueError(f"languages are not aligned: sentence counts {sorted(counts)}")
    if counts == {0}:
        raise ValueError("empty corpus")
    avg = {l: sum(len(s.encode("utf-8")) for s in v) / len(v) for l, v in texts.items()}
    if any(b <= 0 for b in avg.values()):
        raise ValueError("average byte length must be positive")
    return ConcisenessReport(pivot, avg)


def write_report_csv(report: ConcisenessReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.DictWriter(f, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        w.writerows(report.rows())


def js_matrix(stats: dict[str, RoutingStats]) -> dict[tuple[str, str], float]:
    """Pairwise JS divergence between the selection distributions of several runs."""
    names = list(stats)
    return {(a, b): js_divergence(stats[a].ratios(), stats[b].ratios())
            for i, a in enumerate(names) for b in names[i + 1:]}


__all__ = ["RoutingStats", "record_expert_ratios", "avg_delta", "js_divergence",
           "conciseness_report", "ConcisenessReport", "write_stats_csv", "write_report_csv",
           "js_matrix"]
