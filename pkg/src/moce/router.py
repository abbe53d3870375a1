"""Adaptive expert selection and mixing for multiscale-headed attention.

For each routing site (stream Q/K/V, head, token) a linear router scores the
``max_delta + 1`` experts. The gate keeps the top-k probabilities, sets the
rest to ``-inf`` and applies a second softmax, so the mixture weights are
``softmax(topk(softmax(x W)))``. The selection is a constant during backward:
gradients reach the selected weights and, through the first softmax, the
router logits.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionParams, attention, zero_padded
from .contextualization import ExpertPool, apply_expert
from .tensor import Tensor

STREAMS = ("q", "k", "v")
GATE_MODES = ("prob", "logit")


@dataclass
class RouterParams:
    """``weight`` is ``(d_in, E)`` or, per stream, ``(3, d_in, E)``.

    ``d_in = d_k`` or ``d_k + d_lid`` when the language-id embedding is fed in.
    """

    weight: Tensor
    d_k: int
    top_k: int = 2
    use_lid: bool = False
    gate_mode: str = "prob"

    @property
    def n_experts(self) -> int:
        return self.weight.shape[-1]

    @property
    def per_stream(self) -> bool:
        return self.weight.ndim == 3

    @property
    def d_lid(self) -> int:
        return self.weight.shape[-2] - self.d_k


def init_router(d_k: int, n_experts: int, rng: np.random.Generator, top_k: int = 2,
                d_lid: int = 0, per_stream: bool = False, gate_mode: str = "prob",
                dtype=np.float32) -> RouterParams:
    if not 1 <= top_k <= n_experts:
        raise ValueError(f"top_k={top_k} outside 1..{n_experts}")
    if gate_mode not in GATE_MODES:
        raise ValueError(f"unknown gate mode {gate_mode!r}")
    d_in = d_k + d_lid
    shape = (3, d_in, n_experts) if per_stream else (d_in, n_experts)
    bound = 1.0 / np.sqrt(d_in)
    w = Tensor(rng.uniform(-bound, bound, shape).astype(dtype), requires_grad=True)
    return RouterParams(w, d_k, top_k, d_lid > 0, gate_mode)


@dataclass
class GateDecision:
    """Selected expert indices and their mixture weights at one routing site."""

    indices: np.ndarray
    weights: np.ndarray


def router_logits(x: Tensor, params: RouterParams, lid: Tensor | None = None) -> Tensor:
    """``[x | lid] W^R`` for ``x`` of shape ``(..., d_k)``.

    The concatenation is computed as ``x W_x + lid W_lid`` with ``W`` split by
    rows. With a per-stream router ``x`` must lead with the stream axis.
    """
    w = params.weight
    wx = w[..., :params.d_k, :]
    if params.per_stream:
        wx = wx.reshape(3, *([1] * (x.ndim - 3)), params.d_k, params.n_experts)
    logits = x @ wx
    if params.use_lid:
        if lid is None:
            raise ValueError("router expects a language-id vector but none was given")
        wl = w[..., params.d_k:, :]
        if params.per_stream:
            wl = wl.reshape(3, *([1] * (lid.ndim - 3)), params.d_lid, params.n_experts)
        logits = logits + lid @ wl
    return logits


def router_probs(x: Tensor, params: RouterParams, lid: Tensor | None = None) -> Tensor:
    return T.softmax(router_logits(x, params, lid), axis=-1)


def topk_indices(p: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries along the last axis, ties to the lower index."""
    if not 1 <= k <= p.shape[-1]:
        raise ValueError(f"k={k} outside 1..{p.shape[-1]}")
    return np.argsort(-p, axis=-1, kind="stable")[..., :k]


def topk_mask(p: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """0 at the selected entries, ``-inf`` elsewhere."""
    mask = np.full(p.shape, -np.inf, dtype=p.dtype)
    np.put_along_axis(mask, idx, 0.0, axis=-1)
    return mask


def topk_gate(p, k: int) -> GateDecision:
    """Gate a single probability vector: softmax over its top-k entries."""
    p = np.asarray(p.data if isinstance(p, Tensor) else p, dtype=np.float64)
    idx = topk_indices(p, k)
    masked = p + topk_mask(p, idx)
    e = np.exp(masked - masked.max())
    g = e / e.sum()
    return GateDecision(idx, g[idx])


# Replay of recorded selections, used to hold routing fixed during finite-difference probes.
_FROZEN: contextvars.ContextVar = contextvars.ContextVar("moce_frozen_routing", default=None)


@contextlib.contextmanager
def freeze_routing():
    """Record gate selections inside the block; after ``rewind()`` they are replayed.

    Selections are matched to gate calls by call order, so every replayed
    forward pass must route the same sites in the same order.
    """
    state = {"record": [], "cursor": 0}
    token = _FROZEN.set(state)
    try:
        yield state
    finally:
        _FROZEN.reset(token)


def rewind() -> None:
    state = _FROZEN.get()
    if state is not None:
        state["cursor"] = 0


def _select(p: np.ndarray, k: int) -> np.ndarray:
    state = _FROZEN.get()
    if state is None:
        return topk_indices(p, k)
    if state["cursor"] < len(state["record"]):
        idx = state["record"][state["cursor"]]
    else:
        idx = topk_indices(p, k)
        state["record"].append(idx)
    state["cursor"] += 1
    return idx


@dataclass
class GateOutput:
    indices: np.ndarray
    weights: Tensor
    probs: Tensor


def gate(x: Tensor, params: RouterParams, lid: Tensor | None = None) -> GateOutput:
    """Route every site of ``x`` (``(..., d_k)``) and return dense mixture weights.

    ``weights`` has the expert axis last and is exactly zero off the selection.
    """
    logits = router_logits(x, params, lid)
    probs = T.softmax(logits, axis=-1)
    idx = _select(probs.data, params.top_k)
    mask = Tensor(topk_mask(probs.data, idx))
    source = probs if params.gate_mode == "prob" else logits
    weights = T.softmax(source + mask, axis=-1)
    return GateOutput(idx, weights, probs)


def ada_contextualize(x: Tensor, pool: ExpertPool, params: RouterParams,
                      lid: Tensor | None = None, return_gate: bool = False):
    """Mix expert outputs per token: ``sum_i G_i(x_j) g_i(x)_j``.

    Experts run on whole sequences (the convolutions need neighbours) and are
    gathered per position through the dense gate weights.
    """
    if pool.size != params.n_experts:
        raise ValueError(f"pool has {pool.size} experts, router scores {params.n_experts}")
    g = gate(x, params, lid)
    out = T.weighted_sum([apply_expert(pool, d, x) for d in pool.radii], g.weights)
    return (out, g) if return_gate else out


def load_balance_loss(g: GateOutput, nonpad_sites: np.ndarray | None = None) -> Tensor:
    """``E * sum_e f_e * mean P_e`` with ``f_e`` the selection share of expert ``e``."""
    E = g.probs.shape[-1]
    k = g.indices.shape[-1]
    onehot = np.zeros(g.probs.shape, dtype=g.probs.dtype)
    np.put_along_axis(onehot, g.indices, 1.0, axis=-1)
    w = np.ones(g.probs.shape[:-1], dtype=g.probs.dtype)
    if nonpad_sites is not None:
        w = np.broadcast_to(nonpad_sites, w.shape).astype(g.probs.dtype)
    n = max(w.sum(), 1.0)
    f = (onehot * w[..., None]).reshape(-1, E).sum(axis=0) / (n * k)
    pbar = (g.probs * Tensor(w[..., None])).reshape(-1, E).sum(axis=0) * (1.0 / n)
    return (pbar * Tensor(f)).sum() * float(E)


def ada_msha_forward(x: Tensor, attn: AttentionParams, pool: ExpertPool, router: RouterParams,
                     lid: Tensor | None = None, mask: np.ndarray | None = None,
                     nonpad: np.ndarray | None = None, recorder=None,
                     return_gate: bool = False):
    """Adaptive multiscale-headed self-attention over ``x`` of shape ``(B, L, d_model)``.

    ``lid`` is the ``(B, d_lid)`` language-id embedding, ``nonpad`` the boolean
    ``(B, L)`` token mask. If ``recorder`` is given, its ``add(indices, weights,
    nonpad)`` receives the ``(3, B, h, L, k)`` selections of this call.
    """
    captured = {}

    def ctx(q, k, v):
        stacked = zero_padded(T.stack([q, k, v], axis=0), nonpad)
        lid_b = None
        if lid is not None:
            lid_b = lid.reshape(1, lid.shape[0], 1, 1, lid.shape[1])
        out, g = ada_contextualize(stacked, pool, router, lid_b, return_gate=True)
        captured["gate"] = g
        return out[0], out[1], out[2]

    y = attention(x, attn, mask, contextualize=ctx)
    g = captured["gate"]
    if recorder is not None:
        sel_w = np.take_along_axis(g.weights.data, g.indices, axis=-1)
        np_mask = np.ones(x.shape[:2], dtype=bool) if nonpad is None else nonpad
        recorder.add(g.indices, sel_w, np_mask)
    return (y, g) if return_gate else y
