"""Multi-head attention and its fixed-scale multiscale-headed variant.

Heads are contiguous ``d_k``-wide slices of the projected ``Q``, ``K`` and
``V``. The multiscale variant contextualizes every slice of head ``i`` with
the same expert before scaled dot-product attention.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .contextualization import ExpertPool, apply_expert
from .tensor import Tensor

NEG_INF = -np.inf


@dataclass
class AttentionParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    heads: int

    @property
    def d_model(self) -> int:
        return self.wq.shape[0]

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.wq": self.wq, f"{prefix}.wk": self.wk,
                f"{prefix}.wv": self.wv, f"{prefix}.wo": self.wo}


def init_attention(d_model: int, heads: int, rng: np.random.Generator,
                   dtype=np.float32) -> AttentionParams:
    if d_model % heads:
        raise ValueError(f"d_model={d_model} is not divisible by heads={heads}")
    bound = np.sqrt(6.0 / (2 * d_model))

    def mat():
        return Tensor(rng.uniform(-bound, bound, (d_model, d_model)).astype(dtype), requires_grad=True)
    return AttentionParams(mat(), mat(), mat(), mat(), heads)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """``(..., L, d_model)`` -> ``(..., h, L, d_k)``."""
    *lead, L, d = x.shape
    if d % heads:
        raise ValueError(f"d_model={d} is not divisible by heads={heads}")
    x = x.reshape(*lead, L, heads, d // heads)
    return T.swapaxes(x, -2, -3)


def merge_heads(x: Tensor) -> Tensor:
    """``(..., h, L, d_k)`` -> ``(..., L, h*d_k)``."""
    x = T.swapaxes(x, -2, -3)
    *lead, L, h, dk = x.shape
    return x.reshape(*lead, L, h * dk)


def project_split(xq: Tensor, params: AttentionParams, xkv: Tensor | None = None):
    """Return ``Q, K, V`` as ``(..., h, L, d_k)`` tensors."""
    if params.d_model % params.heads:
        raise ValueError(f"d_model={params.d_model} is not divisible by heads={params.heads}")
    xkv = xq if xkv is None else xkv
    q = split_heads(xq @ params.wq, params.heads)
    k = split_heads(xkv @ params.wk, params.heads)
    v = split_heads(xkv @ params.wv, params.heads)
    return q, k, v


def head_slices(x: Tensor) -> list[Tensor]:
    """Per-head list view of a ``(..., h, L, d_k)`` tensor."""
    return [x[..., i, :, :] for i in range(x.shape[-3])]


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None,
                         return_weights: bool = False):
    """``softmax(q k^T / sqrt(d_k) + mask) v``; ``mask`` holds 0 or ``-inf``."""
    d_k = q.shape[-1]
    scores = (q @ T.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(d_k))
    if mask is not None:
        scores = scores + Tensor(np.asarray(mask, dtype=scores.dtype))
    w = T.softmax(scores, axis=-1)
    out = w @ v
    return (out, w) if return_weights else out


def padding_mask(nonpad: np.ndarray) -> np.ndarray:
    """Additive key mask ``(B, 1, 1, L)`` from a boolean ``(B, L)`` array."""
    return np.where(nonpad, 0.0, NEG_INF)[:, None, None, :]


def causal_mask(L: int) -> np.ndarray:
    return np.triu(np.full((L, L), NEG_INF), k=1)


def attention(xq: Tensor, params: AttentionParams, mask: np.ndarray | None = None,
              xkv: Tensor | None = None,
              contextualize: Callable[[Tensor, Tensor, Tensor], tuple] | None = None) -> Tensor:
    """Project, optionally contextualize the head slices, attend, merge, ``W^O``."""
    q, k, v = project_split(xq, params, xkv)
    if contextualize is not None:
        q, k, v = contextualize(q, k, v)
    heads = scaled_dot_attention(q, k, v, mask)
    return merge_heads(heads) @ params.wo


def mha_forward(x: Tensor, params: AttentionParams, mask: np.ndarray | None = None) -> Tensor:
    return attention(x, params, mask)


def zero_padded(x: Tensor, nonpad: np.ndarray | None) -> Tensor:
    """Zero padded positions of a ``(B, h, L, d_k)`` or ``(S, B, h, L, d_k)`` slice stack."""
    if nonpad is None:
        return x
    m = nonpad[:, None, :, None].astype(x.dtype)
    return x * Tensor(m)


def msha_forward(x: Tensor, params: AttentionParams, pool: ExpertPool,
                 assignment: Sequence[int], mask: np.ndarray | None = None,
                 nonpad: np.ndarray | None = None) -> Tensor:
    """Fixed-scale multiscale-headed attention: head ``i`` uses expert ``assignment[i]``.

    ``x`` is ``(B, L, d_model)``; ``nonpad`` is the boolean ``(B, L)`` token mask.
    """
    if len(assignment) != params.heads:
        raise ValueError(f"need {params.heads} radii, got {len(assignment)}")
    for d in assignment:
        if not 0 <= d <= pool.max_delta:
            raise ValueError(f"radius {d} outside pool range 0..{pool.max_delta}")

    def ctx(q, k, v):
        out = []
        for s in (q, k, v):
            s = zero_padded(s, nonpad)
            out.append(T.stack([apply_expert(pool, d, s[:, i]) for i, d in enumerate(assignment)],
                               axis=1))
        return tuple(out)
    return attention(x, params, mask, contextualize=ctx)


def kernels_to_radii(kernels: Sequence[int]) -> list[int]:
    """Map convolution widths (0 meaning identity) to radii via ``k = 2*delta - 1``."""
    out = []
    for k in kernels:
        if k == 0:
            out.append(0)
        elif k > 0 and k % 2 == 1:
            out.append((k + 1) // 2)
        else:
            raise ValueError(f"kernel size {k} has no radius")
    return out
