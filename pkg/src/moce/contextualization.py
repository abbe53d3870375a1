"""The pool of multi-scale contextualization experts.

Expert ``delta`` mixes each position with its neighbours within radius
``delta`` (the centre counts), i.e. a convolution of width ``2*delta - 1``.
``delta = 0`` is the identity and owns no parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, conv1d_same, relu


def kernel_size(delta: int) -> int:
    if delta < 0:
        raise ValueError(f"radius must be non-negative, got {delta}")
    return 0 if delta == 0 else 2 * delta - 1


@dataclass
class ExpertPool:
    """Experts for every radius ``0..max_delta`` over ``d_k``-wide slices.

    ``weights[delta]`` has shape ``(2*delta - 1, d_k, d_k)``; index 0 is unused.
    """

    max_delta: int
    d_k: int
    weights: dict[int, Tensor]
    biases: dict[int, Tensor]
    activation: str = "none"

    @property
    def size(self) -> int:
        return self.max_delta + 1

    @property
    def radii(self) -> list[int]:
        return list(range(self.max_delta + 1))

    def parameters(self, prefix: str = "pool") -> dict[str, Tensor]:
        out = {}
        for d in range(1, self.max_delta + 1):
            out[f"{prefix}.w{d}"] = self.weights[d]
            if d in self.biases:
                out[f"{prefix}.b{d}"] = self.biases[d]
        return out


def init_pool(max_delta: int, d_k: int, rng: np.random.Generator, bias: bool = True,
              activation: str = "none", dtype=np.float32) -> ExpertPool:
    if max_delta < 0:
        raise ValueError("max_delta must be >= 0")
    if activation not in ("none", "relu"):
        raise ValueError(f"unknown expert activation {activation!r}")
    weights, biases = {}, {}
    for d in range(1, max_delta + 1):
        k = kernel_size(d)
        bound = 1.0 / np.sqrt(k * d_k)
        w = rng.uniform(-bound, bound, size=(k, d_k, d_k))
        # start each expert close to the identity so early routing is not destructive
        w[k // 2] += np.eye(d_k) * (1.0 - bound)
        weights[d] = Tensor(w.astype(dtype), requires_grad=True)
        if bias:
            biases[d] = Tensor(np.zeros(d_k, dtype=dtype), requires_grad=True)
    return ExpertPool(max_delta, d_k, weights, biases, activation)


def apply_expert(pool: ExpertPool, delta: int, x: Tensor) -> Tensor:
    """Contextualize ``x`` of shape ``(..., L, d_k)`` with expert ``delta``."""
    if not 0 <= delta <= pool.max_delta:
        raise ValueError(f"radius {delta} outside pool range 0..{pool.max_delta}")
    if delta == 0:
        return x
    out = conv1d_same(x, pool.weights[delta], pool.biases.get(delta))
    if pool.activation == "relu":
        out = relu(out)
    return out


def pool_param_count(max_delta: int, d_k: int, include_bias: bool = True) -> int:
    """``sum_{d=1..D} (2d-1) d_k^2`` (= ``D^2 d_k^2``) plus ``D d_k`` for biases."""
    if max_delta < 0 or d_k < 1:
        raise ValueError("need max_delta >= 0 and d_k >= 1")
    n = sum((2 * d - 1) * d_k * d_k for d in range(1, max_delta + 1))
    if include_bias:
        n += max_delta * d_k
    return n
