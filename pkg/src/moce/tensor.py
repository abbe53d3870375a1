"""Dense numpy-backed tensors with reverse-mode differentiation.

Every operation the seq2seq model needs is defined here, each with its own
backward rule. Values are plain ``numpy.ndarray`` buffers; a tensor records the
tensors it was computed from plus a closure that pushes its gradient back to
them. ``float32`` is used for training and ``float64`` for verification.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference, finite-difference probes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """An n-dimensional array with an optional gradient slot."""

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 _parents: tuple = (), _backward: Callable | None = None,
                 name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self._consumed = False
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- graph -------------------------------------------------------------
    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Populate ``.grad`` on every reachable tensor that requires it.

        The graph is released afterwards, so a second call raises.
        """
        if self._consumed:
            raise RuntimeError("backward() already called on this graph; rebuild it first")
        if not self.requires_grad:
            raise RuntimeError("tensor does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise RuntimeError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg
            node._parents = ()
            node._backward = None
            node._consumed = True

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, idx): return getitem(self, idx)
    def __pow__(self, p: float): return power(self, p)

    def sum(self, axis=None, keepdims=False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)
    def transpose(self, *axes): return transpose(self, axes if axes else None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)
    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)
    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)
    return _make(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None)
    return _make(out, (a, b), backward)


def power(a: Tensor, p: float) -> Tensor:
    out = a.data ** p
    return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)
    return _make(out, (a,), lambda g: (g * (out > 0),))


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or rate <= 0.0:
        return a
    keep = (rng.random(a.shape, dtype=np.float32) >= rate).astype(a.dtype) * a.dtype.type(1.0 / (1.0 - rate))
    return _make(a.data * keep, (a,), lambda g: (g * keep,))


# -- reductions and shape ------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _make(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return _make(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def getitem(a: Tensor, idx) -> Tensor:
    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)
    return _make(a.data[idx], (a,), backward)


def scatter_rows(ids: np.ndarray, rows: np.ndarray, n: int) -> np.ndarray:
    """``out[ids[i]] += rows[i]`` for an ``(n, d)`` output."""
    ids = ids.reshape(-1)
    rows = rows.reshape(len(ids), -1)
    out = np.zeros((n, rows.shape[1]), dtype=rows.dtype)
    if len(ids) == 0:
        return out
    order = np.argsort(ids, kind="stable")
    sorted_ids = ids[order]
    starts = np.flatnonzero(np.r_[True, sorted_ids[1:] != sorted_ids[:-1]])
    out[sorted_ids[starts]] = np.add.reduceat(rows[order], starts, axis=0)
    return out


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Embedding lookup: ``table[ids]`` with scatter-add backward."""
    ids = np.asarray(ids)

    def backward(g):
        return (scatter_rows(ids, g, table.shape[0]).reshape(table.shape),)
    return _make(table.data[ids], (table,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))
    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


# -- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs ≥2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    if b.ndim == 2 and a.ndim > 2:
        # activations times a weight matrix: fold the leading axes into rows
        lead = a.shape[:-1]
        a2 = a.data.reshape(-1, a.shape[-1])

        def backward2(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb
        return _make((a2 @ b.data).reshape(*lead, b.shape[-1]), (a, b), backward2)

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb
    return _make(a.data @ b.data, (a, b), backward)


# -- fused neural-network primitives -------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-stabilised softmax; ``-inf`` entries get exactly zero weight."""
    d = x.data
    m = d.max(axis=axis, keepdims=True)
    if np.any(np.isneginf(m)):
        raise ValueError("softmax row is entirely -inf")
    e = np.exp(d - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    return _make(y, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    d = x.data
    m = d.max(axis=axis, keepdims=True)
    shifted = d - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)
    return _make(out, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply ``gamma``/``beta``."""
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx_hat = g * gamma.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)
    return _make(out, (x, gamma, beta), backward)


def conv1d_same(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Centred, zero-padded 1-D convolution over the second-to-last axis.

    ``x`` is ``(..., L, C_in)``, ``w`` is ``(k, C_in, C_out)`` with odd ``k``.
    Output position ``j`` is ``b + sum_t x[j + t] @ w[t + r]`` for
    ``t`` in ``-r..r``, ``r = (k - 1) // 2``, reading zeros outside ``[0, L)``.
    """
    k, c_in, c_out = w.shape
    if k % 2 == 0:
        raise ValueError(f"conv1d_same needs an odd kernel, got {k}")
    if x.shape[-1] != c_in:
        raise ValueError(f"channel mismatch: input {x.shape[-1]} vs kernel {c_in}")
    r = (k - 1) // 2
    L = x.shape[-2]
    lead = x.shape[:-2]
    x2 = x.data.reshape(-1, c_in)
    # one product for every tap: y[..., i, t, :] = x[..., i, :] @ w[t]
    w_all = np.transpose(w.data, (1, 0, 2)).reshape(c_in, k * c_out)
    y = (x2 @ w_all).reshape(*lead, L, k, c_out)
    out = np.zeros((*lead, L, c_out), dtype=np.result_type(x.dtype, w.dtype))
    # out[j] = sum_t y[j + t - r, t]
    for t in range(k):
        s = t - r
        lo, hi = max(0, -s), min(L, L - s)
        if lo < hi:
            out[..., lo:hi, :] += y[..., lo + s:hi + s, t, :]
    if b is not None:
        out += b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gy = np.zeros((*lead, L, k, c_out), dtype=g.dtype)
        for t in range(k):
            s = t - r
            lo, hi = max(0, -s), min(L, L - s)
            if lo < hi:
                gy[..., lo + s:hi + s, t, :] = g[..., lo:hi, :]
        gy2 = gy.reshape(-1, k * c_out)
        gx = (gy2 @ w_all.T).reshape(x.shape) if x.requires_grad else None
        gw = (x2.T @ gy2).reshape(c_in, k, c_out).transpose(1, 0, 2) if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g.reshape(-1, c_out).sum(axis=0)
    return _make(out, parents, backward)


def weighted_sum(xs: Sequence[Tensor], w: Tensor) -> Tensor:
    """``sum_e w[..., e, None] * xs[e]`` for ``xs[e]`` of shape ``(..., d)``.

    Where a weight is exactly zero the matching input receives exactly zero gradient.
    """
    E = len(xs)
    if w.shape[-1] != E:
        raise ValueError(f"{E} inputs but {w.shape[-1]} weights")
    out = sum(w.data[..., e, None] * xs[e].data for e in range(E))

    def backward(g):
        gx = [g * w.data[..., e, None] if xs[e].requires_grad else None for e in range(E)]
        gw = np.stack([(g * xs[e].data).sum(axis=-1) for e in range(E)], axis=-1) \
            if w.requires_grad else None
        return (*gx, gw)
    return _make(out, (*xs, w), backward)


def cross_entropy_ls(logits: Tensor, targets: np.ndarray, smoothing: float = 0.0,
                     ignore_index: int | None = None) -> Tensor:
    """Label-smoothed cross entropy averaged over non-ignored positions.

    The smoothed target puts ``1 - smoothing`` on the gold id and spreads
    ``smoothing`` uniformly over all ``V`` classes.
    """
    targets = np.asarray(targets)
    V = logits.shape[-1]
    flat = logits.data.reshape(-1, V)
    t = targets.reshape(-1)
    if t.size and (t.min() < 0 or t.max() >= V):
        raise ValueError(f"target id out of range [0, {V})")
    keep = np.ones_like(t, dtype=bool) if ignore_index is None else t != ignore_index
    n = int(keep.sum())
    if n == 0:
        raise ValueError("no non-ignored target positions")
    m = flat.max(axis=1, keepdims=True)
    shifted = flat - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    nll = -logp[np.arange(len(t)), t]
    smooth = -logp.mean(axis=1)
    per = (1.0 - smoothing) * nll + smoothing * smooth
    loss = (per * keep).sum() / n

    def backward(g):
        p = np.exp(logp)
        q = np.full_like(p, smoothing / V)
        q[np.arange(len(t)), t] += 1.0 - smoothing
        scale = (keep[:, None] * (float(g) / n)).astype(p.dtype)
        gl = (p - q) * scale
        return (gl.reshape(logits.shape),)
    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def parameters_to_list(params: dict[str, Tensor] | Iterable[Tensor]) -> list[Tensor]:
    if isinstance(params, dict):
        return list(params.values())
    return list(params)
