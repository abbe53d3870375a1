"""Central finite-difference checks against the reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5,
               coords: np.ndarray | None = None, floor: float = 1e-8) -> float:
    """Max relative error between ``backward()`` and central differences.

    ``f`` maps ``x`` to a scalar tensor. ``x`` should be float64. ``coords``
    optionally restricts the probe to a subset of flat indices.
    """
    if x.dtype != np.float64:
        raise TypeError("grad_check requires a float64 input")
    x.requires_grad = True
    x.grad = None
    out = f(x)
    if not np.isfinite(out.data).all():
        raise ValueError("f(x) is not finite")
    out.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    return _probe({"x": x}, lambda: f(x), {"x": analytic}, step,
                  {"x": coords} if coords is not None else None, floor)


def grad_check_params(loss_fn: Callable[[], Tensor], params: dict[str, Tensor],
                      step: float = 1e-5, max_per_param: int | None = 16,
                      rng: np.random.Generator | None = None, floor: float = 1e-8,
                      probe: tuple[Callable[[], Tensor], dict[str, Tensor]] | None = None) -> float:
    """Grad-check a scalar loss over a dictionary of parameters.

    At most ``max_per_param`` randomly chosen coordinates of each parameter
    are probed, which keeps full-model checks to seconds. ``probe`` optionally
    supplies a ``(loss_fn, params)`` twin, typically in extended precision,
    on which the finite differences are taken instead; its parameters must
    carry the same names and values.
    """
    rng = rng or np.random.default_rng(0)
    for p in params.values():
        if p.dtype != np.float64:
            raise TypeError("grad_check_params requires float64 parameters")
        p.grad = None
    out = loss_fn()
    if not np.isfinite(out.data).all():
        raise ValueError("loss is not finite")
    out.backward()
    analytic = {n: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for n, p in params.items()}
    coords = None
    if max_per_param is not None:
        coords = {}
        for n, p in params.items():
            if p.size <= max_per_param:
                coords[n] = np.arange(p.size)
            else:
                coords[n] = rng.choice(p.size, size=max_per_param, replace=False)
    if probe is not None:
        loss_fn, params = probe[0], probe[1]
    return _probe(params, loss_fn, analytic, step, coords, floor)


def _probe(params, fn, analytic, step, coords, floor) -> float:
    worst = 0.0
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size) if coords is None else coords[name]
            a_flat = analytic[name].reshape(-1)
            for i in idx:
                orig = flat[i]
                # keep the difference in the probe's own precision before rounding
                flat[i] = orig + step
                fp = fn().data[()]
                flat[i] = orig - step
                fm = fn().data[()]
                flat[i] = orig
                num = float((fp - fm) / (2 * flat.dtype.type(step)))
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise ValueError(f"non-finite probe at {name}[{i}]")
                worst = max(worst, float(relative_error(a_flat[i], num, floor)))
    return worst
