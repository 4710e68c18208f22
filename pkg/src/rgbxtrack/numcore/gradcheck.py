"""Central finite-difference checks against the tape gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, backward, no_grad


def numeric_grad(f: Callable[[], Tensor], x: Tensor, step: float = 1e-4,
                 coords: np.ndarray | None = None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``x`` (perturbed in place)."""
    flat = x.data.reshape(-1)
    coords = np.arange(flat.size) if coords is None else np.asarray(coords)
    out = np.zeros(coords.size)
    with no_grad():
        for n, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + step
            fp = f().item()
            flat[i] = orig - step
            fm = f().item()
            flat[i] = orig
            out[n] = (fp - fm) / (2.0 * step)
    return out


def grad_check(f: Callable[[], Tensor], x: Tensor, step: float = 1e-4,
               coords: np.ndarray | None = None) -> float:
    """Max over coordinates of ``|analytic - fd| / max(1, |fd|)``.

    ``f`` is a closure that reads ``x`` and returns a scalar tensor. ``coords``
    restricts the check to a subset of flat indices (large parameter tensors).
    """
    was = x.requires_grad
    x.requires_grad = True
    prev = x.grad
    x.grad = None
    try:
        loss = f()
        if loss.requires_grad:
            backward(loss)
        analytic = np.zeros(x.size) if x.grad is None else x.grad.reshape(-1).copy()
    finally:
        x.grad = prev
        x.requires_grad = was
    fd = numeric_grad(f, x, step, coords)
    if coords is not None:
        analytic = analytic[np.asarray(coords)]
    if fd.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - fd) / np.maximum(1.0, np.abs(fd))))


def grad_check_many(f: Callable[[], Tensor], tensors: dict[str, Tensor], step: float = 1e-4,
                    max_coords: int | None = None, seed: int = 0) -> dict[str, float]:
    """Run :func:`grad_check` per named tensor, sampling coordinates if large."""
    rng = np.random.default_rng(seed)
    errs = {}
    for name, t in tensors.items():
        coords = None
        if max_coords is not None and t.size > max_coords:
            coords = np.sort(rng.choice(t.size, size=max_coords, replace=False))
        errs[name] = grad_check(f, t, step, coords)
    return errs
