"""Finite-difference verification of analytic gradients.

The numeric side perturbs tensor data in place and re-runs the caller's
forward closure, so it is independent of every backward rule it checks.
Graphs should be built in float64 for this (construct tensors with
``dtype=np.float64``); central differences are then accurate to ~1e-8.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


def numeric_gradient(
    forward: Callable[[], Tensor], t: Tensor, coord: tuple[int, ...], step: float = 1e-4
) -> float:
    """Central difference of the scalar ``forward()`` w.r.t. one coordinate."""
    orig = t.data[coord]
    t.data[coord] = orig + step
    hi = float(forward().data)
    t.data[coord] = orig - step
    lo = float(forward().data)
    t.data[coord] = orig
    return (hi - lo) / (2.0 * step)


def check_gradients(
    forward: Callable[[], Tensor],
    params: Sequence[Tensor],
    rtol: float = 1e-3,
    atol: float = 1e-6,
    step: float = 1e-4,
    max_coords_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
) -> list[str]:
    """Compare analytic gradients of ``forward()`` against central differences.

    ``forward`` must rebuild the graph from the current ``params`` data on
    every call and return a scalar Tensor. Returns a list of mismatch
    descriptions (empty when all checked coordinates agree within
    ``atol + rtol * max(|analytic|, |numeric|)``).
    """
    for p in params:
        if not p.requires_grad:
            raise ValueError("all checked tensors must have requires_grad=True")
        p.grad = None
    with Tape() as tape:
        loss = forward()
    backward(loss, tape)
    analytic = []
    for p in params:
        analytic.append(np.zeros_like(p.data) if p.grad is None else p.grad.copy())
        p.grad = None

    failures: list[str] = []
    for idx, p in enumerate(params):
        coords = list(np.ndindex(*p.shape)) if p.ndim else [()]
        if max_coords_per_tensor is not None and len(coords) > max_coords_per_tensor:
            if rng is None:
                rng = np.random.default_rng(0)
            pick = rng.choice(len(coords), size=max_coords_per_tensor, replace=False)
            coords = [coords[i] for i in sorted(pick)]
        for coord in coords:
            fd = numeric_gradient(forward, p, coord, step=step)
            an = float(analytic[idx][coord])
            tol = atol + rtol * max(abs(an), abs(fd))
            if abs(an - fd) > tol:
                failures.append(
                    f"param {idx} coord {coord}: analytic {an:.6e} vs numeric {fd:.6e}"
                )
    return failures
