"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import GradTape, NumericsError, Tensor
from .rng import RngStream


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    n_coords: int
    worst: tuple[str, int] | None  # (param name, flat index)

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return (
            f"gradcheck {status}: max_rel_err={self.max_rel_err:.3e} "
            f"over {self.n_coords} coords (worst {self.worst})"
        )


def _sample_coords(params: dict[str, Tensor], min_coords: int, rng: RngStream) -> list[tuple[str, int]]:
    """Round-robin over parameters so every tensor contributes coordinates."""
    per_tensor = max(1, math.ceil(min_coords / max(1, len(params))))
    coords = []
    for name, p in sorted(params.items()):
        n = p.data.size
        take = min(per_tensor, n)
        idx = rng.child(name).choice(n, take, replace=False)
        coords.extend((name, int(i)) for i in sorted(idx))
    return coords


def finite_diff_check(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-2,
    tolerance: float = 1e-2,
    min_coords: int = 64,
    seed: int = 0,
) -> GradCheckReport:
    """Compare reverse-mode gradients of loss_fn against central differences.

    loss_fn must be a deterministic closure over `params` returning a
    scalar Tensor. Coordinates are sampled across every parameter (at
    least min_coords total when available). rel_err uses the symmetric
    form |g_ad - g_fd| / max(1e-6, |g_ad| + |g_fd|).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    with GradTape() as tape:
        loss = loss_fn()
    grads = tape.backward(loss)
    by_name = {}
    for name, p in params.items():
        if p not in grads:
            raise NumericsError(f"parameter {name!r} received no gradient")
        by_name[name] = grads[p].reshape(-1)

    coords = _sample_coords(params, min_coords, RngStream(seed, "gradcheck"))
    max_rel = 0.0
    worst = None
    for name, i in coords:
        flat = params[name].data.reshape(-1)
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = float(loss_fn().data)
        flat[i] = orig - eps
        f_minus = float(loss_fn().data)
        flat[i] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NumericsError(f"non-finite loss while probing {name}[{i}]")
        g_fd = (f_plus - f_minus) / (2.0 * eps)
        g_ad = float(by_name[name][i])
        rel = abs(g_ad - g_fd) / max(1e-6, abs(g_ad) + abs(g_fd))
        if rel > max_rel:
            max_rel = rel
            worst = (name, i)
    return GradCheckReport(
        max_rel_err=max_rel,
        passed=max_rel < tolerance,
        n_coords=len(coords),
        worst=worst,
    )
