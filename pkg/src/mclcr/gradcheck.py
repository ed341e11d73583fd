"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor


class NonDeterministicError(RuntimeError):
    """The function under test returned different values for identical inputs."""


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    checked: dict[str, int]

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.worst <= tol


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))


def grad_check(f: Callable[[], Tensor], params: Mapping[str, Tensor], eps: float = 1e-3,
               max_coords: int | None = 20, seed: int = 0) -> GradCheckReport:
    """Compare backprop gradients of the scalar ``f()`` against central differences.

    ``f`` rebuilds the graph from the current ``params`` on every call. At most
    ``max_coords`` coordinates per parameter are sampled (all if ``None``).
    """
    if not eps > 0:
        raise ValueError(f"grad_check needs eps > 0, got {eps}")
    for p in params.values():
        p.grad = None
    loss = f()
    if f().item() != loss.item():
        raise NonDeterministicError("f() is not deterministic; disable dropout and fix all rngs")
    loss.backward()
    analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)).copy()
                for k, p in params.items()}

    rng = np.random.default_rng(seed)
    errors, counts = {}, {}
    for name, p in params.items():
        p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if max_coords is None or n <= max_coords else rng.choice(n, max_coords, replace=False)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            up = f().item()
            flat[c] = orig - eps
            down = f().item()
            flat[c] = orig
            numeric = (up - down) / (2.0 * eps)
            worst = max(worst, relative_error(float(analytic[name].reshape(-1)[c]), numeric))
        errors[name] = worst
        counts[name] = len(coords)
    return GradCheckReport(errors, counts)
