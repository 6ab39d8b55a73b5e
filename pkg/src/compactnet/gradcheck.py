"""Central finite differences, used as the reference for every gradient."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor


def finite_diff_grad(lossfn: Callable[[], float], params: Sequence[Tensor],
                     step: float = 1e-5) -> list[np.ndarray]:
    """Estimate d lossfn / d param for each tensor in ``params`` coordinatewise.

    ``lossfn`` is called with no arguments and must read the current
    ``param.data``; each coordinate is nudged in place and restored.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    grads = []
    for p in params:
        g = np.zeros(p.shape)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(lossfn())
            flat[i] = orig - step
            down = float(lossfn())
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def relative_error(a, b, floor: float = 1e-5) -> np.ndarray:
    """|a - b| / max(|a|, |b|, floor), elementwise."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def max_relative_error(xs: Sequence[np.ndarray], ys: Sequence[np.ndarray], floor: float = 1e-5) -> float:
    errs = [relative_error(x, y, floor).max(initial=0.0) for x, y in zip(xs, ys)]
    return float(max(errs, default=0.0))
