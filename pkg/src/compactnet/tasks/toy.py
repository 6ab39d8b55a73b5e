"""Small synthetic datasets for quick training runs."""

from __future__ import annotations

import numpy as np


def toy_dataset(kind: str, n: int, d: int, seed: int = 0, *, classes: int = 2,
                separation: float = 3.0, noise: float = 0.0, w_true: np.ndarray | None = None):
    """Return ``(inputs, targets)``.

    ``regression``: x ~ N(0, I), y = x @ w_true + noise, with targets of shape (n, 1).
    ``blobs``: unit-variance Gaussian clusters whose centres sit on random
    orthonormal directions, pairwise ``separation`` apart; integer targets.
    """
    if n <= 0:
        raise ValueError("empty dataset: n must be positive")
    if d <= 0:
        raise ValueError("d must be positive")
    rng = np.random.default_rng(seed)
    if kind == "regression":
        w = rng.normal(size=d) if w_true is None else np.asarray(w_true, dtype=np.float64)
        x = rng.normal(size=(n, d))
        y = x @ w + noise * rng.normal(size=n)
        return x, y.reshape(n, 1)
    if kind == "blobs":
        if classes > d:
            raise ValueError("blobs needs classes <= d")
        q, _ = np.linalg.qr(rng.normal(size=(d, classes)))
        centres = q.T * separation / np.sqrt(2.0)
        y = rng.integers(classes, size=n)
        x = centres[y] + rng.normal(size=(n, d))
        return x, y
    raise ValueError(f"unknown dataset kind {kind!r}")


def train_test_split(x, y, frac: float = 0.8, seed: int = 0):
    idx = np.random.default_rng(seed).permutation(len(x))
    k = int(round(frac * len(x)))
    return x[idx[:k]], y[idx[:k]], x[idx[k:]], y[idx[k:]]
