"""Hyperparameter search over a finite (alpha, eps) grid.

``gld`` is gradient-less descent: from the incumbent cell, try one random
point in a ball for each radius of a halving ladder, snap it to the grid, and
move to the best improvement.  ``cgld`` does the same along a single axis at a
time, alternating axes.  Every objective call goes through a cache, and
trials count distinct cells evaluated.

With ``workers > 1`` the fresh cells of one iteration are evaluated in a
thread pool.  Each trial only returns its value; the collector merges the
values in candidate order, so results match the serial run exactly.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

KINDS = ("grid", "random", "gld", "cgld")


@dataclass(frozen=True)
class TunerSpec:
    kind: str = "cgld"
    shape: tuple[int, int] = (21, 21)
    budget: int = 200  # the grid tuner ignores it and visits every cell
    target: float = 0.01  # relative suboptimality
    r_max: float | None = None  # defaults to the grid's larger side minus one
    r_min: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown tuner {self.kind!r}; choose from {KINDS}")
        if min(self.shape) < 1:
            raise ValueError("grid must be nonempty")

    def ladder(self) -> list[float]:
        r = float(max(self.shape) - 1) if self.r_max is None else float(self.r_max)
        out = []
        while r >= self.r_min:
            out.append(r)
            r /= 2
        return out or [self.r_min]


def log_grid(lo: float, hi: float, n: int = 21) -> np.ndarray:
    return np.logspace(math.log10(lo), math.log10(hi), n)


class CachedObjective:
    def __init__(self, fn: Callable[[int, int], float]):
        self.fn = fn
        self.cache: dict[tuple[int, int], float] = {}
        self.order: list[tuple[int, int]] = []
        self._ready: dict[tuple[int, int], float] = {}

    def __call__(self, cell: tuple[int, int]) -> float:
        cell = (int(cell[0]), int(cell[1]))
        if cell not in self.cache:
            val = self._ready.pop(cell) if cell in self._ready else float(self.fn(*cell))
            self.cache[cell] = val
            self.order.append(cell)
        return self.cache[cell]

    def prefetch(self, cells, limit: int, pool: ThreadPoolExecutor | None) -> None:
        """Evaluate up to ``limit`` fresh cells concurrently; they count as trials when consumed."""
        if pool is None:
            return
        fresh: list[tuple[int, int]] = []
        for c in cells:
            if c not in self.cache and c not in self._ready and c not in fresh:
                fresh.append(c)
        fresh = fresh[:max(limit, 0)]
        for c, v in zip(fresh, pool.map(lambda c: float(self.fn(*c)), fresh)):
            self._ready[c] = v

    @property
    def trials(self) -> int:
        return len(self.cache)


@dataclass
class TuneResult:
    best_cell: tuple[int, int]
    best_value: float
    trials: int
    trials_to_target: int | None
    exhausted: bool
    history: list[dict] = field(default_factory=list)


def _snap(x: np.ndarray, shape) -> tuple[int, int]:
    return (int(np.clip(np.rint(x[0]), 0, shape[0] - 1)), int(np.clip(np.rint(x[1]), 0, shape[1] - 1)))


def _ball(rng: np.random.Generator, r: float) -> np.ndarray:
    v = rng.normal(size=2)
    v /= np.linalg.norm(v)
    return v * r * math.sqrt(rng.random())  # uniform in the disc


def tune(spec: TunerSpec, objective: Callable[[int, int], float], seed: int,
         optimum: float | None = None, log=None, workers: int = 1) -> TuneResult:
    """Minimise ``objective(i, j)`` over the grid.

    ``optimum`` (the grid minimum, when known) enables trials-to-target:
    the first trial count at which the incumbent is within ``target`` of it,
    relative to ``|optimum|``.  ``objective`` must be safe to call from
    several threads when ``workers > 1``.
    """
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        return _tune(spec, objective, seed, optimum, log, pool)
    finally:
        if pool is not None:
            pool.shutdown()


def _tune(spec, objective, seed, optimum, log, pool) -> TuneResult:
    rng = np.random.default_rng(seed)
    f = CachedObjective(objective)
    shape = spec.shape
    best_cell, best = None, math.inf
    hit: int | None = None
    history: list[dict] = []

    def consider(cell) -> bool:
        nonlocal best_cell, best, hit
        if f.trials >= spec.budget and cell not in f.cache and spec.kind != "grid":
            return False
        fresh = cell not in f.cache
        val = f(cell)
        improved = val < best
        if improved:
            best_cell, best = cell, val
        if fresh:
            rec = {"step": f.trials, "i": cell[0], "j": cell[1], "value": val, "best": best}
            history.append(rec)
            if log is not None:
                log(rec)
            if hit is None and optimum is not None and best - optimum <= spec.target * abs(optimum):
                hit = f.trials
        return improved

    if spec.kind == "grid":
        cells = [(i, j) for i in range(shape[0]) for j in range(shape[1])]
        f.prefetch(cells, len(cells), pool)
        for c in cells:
            consider(c)
    elif spec.kind == "random":
        cells = [(i, j) for i in range(shape[0]) for j in range(shape[1])]
        order = rng.permutation(len(cells))
        f.prefetch([cells[k] for k in order], spec.budget, pool)
        for k in order:
            if f.trials >= spec.budget:
                break
            consider(cells[k])
    else:
        consider((int(rng.integers(shape[0])), int(rng.integers(shape[1]))))
        ladder = spec.ladder()
        axis = 0
        stall = 0
        while f.trials < spec.budget and f.trials < shape[0] * shape[1]:
            before = f.trials
            x = np.array(best_cell, dtype=np.float64)
            candidates = []
            for r in ladder:
                if spec.kind == "gld":
                    step = _ball(rng, r)
                else:
                    step = np.zeros(2)
                    step[axis] = rng.uniform(-r, r)
                candidates.append(_snap(x + step, shape))
            axis = 1 - axis
            f.prefetch(candidates, spec.budget - f.trials, pool)
            for c in candidates:
                consider(c)
            stall = stall + 1 if f.trials == before else 0
            if stall > 100:  # nothing new to try near the incumbent
                break
    exhausted = f.trials >= spec.budget and spec.kind != "grid"
    return TuneResult(best_cell, best, f.trials, hit, exhausted, history)


def separable_objective(seed: int, shape=(21, 21), scale: float = 0.02):
    """f(i, j) = 1 + scale * ((i - i0)^2 + (j - j0)^2 / 4) with a random optimum.

    Returns the objective and its minimum value (1).
    """
    rng = np.random.default_rng([seed, 0x5EB])  # independent of a tuner seeded with ``seed``
    i0, j0 = int(rng.integers(shape[0])), int(rng.integers(shape[1]))

    def fn(i: int, j: int) -> float:
        return 1.0 + scale * ((i - i0) ** 2 + (j - j0) ** 2 / 4.0)

    return fn, 1.0
