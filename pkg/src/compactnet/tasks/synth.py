"""Stochastic one-dimensional problem on which Adam provably fails.

With probability p the sampled loss is ``C w^2 / 2``, otherwise ``-w``.  Rare
large gradients get damped by the second-moment estimate, so Adam follows the
frequent ``-1`` gradient to the boundary ``w = 1`` even though the expected
loss has its stationary point near ``w = 0.5``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import optim


@dataclass(frozen=True)
class SynthProblem:
    C: float = 999.0
    delta: float = 1.0

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if not 0 < self.p < 1:
            raise ValueError(f"branch probability {self.p} outside (0, 1)")
        if self.C <= (1 - self.p) / self.p:
            raise ValueError("C too small: stationary point would leave [0, 1]")

    @property
    def p(self) -> float:
        return (1 + self.delta) / (self.C + 1)

    @property
    def w_star(self) -> float:
        return (1 - self.p) / (self.C * self.p)

    def grad(self, w):
        """Gradient of the expected loss."""
        return self.p * self.C * np.asarray(w) - (1 - self.p)

    def loss(self, w):
        w = np.asarray(w)
        return self.p * self.C * w * w / 2 - (1 - self.p) * w


def synth_instant_grad(w: float, rng: np.random.Generator, problem: SynthProblem = SynthProblem()) -> float:
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"w = {w} outside the domain [0, 1]")
    return problem.C * w if rng.random() < problem.p else -1.0


@dataclass
class SynthTrajectory:
    steps: np.ndarray
    w: np.ndarray
    running_mean: np.ndarray  # mean of |grad f(w_s)|^2 over s <= t

    @property
    def final(self) -> float:
        return float(self.running_mean[-1])

    def records(self):
        for t, w, r in zip(self.steps, self.w, self.running_mean):
            yield {"step": int(t), "w": float(w), "grad_norm_sq_mean": float(r)}


def synth_run(problem: SynthProblem, cfg: optim.OptimConfig, T: int, seed: int,
              w1: float = 0.5, log_every: int = 1000) -> SynthTrajectory:
    """Run ``T`` projected steps from ``w1`` and track the running mean of |grad f|^2."""
    if T < 1:
        raise ValueError("T must be at least 1")
    rng = np.random.default_rng(seed)
    big = rng.random(T) < problem.p
    if cfg.horizon is None:
        cfg = optim.OptimConfig(**{**cfg.__dict__, "horizon": T})
    state = optim.OptimState.zeros([(1,)], amsgrad=cfg.method == "amsgrad")
    w = np.array([w1], dtype=np.float64)
    total = 0.0
    steps, ws, means = [], [], []
    for t in range(1, T + 1):
        x = float(w[0])
        total += float(problem.grad(x)) ** 2
        g = problem.C * x if big[t - 1] else -1.0
        (w,) = optim.step([w], [np.array([g])], state, cfg)
        w = np.clip(w, 0.0, 1.0)
        if t % log_every == 0 or t == T:
            steps.append(t)
            ws.append(float(w[0]))
            means.append(total / t)
    return SynthTrajectory(np.array(steps), np.array(ws), np.array(means))
