"""Sparsification by continuous relaxation of binary masks, and baselines.

Continuous sparsification (CS) learns a real mask parameter ``s`` per weight
and multiplies weights by a gate ``g(beta * s)``.  The temperature ``beta``
grows exponentially from 1 to ``beta_final`` over each round, turning the gate
into a step function; the final mask is ``s >= 0``.

Baselines: iterative magnitude pruning (IMP, optionally without rewinding),
iterative stochastic sparsification (ISS, Bernoulli masks trained with a
straight-through estimator), sequential CS that removes a fixed fraction per
round, and supermask search over frozen weights.

Only weight matrices are masked; biases stay dense.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import DenseNet
from .optim import OptimConfig, Optimizer


def _algebraic(beta: float, s: Tensor, k: float = 2.0) -> Tensor:
    # 1/2 (1 + s / (1/beta + |s|^k)^(1/k))
    den = ad.power(ad.power(ad.tabs(s), k) + 1.0 / beta, 1.0 / k)
    return (s / den + 1.0) * 0.5


GATES: dict[str, Callable[[float, Tensor], Tensor]] = {
    "sigmoid": lambda beta, s: ad.sigmoid(s * beta),
    "erf": lambda beta, s: (ad.erf(s * beta) + 1.0) * 0.5,
    # scaled by 2/pi so that the gate stays inside [0, 1]
    "arctan": lambda beta, s: (ad.arctan(s * beta) * (2.0 / math.pi) + 1.0) * 0.5,
    "algebraic": lambda beta, s: _algebraic(beta, s),
}


def gate(name: str, beta: float, s) -> Tensor:
    if name not in GATES:
        raise ValueError(f"unknown gate {name!r}; choose from {sorted(GATES)}")
    return GATES[name](beta, ad.as_tensor(s))


def heaviside(s) -> np.ndarray:
    return np.asarray(s) >= 0


def beta_at(beta_final: float, t: int, T: int) -> float:
    """Temperature after ``t`` of ``T`` steps: ``beta_final ** (t / T)``."""
    return beta_final ** (t / T)


@dataclass
class MaskState:
    s: list[Tensor]
    beta: float = 1.0
    beta_final: float = 200.0
    lam: float = 1e-4
    s_init: float = 0.0
    rounds: int = 1
    steps: int = 100
    rewind_step: int = 0
    gate: str = "sigmoid"
    frozen: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.beta_final <= 1:
            raise ValueError("beta_final must exceed 1")
        if self.steps < 1:
            raise ValueError("need at least one step per round")
        if self.rounds < 1:
            raise ValueError("need at least one round")
        if not 0 <= self.rewind_step <= self.steps:
            raise ValueError("rewind step must lie in [0, steps]")
        if not self.frozen:
            self.frozen = [np.zeros(t.shape, dtype=bool) for t in self.s]

    @classmethod
    def for_net(cls, net: DenseNet, **kw) -> "MaskState":
        s_init = kw.get("s_init", 0.0)
        s = [Tensor(np.full(w.shape, s_init), requires_grad=True, name=f"s{i}") for i, w in enumerate(net.weights())]
        return cls(s=s, **kw)

    def soft_masks(self, beta: float | None = None) -> list[np.ndarray]:
        b = self.beta if beta is None else beta
        return [gate(self.gate, b, si.data).data for si in self.s]

    def hard_masks(self) -> list[np.ndarray]:
        return [heaviside(si.data) & ~f for si, f in zip(self.s, self.frozen)]


@dataclass
class SparseResult:
    mask: list[np.ndarray]
    rewound: np.ndarray | None = None  # flat parameter snapshot (net.get_flat layout)
    final_loss: float = float("nan")
    history: list[dict] = field(default_factory=list)
    soft_fraction: float | None = None  # share of gate values in (0.01, 0.99) at the end

    @property
    def d(self) -> int:
        return int(sum(m.size for m in self.mask))

    @property
    def sparsity(self) -> float:
        return 1.0 - sum(int(m.sum()) for m in self.mask) / self.d if self.d else 0.0


def masked_weights(net: DenseNet, masks: Sequence[np.ndarray]) -> list[np.ndarray]:
    return [m * w.data for m, w in zip(masks, net.weights())]


def masked_loss(net: DenseNet, masks: Sequence[np.ndarray], x, y) -> float:
    return float(net.loss(x, y, weights=masked_weights(net, masks)).data)


def cs_loss(net: DenseNet, s: Sequence[Tensor], beta: float, lam: float, x, y,
            gate_name: str = "sigmoid", theta: Sequence[Tensor] | None = None,
            frozen: Sequence[np.ndarray] | None = None) -> Tensor:
    """Task loss at the gated weights plus ``lam`` times the L1 norm of the gates."""
    theta = net.weights() if theta is None else theta
    masks = [gate(gate_name, beta, si) for si in s]
    if frozen is not None:
        masks = [m * Tensor((~f).astype(np.float64)) if np.any(f) else m for m, f in zip(masks, frozen)]
    loss = net.loss(x, y, weights=[m * w for m, w in zip(masks, theta)])
    if lam:
        reg = ad.tsum(ad.stack([ad.tsum(m) for m in masks]))
        loss = loss + reg * lam
    return loss


def cs_value_and_grad(net, s, beta, lam, x, y, gate_name="sigmoid", frozen=None):
    params = net.parameters()
    with ad.Tape() as tape:
        loss = cs_loss(net, s, beta, lam, x, y, gate_name, frozen=frozen)
    g = ad.backward(tape, output=loss)
    zeros = lambda t: np.zeros(t.shape)
    return float(loss.data), [g.get(p, zeros(p)) for p in params], [g.get(si, zeros(si)) for si in s]


class _Batches:
    def __init__(self, x, y, batch: int | None, seed: int):
        self.x, self.y, self.batch = x, y, batch
        self.rng = np.random.default_rng(seed)

    def next(self):
        if self.batch is None or self.batch >= len(self.x):
            return self.x, self.y
        idx = self.rng.choice(len(self.x), size=self.batch, replace=False)
        return self.x[idx], self.y[idx]


def _s_config(opt_cfg: OptimConfig, s_cfg: OptimConfig | None) -> OptimConfig:
    # mask parameters never get weight decay
    base = opt_cfg if s_cfg is None else s_cfg
    return OptimConfig(**{**base.__dict__, "weight_decay": 0.0})


def cs_ticket_search(net: DenseNet, x, y, state: MaskState, opt_cfg: OptimConfig,
                     s_opt_cfg: OptimConfig | None = None, batch: int | None = None,
                     seed: int = 0, train_weights: bool = True, log=None) -> SparseResult:
    """Rounds of CS; the gate temperature restarts at 1 each round.

    Between rounds ``s <- min(beta * s, s_init)`` and entries already pruned
    are frozen.  Weights are never rewound; the snapshot taken at step
    ``rewind_step`` of round 1 is returned for retraining.
    """
    params = net.parameters()
    wopt = Optimizer(params, opt_cfg) if train_weights else None
    sopt = Optimizer(state.s, _s_config(opt_cfg, s_opt_cfg))
    batches = _Batches(x, y, batch, seed)
    rewound = net.get_flat().copy() if state.rewind_step == 0 else None
    history = []
    loss = float("nan")
    T = state.steps
    for r in range(1, state.rounds + 1):
        if r > 1:
            for si, f in zip(state.s, state.frozen):
                f |= si.data < 0
                si.data = np.minimum(state.beta * si.data, state.s_init)
            state.beta = 1.0
        for t in range(1, T + 1):
            xb, yb = batches.next()
            loss, gw, gs = cs_value_and_grad(net, state.s, state.beta, state.lam, xb, yb, state.gate, state.frozen)
            if wopt is not None:
                wopt.step(gw)
            sopt.step(gs, frozen=state.frozen)
            if r == 1 and t == state.rewind_step:
                rewound = net.get_flat().copy()
            state.beta = beta_at(state.beta_final, t, T)
        masks = state.hard_masks()
        rec = {"round": r, "step": r * T, "loss": loss, "beta": state.beta,
               "sparsity": 1.0 - sum(int(m.sum()) for m in masks) / sum(m.size for m in masks)}
        history.append(rec)
        if log is not None:
            log(rec)
    soft = np.concatenate([m.ravel() for m in state.soft_masks(state.beta_final)])
    frozen_all = np.concatenate([f.ravel() for f in state.frozen])
    soft = soft[~frozen_all]
    soft_fraction = float(np.mean((soft > 0.01) & (soft < 0.99))) if soft.size else 0.0
    return SparseResult(state.hard_masks(), rewound, loss, history, soft_fraction)


def cs_prune(net: DenseNet, x, y, state: MaskState, opt_cfg: OptimConfig,
             s_opt_cfg: OptimConfig | None = None, finetune_steps: int = 0,
             batch: int | None = None, seed: int = 0, log=None) -> SparseResult:
    """Single-round CS, with optional fine-tuning of the surviving weights."""
    if state.rounds != 1:
        state = MaskState(**{**state.__dict__, "rounds": 1})
    res = cs_ticket_search(net, x, y, state, opt_cfg, s_opt_cfg, batch, seed, log=log)
    res.rewound = None
    if finetune_steps:
        train_masked(net, x, y, res.mask, opt_cfg, finetune_steps, batch, seed + 1)
        res.final_loss = masked_loss(net, res.mask, x, y)
    return res


def train_masked(net: DenseNet, x, y, masks: Sequence[np.ndarray] | None, opt_cfg: OptimConfig,
                 steps: int, batch: int | None = None, seed: int = 0,
                 frozen_weights: bool = False) -> list[float]:
    """Plain training of ``m * theta``; pruned weights receive no updates."""
    params = net.parameters()
    opt = Optimizer(params, opt_cfg)
    W = net.weights()
    frozen = None
    if masks is not None:
        lookup = {id(w): ~np.asarray(m, dtype=bool) for w, m in zip(W, masks)}
        frozen = [lookup.get(id(p)) for p in params]
    batches = _Batches(x, y, batch, seed)
    losses = []
    for _ in range(steps):
        xb, yb = batches.next()
        with ad.Tape() as tape:
            weights = None if masks is None else [w * Tensor(np.asarray(m, dtype=np.float64)) for w, m in zip(W, masks)]
            loss = net.loss(xb, yb, weights=weights)
        g = ad.backward(tape, output=loss)
        losses.append(float(loss.data))
        opt.step([g.get(p, np.zeros(p.shape)) for p in params], frozen=frozen)
    return losses


def prune_count(surviving: int, tau: float) -> int:
    """floor(tau * surviving), at least 1 while more than one weight survives."""
    if surviving <= 1:
        return 0
    return max(1, int(math.floor(tau * surviving)))


def prune_smallest(scores: Sequence[np.ndarray], masks: Sequence[np.ndarray], tau: float) -> list[np.ndarray]:
    """Zero the ``tau`` fraction of surviving entries with the lowest score (global, stable by index)."""
    flat_s = np.concatenate([np.asarray(s, dtype=np.float64).ravel() for s in scores])
    flat_m = np.concatenate([np.asarray(m, dtype=bool).ravel() for m in masks])
    alive = np.flatnonzero(flat_m)
    n = prune_count(alive.size, tau)
    order = alive[np.argsort(flat_s[alive], kind="stable")]
    flat_m = flat_m.copy()
    flat_m[order[:n]] = False
    if not flat_m.any():
        raise RuntimeError("pruning removed every weight")
    out, i = [], 0
    for m in masks:
        out.append(flat_m[i:i + m.size].reshape(m.shape))
        i += m.size
    return out


def imp(net: DenseNet, x, y, tau: float, rounds: int, steps: int, rewind_step: int,
        opt_cfg: OptimConfig, continued: bool = False, batch: int | None = None,
        seed: int = 0, log=None) -> SparseResult:
    """Iterative magnitude pruning; ``continued=True`` skips rewinding between rounds."""
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    if not 0 <= rewind_step <= steps:
        raise ValueError("rewind step must lie in [0, steps]")
    masks = [np.ones(w.shape, dtype=bool) for w in net.weights()]
    rewound = net.get_flat().copy() if rewind_step == 0 else None
    history = []
    loss = float("nan")
    for r in range(1, rounds + 1):
        if r > 1 and not continued:
            net.set_flat(rewound)
        if r == 1 and rewind_step > 0:
            train_masked(net, x, y, masks, opt_cfg, rewind_step, batch, seed)
            rewound = net.get_flat().copy()
            losses = train_masked(net, x, y, masks, opt_cfg, steps - rewind_step, batch, seed + 7919)
        else:
            losses = train_masked(net, x, y, masks, opt_cfg, steps, batch, seed + r)
        loss = losses[-1] if losses else masked_loss(net, masks, x, y)
        masks = prune_smallest([np.abs(w.data) for w in net.weights()], masks, tau)
        rec = {"round": r, "step": r * steps, "loss": loss,
               "sparsity": 1.0 - sum(int(m.sum()) for m in masks) / sum(m.size for m in masks)}
        history.append(rec)
        if log is not None:
            log(rec)
    return SparseResult(masks, rewound, loss, history)


def iss(net: DenseNet, x, y, state: MaskState, opt_cfg: OptimConfig,
        s_opt_cfg: OptimConfig | None = None, batch: int | None = None, seed: int = 0,
        train_weights: bool = True, log=None) -> SparseResult:
    """Bernoulli(sigmoid(s)) masks with straight-through gradients.

    From round 2 on, entries with ``s < s_init`` are switched off for good
    (``state.frozen`` is the sentinel for ``s = -inf``).
    """
    rng = np.random.default_rng(seed)
    params = net.parameters()
    wopt = Optimizer(params, opt_cfg) if train_weights else None
    sopt = Optimizer(state.s, _s_config(opt_cfg, s_opt_cfg))
    batches = _Batches(x, y, batch, seed + 1)
    W = net.weights()
    rewound = net.get_flat().copy() if state.rewind_step == 0 else None
    history, loss = [], float("nan")
    for r in range(1, state.rounds + 1):
        if r > 1:
            for si, f in zip(state.s, state.frozen):
                f |= si.data < state.s_init
        for t in range(1, state.steps + 1):
            xb, yb = batches.next()
            with ad.Tape() as tape:
                probs = [ad.sigmoid(si) for si in state.s]
                samples = [sample_mask(p.data, f, rng) for p, f in zip(probs, state.frozen)]
                m = [ad.straight_through(p, b) for p, b in zip(probs, samples)]
                out = net.loss(xb, yb, weights=[mi * wi for mi, wi in zip(m, W)])
                if state.lam:
                    out = out + ad.tsum(ad.stack([ad.tsum(p) for p in probs])) * state.lam
            g = ad.backward(tape, output=out)
            loss = float(out.data)
            if wopt is not None:
                wopt.step([g.get(p, np.zeros(p.shape)) for p in params])
            sopt.step([g.get(si, np.zeros(si.shape)) for si in state.s], frozen=state.frozen)
            if r == 1 and t == state.rewind_step:
                rewound = net.get_flat().copy()
        masks = state.hard_masks()
        rec = {"round": r, "step": r * state.steps, "loss": loss,
               "sparsity": 1.0 - sum(int(m.sum()) for m in masks) / sum(m.size for m in masks)}
        history.append(rec)
        if log is not None:
            log(rec)
    return SparseResult(state.hard_masks(), rewound, loss, history)


def sample_mask(probs: np.ndarray, dead: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    m = (rng.random(probs.shape) < probs).astype(np.float64)
    m[dead] = 0.0
    return m


def sequential_cs(net: DenseNet, x, y, tau: float, rounds: int, state: MaskState,
                  opt_cfg: OptimConfig, s_opt_cfg: OptimConfig | None = None,
                  batch: int | None = None, seed: int = 0, log=None) -> SparseResult:
    """Each round: reset surviving ``s`` to ``s_init``, run CS, drop the ``tau`` fraction with lowest ``s``."""
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    masks = [np.ones(si.shape, dtype=bool) for si in state.s]
    history, loss = [], float("nan")
    for r in range(1, rounds + 1):
        for si, m in zip(state.s, masks):
            si.data = np.where(m, state.s_init, si.data)
        state.beta = 1.0
        state.frozen = [~m for m in masks]
        sub = MaskState(**{**state.__dict__, "rounds": 1})
        res = cs_ticket_search(net, x, y, sub, opt_cfg, s_opt_cfg, batch, seed + r)
        loss = res.final_loss
        masks = prune_smallest([si.data for si in state.s], masks, tau)
        rec = {"round": r, "step": r * state.steps, "loss": loss,
               "sparsity": 1.0 - sum(int(m.sum()) for m in masks) / sum(m.size for m in masks)}
        history.append(rec)
        if log is not None:
            log(rec)
    return SparseResult(masks, None, loss, history)


def supermask_search(net: DenseNet, x, y, state: MaskState, method: str = "cs",
                     s_opt_cfg: OptimConfig | None = None, batch: int | None = None,
                     seed: int = 0, log=None) -> SparseResult:
    """Learn only a mask over the current (frozen) weights."""
    init = net.get_flat().copy()
    s_cfg = s_opt_cfg or OptimConfig("adam", lr=0.1)
    if method == "cs":
        res = cs_ticket_search(net, x, y, state, s_cfg, s_cfg, batch, seed, train_weights=False, log=log)
    elif method == "ss":
        single = MaskState(**{**state.__dict__, "rounds": 1})
        res = iss(net, x, y, single, s_cfg, s_cfg, batch, seed, train_weights=False, log=log)
    else:
        raise ValueError("method must be 'cs' or 'ss'")
    assert np.array_equal(net.get_flat(), init)
    res.rewound = init
    res.final_loss = masked_loss(net, res.mask, x, y)
    return res


# exhaustive reference for tiny problems

def l0_objective(loss_of_mask: Callable[[np.ndarray], float], mask: np.ndarray, lam: float) -> float:
    return float(loss_of_mask(mask)) + lam * int(np.sum(mask))


def brute_force_l0(loss_of_mask: Callable[[np.ndarray], float], d: int, lam: float) -> tuple[np.ndarray, float]:
    """Minimise ``loss(m) + lam * |m|_0`` over all 2^d binary masks."""
    if d > 20:
        raise ValueError("exhaustive search limited to d <= 20")
    best_m, best = None, math.inf
    for bits in itertools.product((0, 1), repeat=d):
        m = np.array(bits, dtype=bool)
        val = l0_objective(loss_of_mask, m, lam)
        if val < best:
            best_m, best = m, val
    return best_m, best


def least_squares_loss(x: np.ndarray, y: np.ndarray) -> Callable[[np.ndarray], float]:
    """Mean squared error of the best linear fit restricted to a feature mask."""
    y = np.asarray(y, dtype=np.float64).reshape(len(x), -1)

    def f(mask: np.ndarray) -> float:
        cols = np.flatnonzero(mask)
        if cols.size == 0:
            return float(np.mean(y ** 2))
        w, *_ = np.linalg.lstsq(x[:, cols], y, rcond=None)
        return float(np.mean((x[:, cols] @ w - y) ** 2))

    return f
