"""Adaptive and non-adaptive first-order optimizers.

All methods share one update template: a first moment ``m``, a second moment
``v`` and a parameter-wise rate ``eta = 1 / (sqrt(v) + eps)``.  They differ in
which ``v`` enters ``eta`` (current, running max, or previous step) and in how
``eta`` is scaled.  Bias correction is off unless requested.

Step functions operate on lists of numpy arrays and mutate ``state``; the
:class:`Optimizer` wrapper drives them for a list of :class:`Tensor` objects.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor

METHODS = ("sgd", "adam", "amsgrad", "delayed-adam", "avagrad", "avagradw", "adamw")
EPS_KINDS = ("constant", "sqrt-t", "sqrt-t-cubed", "power")
LR_KINDS = ("constant", "inv-sqrt", "step", "eps-scaled")


class ScheduleWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EpsSchedule:
    kind: str = "constant"
    eps0: float = 1e-8
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        if self.kind not in EPS_KINDS:
            raise ValueError(f"unknown eps schedule {self.kind!r}; choose from {EPS_KINDS}")
        if self.eps0 < 0:
            raise ValueError("eps0 must be nonnegative")
        if self.kind == "power":
            if self.p2 < 0:
                raise ValueError("power schedule needs p2 >= 0 so that eps_t is nondecreasing")
            if self.p1 + self.p2 < 0.5:
                warnings.warn(f"eps schedule with p1 + p2 = {self.p1 + self.p2} < 1/2 loses the O(1/sqrt(T)) guarantee",
                              ScheduleWarning, stacklevel=3)


def eps_at(schedule: EpsSchedule | float, t: int, T: int | None = None) -> float:
    """Value of the denominator offset at step ``t`` (1-based) of a ``T``-step run."""
    if not isinstance(schedule, EpsSchedule):
        return float(schedule)
    if t < 1:
        raise ValueError("steps are counted from t = 1")
    if schedule.kind == "constant":
        return schedule.eps0
    if schedule.kind == "sqrt-t":
        return schedule.eps0 * math.sqrt(t)
    if schedule.kind == "sqrt-t-cubed":
        return schedule.eps0 * t ** 1.5
    if T is None:
        raise ValueError("power schedule needs the horizon T")
    return schedule.eps0 * T ** schedule.p1 * t ** schedule.p2


@dataclass(frozen=True)
class LRSchedule:
    """Learning rate over time.

    ``eps-scaled`` gives alpha_t = base * eps_t / sqrt(T), pairing a growing
    ``eps`` schedule with a proportionally growing step size.
    """

    kind: str = "constant"
    base: float = 1e-3
    decay_every: int = 0
    factor: float = 0.1
    eps: EpsSchedule | None = None

    def __post_init__(self):
        if self.kind not in LR_KINDS:
            raise ValueError(f"unknown lr schedule {self.kind!r}; choose from {LR_KINDS}")
        if self.kind == "eps-scaled" and self.eps is None:
            raise ValueError("eps-scaled lr schedule needs an eps schedule")


def lr_at(schedule: LRSchedule | float, t: int, T: int | None = None) -> float:
    if not isinstance(schedule, LRSchedule):
        return float(schedule)
    if schedule.kind == "constant":
        return schedule.base
    if schedule.kind == "inv-sqrt":
        return schedule.base / math.sqrt(t)
    if schedule.kind == "step":
        if schedule.decay_every <= 0:
            return schedule.base
        return schedule.base * schedule.factor ** ((t - 1) // schedule.decay_every)
    if T is None:
        raise ValueError("eps-scaled lr schedule needs the horizon T")
    return schedule.base * eps_at(schedule.eps, t, T) / math.sqrt(T)


@dataclass
class OptimConfig:
    method: str = "adam"
    lr: LRSchedule | float = 1e-3
    beta1: float = 0.9
    beta1_schedule: str = "constant"  # or "inv-sqrt": beta1 / sqrt(t)
    beta2: float = 0.999
    eps: EpsSchedule | float = 1e-8
    weight_decay: float = 0.0
    bias_correction: bool = False
    momentum: float = 0.0
    normalization: str = "global"  # avagrad only: "global" or "layer"
    horizon: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown optimizer {self.method!r}; choose from {METHODS}")
        if not 0.0 <= self.beta1 < 1.0:
            raise ValueError("beta1 must lie in [0, 1)")
        if not 0.0 <= self.beta2 <= 1.0:
            raise ValueError("beta2 must lie in [0, 1]")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be nonnegative")
        if self.beta1_schedule not in ("constant", "inv-sqrt"):
            raise ValueError("beta1_schedule must be 'constant' or 'inv-sqrt'")
        if self.normalization not in ("global", "layer"):
            raise ValueError("normalization must be 'global' or 'layer'")
        if isinstance(self.eps, (int, float)) and self.eps < 0:
            raise ValueError(f"eps must be nonnegative, got {self.eps}")

    def alpha(self, t: int) -> float:
        return lr_at(self.lr, t, self.horizon)

    def epsilon(self, t: int) -> float:
        return eps_at(self.eps, t, self.horizon)

    def beta1_at(self, t: int) -> float:
        return self.beta1 / math.sqrt(t) if self.beta1_schedule == "inv-sqrt" else self.beta1


@dataclass
class OptimState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    vhat: list[np.ndarray] | None = None
    buf: list[np.ndarray] | None = None
    step: int = 0

    @classmethod
    def zeros(cls, shapes: Sequence[tuple[int, ...]], amsgrad: bool = False) -> "OptimState":
        z = lambda: [np.zeros(s) for s in shapes]
        return cls(m=z(), v=z(), vhat=z() if amsgrad else None, buf=z())


# shared pieces

def _check(grads: Sequence[np.ndarray], names: Sequence[str] | None) -> None:
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            label = names[i] if names is not None else f"#{i}"
            raise FloatingPointError(f"non-finite gradient for parameter {label}")


def _eps(cfg: OptimConfig, t: int, strict: bool) -> float:
    e = cfg.epsilon(t)
    if e < 0 or (strict and e == 0):
        raise ValueError(f"eps must be positive, got {e}")
    return e


def _advance(state: OptimState) -> int:
    state.step += 1
    return state.step


def _with_l2(params, grads, cfg: OptimConfig):
    if cfg.weight_decay == 0 or cfg.method in ("adamw", "avagradw"):
        return list(grads)
    return [g + cfg.weight_decay * w for w, g in zip(params, grads)]


def _moments(grads, state: OptimState, cfg: OptimConfig, t: int, update_v: bool = True) -> None:
    b1 = cfg.beta1_at(t)
    for i, g in enumerate(grads):
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        if update_v:
            state.v[i] = cfg.beta2 * state.v[i] + (1 - cfg.beta2) * g * g


def _corrected(state: OptimState, cfg: OptimConfig, t: int, i: int, v: np.ndarray, vt: int):
    m = state.m[i]
    if not cfg.bias_correction:
        return m, v
    m = m / (1 - cfg.beta1 ** t) if cfg.beta1 > 0 else m
    if vt >= 1 and cfg.beta2 < 1:
        v = v / (1 - cfg.beta2 ** vt)
    return m, v


# step functions

def step_sgd(params, grads, state: OptimState, cfg: OptimConfig, names=None) -> list[np.ndarray]:
    _check(grads, names)
    t = _advance(state)
    a = cfg.alpha(t)
    grads = _with_l2(params, grads, cfg)
    if state.buf is None:
        state.buf = [np.zeros_like(g) for g in grads]
    out = []
    for i, (w, g) in enumerate(zip(params, grads)):
        state.buf[i] = cfg.momentum * state.buf[i] + g
        out.append(w - a * state.buf[i])
    return out


def step_adam(params, grads, state: OptimState, cfg: OptimConfig, names=None) -> list[np.ndarray]:
    _check(grads, names)
    t = _advance(state)
    a, e = cfg.alpha(t), _eps(cfg, t, strict=False)
    grads = _with_l2(params, grads, cfg)
    _moments(grads, state, cfg, t)
    out = []
    for i, w in enumerate(params):
        m, v = _corrected(state, cfg, t, i, state.v[i], t)
        den = np.sqrt(v) + e
        if np.any(den == 0):
            raise ZeroDivisionError("zero denominator: eps = 0 with a zero second moment")
        out.append(w - a * m / den)
    return out


def step_amsgrad(params, grads, state: OptimState, cfg: OptimConfig, names=None) -> list[np.ndarray]:
    _check(grads, names)
    t = _advance(state)
    a, e = cfg.alpha(t), _eps(cfg, t, strict=False)
    grads = _with_l2(params, grads, cfg)
    _moments(grads, state, cfg, t)
    if state.vhat is None:
        state.vhat = [np.zeros_like(v) for v in state.v]
    out = []
    for i, w in enumerate(params):
        state.vhat[i] = np.maximum(state.vhat[i], state.v[i])
        m, v = _corrected(state, cfg, t, i, state.vhat[i], t)
        den = np.sqrt(v) + e
        if np.any(den == 0):
            raise ZeroDivisionError("zero denominator: eps = 0 with a zero second moment")
        out.append(w - a * m / den)
    return out


def _delayed_eta(state: OptimState, cfg: OptimConfig, t: int, e: float) -> list[np.ndarray]:
    etas = []
    for i in range(len(state.v)):
        _, v = _corrected(state, cfg, t, i, state.v[i], t - 1)
        etas.append(1.0 / (np.sqrt(v) + e))
    return etas


def step_delayed_adam(params, grads, state: OptimState, cfg: OptimConfig, names=None) -> list[np.ndarray]:
    _check(grads, names)
    t = _advance(state)
    a, e = cfg.alpha(t), _eps(cfg, t, strict=True)
    grads = _with_l2(params, grads, cfg)
    _moments(grads, state, cfg, t, update_v=False)
    etas = _delayed_eta(state, cfg, t, e)
    out = []
    for i, w in enumerate(params):
        m, _ = _corrected(state, cfg, t, i, state.v[i], t)
        out.append(w - a * etas[i] * m)
    for i, g in enumerate(grads):
        state.v[i] = cfg.beta2 * state.v[i] + (1 - cfg.beta2) * g * g
    return out


def step_avagrad(params, grads, state: OptimState, cfg: OptimConfig, names=None) -> list[np.ndarray]:
    _check(grads, names)
    t = _advance(state)
    a, e = cfg.alpha(t), _eps(cfg, t, strict=True)
    grads = _with_l2(params, grads, cfg)
    _moments(grads, state, cfg, t, update_v=False)
    etas = _delayed_eta(state, cfg, t, e)
    if cfg.normalization == "global":
        d = sum(x.size for x in etas)
        if d == 0:
            raise ValueError("AvaGrad needs at least one parameter")
        norm = math.sqrt(sum(float(np.sum(x * x)) for x in etas) / d)
        assert norm > 0
        scales = [norm] * len(etas)
    else:
        scales = [math.sqrt(float(np.sum(x * x)) / x.size) if x.size else 1.0 for x in etas]
    out = []
    for i, w in enumerate(params):
        m, _ = _corrected(state, cfg, t, i, state.v[i], t)
        out.append(w - a * (etas[i] / scales[i]) * m)
    for i, g in enumerate(grads):
        state.v[i] = cfg.beta2 * state.v[i] + (1 - cfg.beta2) * g * g
    return out


def step_decoupled_decay(params, alpha: float, weight_decay: float) -> list[np.ndarray]:
    if weight_decay < 0:
        raise ValueError("weight decay must be nonnegative")
    if weight_decay == 0:
        return list(params)
    return [w - alpha * weight_decay * w for w in params]


_STEPS = {
    "sgd": step_sgd,
    "adam": step_adam,
    "adamw": step_adam,
    "amsgrad": step_amsgrad,
    "delayed-adam": step_delayed_adam,
    "avagrad": step_avagrad,
    "avagradw": step_avagrad,
}


def step(params, grads, state: OptimState, cfg: OptimConfig, names=None) -> list[np.ndarray]:
    """Dispatch on ``cfg.method``; decoupled decay follows the adaptive step."""
    out = _STEPS[cfg.method](params, grads, state, cfg, names)
    if cfg.method in ("adamw", "avagradw"):
        out = step_decoupled_decay(out, cfg.alpha(state.step), cfg.weight_decay)
    return out


def project_box(params, lo: float, hi: float) -> list[np.ndarray]:
    return [np.clip(w, lo, hi) for w in params]


class Optimizer:
    """Stateful driver over a list of tensors.

    ``step(grads, frozen=...)`` leaves entries flagged in ``frozen`` untouched,
    including their moment estimates.
    """

    def __init__(self, params: Sequence[Tensor], cfg: OptimConfig, box: tuple[float, float] | None = None):
        self.params = list(params)
        self.cfg = cfg
        self.box = box
        self.names = [p.name or f"#{i}" for i, p in enumerate(self.params)]
        self.state = OptimState.zeros([p.shape for p in self.params], amsgrad=cfg.method == "amsgrad")

    def step(self, grads: Sequence[np.ndarray], frozen: Sequence[np.ndarray | None] | None = None) -> None:
        if len(grads) != len(self.params):
            raise ValueError(f"{len(grads)} gradients for {len(self.params)} parameters")
        old = [p.data for p in self.params]
        if frozen is not None:
            snapshot = (
                [x.copy() for x in self.state.m], [x.copy() for x in self.state.v],
                None if self.state.vhat is None else [x.copy() for x in self.state.vhat],
                None if self.state.buf is None else [x.copy() for x in self.state.buf])
        new = step(old, [np.asarray(g, dtype=np.float64) for g in grads], self.state, self.cfg, self.names)
        if self.box is not None:
            new = project_box(new, *self.box)
        if frozen is not None:
            for i, f in enumerate(frozen):
                if f is None or not np.any(f):
                    continue
                new[i] = np.where(f, old[i], new[i])
                for j, acc in enumerate(snapshot):
                    if acc is None:
                        continue
                    cur = (self.state.m, self.state.v, self.state.vhat, self.state.buf)[j]
                    cur[i] = np.where(f, acc[i], cur[i])
        for p, w in zip(self.params, new):
            p.data = w
