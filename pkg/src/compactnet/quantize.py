"""Learned mixed-precision quantization on a signed fixed-point grid.

A p-bit weight is a sum of signed bits, ``sum_j b_j 2^(1-j)`` with
``b_j in {-1, +1}``, so its value set is the odd multiples of ``2^(1-p)``
inside ``(-2, 2)``.  Precisions are learned by injecting uniform noise of
magnitude ``sigma(s)`` per group: large noise tolerance means few bits.
After training, ``p = 1 + round(log2(1 + exp(-s)))``, and weights whose
rounding error exceeds their magnitude are set to zero (``p = 0``).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import DenseNet
from .optim import OptimConfig, Optimizer

ORACLE_CAP = 16
GROUPINGS = ("per-parameter", "per-layer", "per-network")
_LN2 = math.log(2.0)


# value sets and the rounding map

def representable_values(p: int) -> np.ndarray:
    """Sorted values reachable with ``p`` signed bits."""
    if p < 0:
        raise ValueError("precision must be nonnegative")
    if p > ORACLE_CAP:
        raise ValueError(f"p = {p} exceeds the enumeration cap of {ORACLE_CAP} bits")
    if p == 0:
        return np.zeros(1)
    k = np.arange(-(2 ** p - 1), 2 ** p, 2, dtype=np.float64)
    return k * 2.0 ** (1 - p)


def enumerate_bit_values(p: int) -> np.ndarray:
    """Brute force: evaluate every bitstring of length ``p`` (oracle)."""
    if p > ORACLE_CAP:
        raise ValueError(f"p = {p} exceeds the enumeration cap of {ORACLE_CAP} bits")
    if p == 0:
        return np.zeros(1)
    weights = 2.0 ** (1 - np.arange(1, p + 1))
    vals = {float(np.dot(bits, weights)) for bits in itertools.product((-1.0, 1.0), repeat=p)}
    return np.array(sorted(vals))


def quantize_oracle(w: float, p: int) -> float:
    """Nearest enumerated value; ties go to the smaller magnitude, then to +."""
    vals = enumerate_bit_values(p)
    return float(min(vals, key=lambda v: (abs(v - w), abs(v), -v)))


def quantize_q(w, p):
    """Nearest p-bit value to ``w``, elementwise; ``p = 0`` maps to 0.

    Exact midpoints round toward the smaller magnitude; at ``w = 0`` the
    result is ``+2^(1-p)``.
    """
    w = np.asarray(w, dtype=np.float64)
    p = np.asarray(p)
    if np.any(p < 0):
        raise ValueError("precision must be nonnegative")
    w, p = np.broadcast_arrays(w, p)
    pp = np.maximum(p, 1).astype(np.float64)
    step = 2.0 ** (1 - pp)
    k = w / step  # exact for power-of-two steps
    lo = 2.0 * np.floor((k - 1.0) / 2.0) + 1.0  # largest odd <= k
    hi = lo + 2.0
    dlo, dhi = k - lo, hi - k
    pick_hi = (dhi < dlo) | ((dhi == dlo) & ((np.abs(hi) < np.abs(lo)) | (k == 0)))
    kk = np.where(pick_hi, hi, lo)
    kmax = 2.0 ** pp - 1.0
    kk = np.clip(kk, -kmax, kmax)
    out = kk * step
    out = np.where(p == 0, 0.0, out)
    return out if out.ndim else float(out)


def v_inverse(w: float, cap: int = ORACLE_CAP) -> tuple[tuple[int, ...], int]:
    """Shortest signed bitstring whose value is ``w``."""
    for p in range(1, cap + 1):
        if quantize_q(w, p) == w:
            bits, r = [], float(w)
            for j in range(1, p + 1):
                b = 1 if r > 0 else -1
                bits.append(b)
                r -= b * 2.0 ** (1 - j)
            assert r == 0.0
            return tuple(bits), p
    raise ValueError(f"{w!r} is not representable with at most {cap} bits")


def bits_value(bits: Sequence[int]) -> float:
    return float(sum(b * 2.0 ** (-j) for j, b in enumerate(bits)))


# s <-> p

def s_init(p_init: int) -> float:
    """Noise parameter with sigma(s) = 2^(1 - p_init)."""
    if p_init < 1:
        raise ValueError("p_init must be at least 1")
    a = 2.0 ** (p_init - 1) - 1.0
    return math.inf if a == 0 else -math.log(a)


def continuous_bits(s) -> np.ndarray:
    """log2(1 + exp(-s)), finite for every real s, 0 at s = +inf."""
    return np.logaddexp(0.0, -np.asarray(s, dtype=np.float64)) / _LN2


def finalize_precisions_array(s, rounding: str = "round") -> np.ndarray:
    c = continuous_bits(s)
    if rounding == "round":
        return (1 + np.round(c)).astype(np.int64)
    if rounding == "floor":
        return (1 + np.floor(c + 1e-9)).astype(np.int64)
    raise ValueError("rounding must be 'round' or 'floor'")


# state containers

@dataclass
class PrecisionState:
    """Per-group noise parameters plus the map from weights to groups."""

    s: Tensor
    index: list[np.ndarray]  # per layer, group id of each weight entry
    grouping: str = "per-parameter"

    @classmethod
    def create(cls, shapes: Sequence[tuple[int, ...]], grouping: str = "per-parameter",
               p_init: int = 8) -> "PrecisionState":
        if grouping not in GROUPINGS:
            raise ValueError(f"unknown grouping {grouping!r}; choose from {GROUPINGS}")
        index, start = [], 0
        for li, shp in enumerate(shapes):
            size = int(np.prod(shp))
            if grouping == "per-parameter":
                index.append(np.arange(start, start + size).reshape(shp))
                start += size
            elif grouping == "per-layer":
                index.append(np.full(shp, li))
            else:
                index.append(np.zeros(shp, dtype=np.int64))
        n = {"per-parameter": start, "per-layer": len(shapes), "per-network": 1}[grouping]
        s = Tensor(np.full(n, s_init(p_init)), requires_grad=True, name="s")
        return cls(s, index, grouping)

    @property
    def n_groups(self) -> int:
        return self.s.size

    def group_sizes(self) -> np.ndarray:
        counts = np.zeros(self.n_groups)
        for idx in self.index:
            np.add.at(counts, idx.ravel(), 1.0)
        return counts

    def expand(self, values) -> list:
        """Broadcast a per-group array (or Tensor) to each layer's shape."""
        if isinstance(values, Tensor):
            return [ad.take(values, idx) for idx in self.index]
        values = np.asarray(values)
        return [values[idx] for idx in self.index]

    def sigma(self) -> list[np.ndarray]:
        return self.expand(ad.stable_sigmoid(self.s.data))


@dataclass
class PrecisionMap:
    p: list[np.ndarray]

    @property
    def total_bits(self) -> int:
        return int(sum(int(x.sum()) for x in self.p))

    @property
    def d(self) -> int:
        return int(sum(x.size for x in self.p))

    @property
    def bpp(self) -> float:
        return self.total_bits / self.d if self.d else 0.0

    @property
    def compression_ratio(self) -> float:
        return 32.0 / self.bpp if self.bpp > 0 else math.inf

    def flat(self) -> np.ndarray:
        return np.concatenate([x.ravel() for x in self.p]) if self.p else np.zeros(0, dtype=np.int64)


def finalize_precisions(state: PrecisionState | np.ndarray, rounding: str = "round") -> PrecisionMap:
    if isinstance(state, PrecisionState):
        return PrecisionMap(state.expand(finalize_precisions_array(state.s.data, rounding)))
    return PrecisionMap([finalize_precisions_array(state, rounding)])


def zero_precision_allocate(w: Sequence[np.ndarray], pmap: PrecisionMap,
                            grouping: str = "per-parameter") -> PrecisionMap:
    """Set p = 0 wherever rounding to zero beats rounding to the p-bit grid."""
    if grouping != "per-parameter":
        raise ValueError("zero-precision allocation needs per-parameter precisions")
    out = []
    for wi, pi in zip(w, pmap.p):
        wi = np.asarray(wi, dtype=np.float64)
        err = np.abs(wi - quantize_q(wi, pi))
        out.append(np.where(np.abs(wi) < err, 0, pi).astype(np.int64))
    return PrecisionMap(out)


def quantization_error(w, p) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    return np.abs(w - quantize_q(w, p))


# training pieces

def clip_weights(w: np.ndarray, sigma_s) -> np.ndarray:
    bound = 2.0 - np.asarray(sigma_s)
    return np.clip(w, -bound, bound)


def precision_regularizer(state: PrecisionState) -> Tensor:
    """Sum over weights of log2(1 + exp(-s)) for the weight's group."""
    sizes = Tensor(state.group_sizes())
    return ad.tsum(ad.softplus(-state.s) * sizes) * (1.0 / _LN2)


def sample_noise(state: PrecisionState, rng: np.random.Generator, K: int = 1) -> list[list[np.ndarray]]:
    return [[rng.uniform(-1.0, 1.0, size=idx.shape) for idx in state.index] for _ in range(K)]


def smol_loss(net: DenseNet, w: Sequence[Tensor], state: PrecisionState, lam: float, x, y,
              rng: np.random.Generator | None = None, K: int = 1,
              noise: list[list[np.ndarray]] | None = None) -> Tensor:
    """Noisy-weight loss averaged over K uniform draws plus the bit penalty.

    Pass ``noise`` to freeze the draws (for gradient checks).
    """
    if noise is None:
        if rng is None:
            raise ValueError("need an rng or explicit noise")
        noise = sample_noise(state, rng, K)
    sig = state.expand(ad.sigmoid(state.s))
    total = None
    for eps in noise:
        pert = [wi + si * Tensor(e) for wi, si, e in zip(w, sig, eps)]
        li = net.loss(x, y, weights=pert)
        total = li if total is None else total + li
    return total * (1.0 / len(noise)) + precision_regularizer(state) * lam


def ste_forward_weights(w: Sequence[Tensor], pmap: PrecisionMap) -> list[Tensor]:
    return [ad.straight_through(wi, quantize_q(wi.data, pi)) for wi, pi in zip(w, pmap.p)]


def ste_finetune(net: DenseNet, pmap: PrecisionMap, x, y, cfg: OptimConfig, steps: int,
                 batch: int | None = None, seed: int = 0) -> list[float]:
    """Train ``net`` through Q(w, p) with straight-through gradients.

    Weights with p = 0 are frozen. Returns the loss at the quantized weights
    before each step and once more at the end.
    """
    w = net.weights()
    params = net.parameters()
    opt = Optimizer(params, cfg)
    frozen = {id(wi): (pi == 0) for wi, pi in zip(w, pmap.p)}
    rng = np.random.default_rng(seed)
    losses = []
    for _ in range(steps):
        xb, yb = _batch(x, y, batch, rng)
        with ad.Tape() as tape:
            loss = net.loss(xb, yb, weights=ste_forward_weights(w, pmap))
        grads = ad.backward(tape, output=loss)
        losses.append(float(loss.data))
        opt.step([grads.get(p, np.zeros(p.shape)) for p in params],
                 frozen=[frozen.get(id(p)) for p in params])
    losses.append(quantized_loss(net, pmap, x, y))
    return losses


def quantized_loss(net: DenseNet, pmap: PrecisionMap, x, y) -> float:
    return float(net.loss(x, y, weights=[quantize_q(wi.data, pi) for wi, pi in zip(net.weights(), pmap.p)]).data)


def _batch(x, y, batch, rng):
    if batch is None or batch >= len(x):
        return x, y
    idx = rng.choice(len(x), size=batch, replace=False)
    return x[idx], y[idx]


@dataclass
class SmolConfig:
    steps: int = 400
    precision_fraction: float = 0.5
    lam: float = 1e-4
    p_init: int = 8
    grouping: str = "per-parameter"
    K: int = 1
    rounding: str = "round"
    zero_precision: bool = True
    batch: int | None = None
    weight_opt: OptimConfig = field(default_factory=lambda: OptimConfig("adam", lr=1e-2))
    s_opt: OptimConfig = field(default_factory=lambda: OptimConfig("adam", lr=1e-3))


@dataclass
class SmolResult:
    pmap: PrecisionMap
    state: PrecisionState
    losses: list[float]
    finetune_losses: list[float]
    final_loss: float

    @property
    def bpp(self) -> float:
        return self.pmap.bpp


def smol(net: DenseNet, x, y, cfg: SmolConfig, seed: int = 0, log=None) -> SmolResult:
    """Precision training, finalisation, zero-precision allocation, then STE fine-tuning."""
    rng = np.random.default_rng(seed)
    w = net.weights()
    state = PrecisionState.create([wi.shape for wi in w], cfg.grouping, cfg.p_init)
    wopt = Optimizer(net.parameters(), cfg.weight_opt)
    sopt = Optimizer([state.s], cfg.s_opt)
    n_prec = int(round(cfg.steps * cfg.precision_fraction))
    losses = []
    for t in range(n_prec):
        xb, yb = _batch(x, y, cfg.batch, rng)
        with ad.Tape() as tape:
            loss = smol_loss(net, w, state, cfg.lam, xb, yb, rng, cfg.K)
        grads = ad.backward(tape, output=loss)
        losses.append(float(loss.data))
        params = net.parameters()
        wopt.step([grads.get(p, np.zeros(p.shape)) for p in params])
        sopt.step([grads.get(state.s, np.zeros(state.s.shape))])
        for wi, si in zip(w, state.sigma()):
            wi.data = clip_weights(wi.data, si)
        if log is not None:
            pm = finalize_precisions(state, cfg.rounding)
            log({"step": t + 1, "loss": losses[-1], "bpp": pm.bpp})
    pmap = finalize_precisions(state, cfg.rounding)
    if cfg.zero_precision and cfg.grouping == "per-parameter":
        pmap = zero_precision_allocate([wi.data for wi in w], pmap)
    ft = ste_finetune(net, pmap, x, y, cfg.weight_opt, cfg.steps - n_prec, cfg.batch, seed + 1)
    if log is not None:
        log({"step": cfg.steps, "loss": ft[-1], "bpp": pmap.bpp})
    return SmolResult(pmap, state, losses, ft, ft[-1])


# activations

def activation_range(activation: str, clip: float | None = None) -> tuple[float, float, float]:
    """(low, high, M) of the quantization grid for a bounded activation."""
    if activation == "sigmoid":
        return 0.0, 0.5, 1.0
    if activation == "tanh":
        return -1.0, 1.0, 2.0
    if activation == "relu":
        if clip is None:
            raise ValueError("relu is unbounded: supply a clip value")
        return 0.0, clip / 2.0, float(clip)
    raise ValueError(f"cannot quantize activation {activation!r}")


def activation_levels(p: int, activation: str, clip: float | None = None) -> np.ndarray:
    lo, hi, _ = activation_range(activation, clip)
    return np.linspace(lo, hi, 2 ** p)


def quantize_activations(u, s_act, activation: str, clip: float | None = None,
                         rng: np.random.Generator | None = None, p: int | None = None):
    """Noisy activations while training (``p is None``), uniform levels afterwards.

    Training returns ``u + (M/2) sigma(s_act) eps`` as a Tensor; finalised mode
    clamps to the level range and rounds to the nearest of ``2^p`` levels.
    """
    lo, hi, M = activation_range(activation, clip)
    if p is None:
        if rng is None:
            raise ValueError("training mode needs an rng")
        u = ad.as_tensor(u)
        eps = Tensor(rng.uniform(-1.0, 1.0, size=u.shape))
        sig = ad.sigmoid(ad.as_tensor(s_act))
        if sig.shape != u.shape:
            if sig.size != 1:
                raise ValueError(f"s_act shape {sig.shape} matches neither a scalar nor u {u.shape}")
            sig = ad.take(ad.reshape(sig, (1,)), np.zeros(u.shape, dtype=np.int64))
        return u + sig * eps * (M / 2.0)
    if p < 1:
        raise ValueError("activation precision must be at least 1")
    u = np.asarray(u.data if isinstance(u, Tensor) else u, dtype=np.float64)
    spacing = (hi - lo) / (2 ** p - 1)
    k = np.round((np.clip(u, lo, hi) - lo) / spacing)
    return lo + k * spacing
