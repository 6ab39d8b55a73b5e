"""Soft parameter sharing through weight templates, and network folding.

A bank holds ``k`` templates ``T`` (one flattened weight matrix per row) and a
``k x L`` coefficient matrix ``alpha``; layer ``l`` uses
``W_l = sum_i alpha[i, l] T[i]``.  Layers whose coefficient columns point in
the same direction compute the same function up to scale, so they can be
rewired as a loop over one template.  :func:`fold` finds such groups and
rewrites the bank so every layer selects exactly one new template.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import loss_fn

STABILIZER = 1e-12


@dataclass
class TemplateBank:
    T: Tensor  # (k, d)
    alpha: Tensor  # (k, L)
    weight_shape: tuple[int, int]

    def __post_init__(self):
        k, d = self.T.shape
        if self.alpha.ndim != 2 or self.alpha.shape[0] != k:
            raise ValueError(f"alpha must be ({k}, L), got {self.alpha.shape}")
        if int(np.prod(self.weight_shape)) != d:
            raise ValueError(f"templates of size {d} cannot form weights of shape {self.weight_shape}")

    @classmethod
    def random(cls, k: int, L: int, weight_shape: tuple[int, int], rng: np.random.Generator,
               scale: float | None = None) -> "TemplateBank":
        d = int(np.prod(weight_shape))
        scale = np.sqrt(2.0 / weight_shape[0]) if scale is None else scale
        T = Tensor(rng.normal(0.0, scale, size=(k, d)), requires_grad=True, name="T")
        alpha = Tensor(rng.normal(0.0, 1.0 / np.sqrt(k), size=(k, L)), requires_grad=True, name="alpha")
        return cls(T, alpha, tuple(weight_shape))

    @property
    def k(self) -> int:
        return self.T.shape[0]

    @property
    def L(self) -> int:
        return self.alpha.shape[1]

    @property
    def d(self) -> int:
        return self.T.shape[1]


def effective_weights(bank: TemplateBank) -> list[Tensor]:
    E = ad.matmul(ad.transpose(bank.alpha), bank.T)  # (L, d)
    return [ad.reshape(E[l], bank.weight_shape) for l in range(bank.L)]


def reparameterize_bank(alpha: np.ndarray, T: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Swap (alpha, T) for ((B^T)^-1 alpha, B T); effective weights are unchanged."""
    return np.linalg.solve(B.T, alpha), B @ T


def parameter_counts(k: int, d: int, L: int) -> dict[str, int]:
    return {"shared": k * d + k * L, "unshared": L * d}


# layer similarity

def compute_lsm(alpha) -> np.ndarray:
    """Absolute cosine similarity between coefficient columns."""
    a = np.asarray(alpha.data if isinstance(alpha, Tensor) else alpha, dtype=np.float64)
    norms = np.linalg.norm(a, axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"similarity undefined: zero coefficient vector for layer(s) {zero.tolist()}")
    S = np.abs(a.T @ a) / np.outer(norms, norms)
    S = np.minimum(S, 1.0)
    np.fill_diagonal(S, 1.0)
    return S


def lsm_tensor(alpha: Tensor) -> Tensor:
    """Differentiable LSM with a small additive term in the denominator."""
    G = ad.matmul(ad.transpose(alpha), alpha)
    L = alpha.shape[1]
    diag = G[(np.arange(L), np.arange(L))]
    n = ad.sqrt(diag)
    outer = ad.matmul(ad.reshape(n, (L, 1)), ad.reshape(n, (1, L)))
    return ad.tabs(G) / (outer + STABILIZER)


def mean_offdiagonal(S: np.ndarray) -> float:
    L = S.shape[0]
    if L < 2:
        return 1.0
    return float((S.sum() - np.trace(S)) / (L * (L - 1)))


def lsm_to_csv(S: np.ndarray) -> str:
    return "\n".join(",".join(f"{v:.6f}" for v in row) for row in S) + "\n"


# folding

def group_layers(S: np.ndarray, tau: float) -> np.ndarray:
    """Connected components of the graph with edges where S >= tau.

    Group ids are 0-based and numbered by each group's first layer.
    """
    if not 0 < tau:
        raise ValueError("tau must be positive")
    L = S.shape[0]
    parent = list(range(L))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(L):
        for j in range(i + 1, L):
            if S[i, j] >= tau:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    ids: dict[int, int] = {}
    return np.array([ids.setdefault(find(l), len(ids)) for l in range(L)], dtype=np.int64)


@dataclass
class FoldResult:
    groups: np.ndarray  # (L,) group id per layer
    alpha_prime: np.ndarray  # (n, L) one-hot columns
    B: np.ndarray  # (n, k)
    residuals: np.ndarray  # (L,) |alpha_l - B^T alpha'_l|
    T_prime: np.ndarray | None = None  # (n, d)

    @property
    def n(self) -> int:
        return self.alpha_prime.shape[0]

    @property
    def program(self) -> list[int]:
        return self.groups.tolist()

    def program_text(self) -> str:
        return program_to_text(self.program)

    def reconstructed_alpha(self) -> np.ndarray:
        return self.B.T @ self.alpha_prime


def reparameterize(alpha, groups: Sequence[int], T=None) -> FoldResult:
    a = np.asarray(alpha.data if isinstance(alpha, Tensor) else alpha, dtype=np.float64)
    groups = np.asarray(groups, dtype=np.int64)
    L = a.shape[1]
    if groups.shape != (L,):
        raise ValueError(f"need one group id per layer ({L}), got {groups.shape}")
    n = int(groups.max()) + 1
    if set(groups.tolist()) != set(range(n)):
        raise ValueError("group ids must cover 0..n-1 with no empty group")
    ap = np.zeros((n, L))
    ap[groups, np.arange(L)] = 1.0
    gram = ap @ ap.T  # diagonal of group sizes
    assert np.all(np.diag(gram) > 0)
    Bt = a @ ap.T @ np.linalg.inv(gram)
    B = Bt.T
    residuals = np.linalg.norm(a - Bt @ ap, axis=0)
    Tp = None
    if T is not None:
        Tp = B @ np.asarray(T.data if isinstance(T, Tensor) else T, dtype=np.float64)
    return FoldResult(groups, ap, B, residuals, Tp)


def fold(bank: TemplateBank, tau: float) -> FoldResult:
    S = compute_lsm(bank.alpha)
    return reparameterize(bank.alpha, group_layers(S, tau), bank.T)


def program_to_text(program: Sequence[int]) -> str:
    """Compress a layer-to-group sequence into loop notation.

    ``[0, 1, 0, 1, 2]`` becomes ``[g1 g2]x2 g3``; names are 1-based.
    """
    prog = list(program)
    parts, i = [], 0
    while i < len(prog):
        best_b, best_r = 1, 1
        for b in range(1, (len(prog) - i) // 2 + 1):
            r = 1
            while prog[i + r * b:i + (r + 1) * b] == prog[i:i + b]:
                r += 1
            if r > 1 and b * r > best_b * best_r:
                best_b, best_r = b, r
        block = " ".join(f"g{g + 1}" for g in prog[i:i + best_b])
        if best_r == 1:
            parts.append(block)
        elif best_b == 1:
            parts.append(f"{block}x{best_r}")
        else:
            parts.append(f"[{block}]x{best_r}")
        i += best_b * best_r
    return " ".join(parts)


def program_from_text(text: str) -> list[int]:
    out: list[int] = []
    tokens = text.replace("[", " [ ").replace("]", " ] ").split()
    i = 0
    while i < len(tokens):
        if tokens[i] == "[":
            j = tokens.index("]", i)
            block = [int(t[1:]) - 1 for t in tokens[i + 1:j]]
            reps = 1
            if j + 1 < len(tokens) and tokens[j + 1].startswith("x"):
                reps = int(tokens[j + 1][1:])
                j += 1
            out.extend(block * reps)
            i = j + 1
        else:
            name, _, reps = tokens[i].partition("x")
            if name.startswith("]"):
                raise ValueError(f"malformed program text {text!r}")
            out.extend([int(name[1:]) - 1] * (int(reps) if reps else 1))
            i += 1
    return out


# a network whose hidden layers come from one bank

class SharedMLP:
    """Input layer, ``L`` bank-generated hidden layers (bias-free), output layer.

    ``mode='weights'`` mixes templates into weights first; ``mode='templates'``
    applies every template and mixes the outputs.  Both are the same linear map.
    """

    def __init__(self, n_in: int, width: int, n_out: int, L: int, k: int,
                 activation: str = "tanh", loss: str = "mse", seed: int = 0):
        rng = np.random.default_rng(seed)
        self.W_in = Tensor(rng.normal(0, np.sqrt(1.0 / n_in), size=(n_in, width)), requires_grad=True, name="W_in")
        self.b_in = Tensor(np.zeros(width), requires_grad=True, name="b_in")
        self.bank = TemplateBank.random(k, L, (width, width), rng, scale=np.sqrt(1.0 / width))
        self.W_out = Tensor(rng.normal(0, np.sqrt(1.0 / width), size=(width, n_out)), requires_grad=True, name="W_out")
        self.b_out = Tensor(np.zeros(n_out), requires_grad=True, name="b_out")
        self.activation = activation
        self.loss_kind = loss

    def parameters(self) -> list[Tensor]:
        return [self.W_in, self.b_in, self.bank.T, self.bank.alpha, self.W_out, self.b_out]

    def _act(self, z):
        return ad.ACTIVATIONS[self.activation](z)

    def forward(self, x, mode: str = "weights", program: Sequence[int] | None = None,
                templates=None) -> Tensor:
        """With ``program`` and ``templates`` given, layer ``l`` uses ``templates[program[l]]``."""
        h = self._act(ad.add_bias(ad.matmul(ad.as_tensor(x), self.W_in), self.b_in))
        shape = self.bank.weight_shape
        if program is not None:
            Tp = ad.as_tensor(templates)
            for g in program:
                h = self._act(ad.matmul(h, ad.reshape(Tp[int(g)], shape)))
        elif mode == "weights":
            for W in effective_weights(self.bank):
                h = self._act(ad.matmul(h, W))
        elif mode == "templates":
            Ts = [ad.reshape(self.bank.T[i], shape) for i in range(self.bank.k)]
            for l in range(self.bank.L):
                outs = [ad.matmul(h, Ti) for Ti in Ts]
                z = outs[0] * self.bank.alpha[0, l]
                for i in range(1, self.bank.k):
                    z = z + outs[i] * self.bank.alpha[i, l]
                h = self._act(z)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        return ad.add_bias(ad.matmul(h, self.W_out), self.b_out)

    def loss(self, x, y, **kw) -> Tensor:
        return loss_fn(self.loss_kind, self.forward(x, **kw), y)

    def with_alpha(self, alpha: np.ndarray) -> "SharedMLP":
        import copy
        other = copy.deepcopy(self)
        other.bank.alpha.data = np.asarray(alpha, dtype=np.float64).copy()
        return other


def fold_and_execute(net: SharedMLP, result: FoldResult, x) -> tuple[np.ndarray, float]:
    """Run the folded program; return its output and max deviation from the unfolded net."""
    if result.T_prime is None:
        raise ValueError("fold result has no templates; pass T to reparameterize")
    folded = net.forward(x, program=result.program, templates=result.T_prime).data
    original = net.forward(x).data
    return folded, float(np.max(np.abs(folded - original))) if folded.size else 0.0


def recurrence_regularized_loss(net: SharedMLP, lam: float, x, y) -> Tensor:
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    base = net.loss(x, y)
    if lam == 0:
        return base
    return base - ad.tsum(lsm_tensor(net.bank.alpha)) * lam
