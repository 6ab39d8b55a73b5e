"""Config-driven runs shared by the command line and the demos."""

from __future__ import annotations

from typing import Any, Callable

import numpy as np

from .. import autodiff as ad
from .. import quantize as qz
from .. import share
from .. import sparsify as sp
from ..autodiff import Tensor
from ..nn import Dense, DenseNet
from ..optim import EpsSchedule, LRSchedule, OptimConfig, Optimizer
from ..tasks.toy import toy_dataset, train_test_split

Log = Callable[[dict], None]


def make_task(cfg: dict[str, Any]):
    """(x_train, y_train, x_test, y_test, loss kind)."""
    kind = cfg["task.kind"]
    seed = cfg["seed"]
    if kind == "blobs":
        x, y = toy_dataset("blobs", cfg["task.n"], cfg["task.d"], seed, classes=cfg["task.classes"],
                           separation=cfg["task.separation"])
        loss = "cross-entropy"
    elif kind == "regression":
        x, y = toy_dataset("regression", cfg["task.n"], cfg["task.d"], seed, noise=cfg["task.noise"])
        loss = "mse"
    else:
        raise ValueError(f"unsupported task.kind {kind!r} for training (blobs or regression)")
    xtr, ytr, xte, yte = train_test_split(x, y, 1.0 - cfg["task.test_fraction"], seed)
    return xtr, ytr, xte, yte, loss


def make_net(cfg: dict[str, Any], n_in: int, n_out: int, loss: str) -> DenseNet:
    sizes = [n_in, *cfg["model.hidden"], n_out]
    return DenseNet.build(sizes, cfg["model.activation"], loss, seed=cfg["seed"] + 1)


def make_optim(cfg: dict[str, Any], horizon: int | None = None) -> OptimConfig:
    eps_kind = cfg["optim.eps_schedule"]
    eps = cfg["optim.eps"] if eps_kind == "constant" else EpsSchedule(eps_kind, cfg["optim.eps"])
    lr_kind = cfg["optim.lr_schedule"]
    if lr_kind == "constant":
        lr = cfg["optim.lr"]
    else:
        lr = LRSchedule(lr_kind, cfg["optim.lr"], cfg["optim.decay_every"], cfg["optim.decay_factor"],
                        eps if isinstance(eps, EpsSchedule) else None)
    return OptimConfig(cfg["optim.method"], lr=lr, beta1=cfg["optim.beta1"], beta2=cfg["optim.beta2"],
                       eps=eps, weight_decay=cfg["optim.weight_decay"],
                       bias_correction=cfg["optim.bias_correction"], momentum=cfg["optim.momentum"],
                       horizon=horizon)


def net_arrays(net: DenseNet) -> dict[str, np.ndarray]:
    out = {}
    for i, layer in enumerate(net.layers):
        out[f"W{i}"] = layer.W.data
        if layer.b is not None:
            out[f"b{i}"] = layer.b.data
    return out


def net_meta(net: DenseNet) -> dict[str, Any]:
    return {"activations": [l.activation for l in net.layers], "loss": net.loss_kind}


def net_from_arrays(arrays: dict[str, np.ndarray], meta: dict[str, Any]) -> DenseNet:
    layers = []
    for i, act in enumerate(meta["activations"]):
        W = Tensor(arrays[f"W{i}"], requires_grad=True, name=f"W{i}")
        b = Tensor(arrays[f"b{i}"], requires_grad=True, name=f"b{i}") if f"b{i}" in arrays else None
        layers.append(Dense(W, b, act))
    return DenseNet(layers, meta["loss"])


def _batch(cfg):
    return cfg["train.batch"] or None


def train(cfg: dict[str, Any], log: Log | None = None) -> tuple[DenseNet, dict[str, Any]]:
    xtr, ytr, xte, yte, loss_kind = make_task(cfg)
    n_out = cfg["task.classes"] if loss_kind == "cross-entropy" else 1
    net = make_net(cfg, xtr.shape[1], n_out, loss_kind)
    steps = cfg["train.steps"]
    opt = Optimizer(net.parameters(), make_optim(cfg, horizon=max(steps, 1)))
    rng = np.random.default_rng(cfg["seed"] + 2)
    batch = _batch(cfg)
    every = max(cfg["train.log_every"], 1)
    params = net.parameters()
    for t in range(1, steps + 1):
        if batch and batch < len(xtr):
            idx = rng.choice(len(xtr), size=batch, replace=False)
            xb, yb = xtr[idx], ytr[idx]
        else:
            xb, yb = xtr, ytr
        loss, grads = ad.value_and_grad(lambda: net.loss(xb, yb), params)
        opt.step(grads)
        if log is not None and (t % every == 0 or t == steps):
            rec = {"step": t, "loss": loss}
            if loss_kind != "mse":
                rec["accuracy"] = net.accuracy(xtr, ytr)
            log(rec)
    summary = {"train_loss": float(net.loss(xtr, ytr).data), "test_loss": float(net.loss(xte, yte).data)}
    if loss_kind != "mse":
        summary["train_accuracy"] = net.accuracy(xtr, ytr)
        summary["test_accuracy"] = net.accuracy(xte, yte)
    return net, summary


def ticket_search(cfg: dict[str, Any], log: Log | None = None):
    xtr, ytr, xte, yte, loss_kind = make_task(cfg)
    n_out = cfg["task.classes"] if loss_kind == "cross-entropy" else 1
    net = make_net(cfg, xtr.shape[1], n_out, loss_kind)
    opt_cfg = make_optim(cfg)
    s_cfg = OptimConfig(**{**opt_cfg.__dict__, "lr": cfg["sparsify.s_lr"]})
    method = cfg["sparsify.method"]
    steps, rounds, k = cfg["train.steps"], cfg["sparsify.rounds"], cfg["sparsify.rewind_step"]
    batch, seed = _batch(cfg), cfg["seed"]
    state = lambda **kw: sp.MaskState.for_net(
        net, beta_final=cfg["sparsify.beta_final"], lam=cfg["sparsify.lam"], s_init=cfg["sparsify.s_init"],
        rounds=kw.get("rounds", rounds), steps=steps, rewind_step=k, gate=cfg["sparsify.gate"])
    if method == "cs":
        res = sp.cs_ticket_search(net, xtr, ytr, state(), opt_cfg, s_cfg, batch, seed, log=log)
    elif method in ("imp", "imp-c"):
        res = sp.imp(net, xtr, ytr, cfg["sparsify.tau"], rounds, steps, k, opt_cfg,
                     continued=method == "imp-c", batch=batch, seed=seed, log=log)
    elif method == "iss":
        res = sp.iss(net, xtr, ytr, state(), opt_cfg, s_cfg, batch, seed, log=log)
    elif method == "sequential-cs":
        res = sp.sequential_cs(net, xtr, ytr, cfg["sparsify.tau"], rounds, state(rounds=1), opt_cfg, s_cfg,
                               batch, seed, log=log)
    elif method in ("supermask-cs", "supermask-ss"):
        res = sp.supermask_search(net, xtr, ytr, state(), method.split("-")[1], s_cfg, batch, seed, log=log)
    else:
        raise ValueError(f"unknown sparsify.method {method!r}")
    summary = {"method": method, "sparsity": res.sparsity}
    if loss_kind != "mse":
        summary["test_accuracy"] = net.accuracy(xte, yte, sp.masked_weights(net, res.mask))
    return net, res, summary


def quantize(cfg: dict[str, Any], log: Log | None = None):
    xtr, ytr, xte, yte, loss_kind = make_task(cfg)
    n_out = cfg["task.classes"] if loss_kind == "cross-entropy" else 1
    net = make_net(cfg, xtr.shape[1], n_out, loss_kind)
    wcfg = make_optim(cfg)
    scfg = OptimConfig("adam", lr=cfg["quantize.s_lr"])
    smol_cfg = qz.SmolConfig(steps=cfg["train.steps"], precision_fraction=cfg["quantize.precision_fraction"],
                             lam=cfg["quantize.lam"], p_init=cfg["quantize.p_init"],
                             grouping=cfg["quantize.grouping"], K=cfg["quantize.samples"],
                             rounding=cfg["quantize.rounding"], zero_precision=cfg["quantize.zero_precision"],
                             batch=_batch(cfg), weight_opt=wcfg, s_opt=scfg)
    res = qz.smol(net, xtr, ytr, smol_cfg, seed=cfg["seed"], log=log)
    qw = [qz.quantize_q(w.data, p) for w, p in zip(net.weights(), res.pmap.p)]
    summary = {"bpp": res.bpp, "compression_ratio": res.pmap.compression_ratio, "final_loss": res.final_loss}
    if loss_kind != "mse":
        summary["test_accuracy"] = net.accuracy(xte, yte, qw)
    return net, res, summary


def train_shared(cfg: dict[str, Any], log: Log | None = None):
    """Regression onto a random teacher with a template-shared MLP."""
    rng = np.random.default_rng(cfg["seed"])
    d = cfg["task.d"]
    x = rng.normal(size=(cfg["task.n"], d))
    teacher = DenseNet.build([d, cfg["share.width"], 1], "tanh", "mse", seed=cfg["seed"] + 3)
    y = teacher.predict(x)
    net = share.SharedMLP(d, cfg["share.width"], 1, cfg["share.layers"], cfg["share.templates"],
                          cfg["share.activation"], "mse", seed=cfg["seed"] + 1)
    opt = Optimizer(net.parameters(), make_optim(cfg))
    params = net.parameters()
    lam = cfg["share.lam_r"]
    every = max(cfg["train.log_every"], 1)
    steps = cfg["train.steps"]
    for t in range(1, steps + 1):
        loss, grads = ad.value_and_grad(lambda: share.recurrence_regularized_loss(net, lam, x, y), params)
        opt.step(grads)
        if log is not None and (t % every == 0 or t == steps):
            S = share.compute_lsm(net.bank.alpha)
            log({"step": t, "loss": loss, "lsm_offdiag": share.mean_offdiagonal(S)})
    return net, x
