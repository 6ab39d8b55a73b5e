"""Command line entry point: ``compactnet <subcommand> --seed N [options]``.

Every subcommand writes ``metrics.jsonl`` and an echo of its config into
``<out>/<subcommand>-seed<N>/``.  The output root comes from ``--out``, the
``output.dir`` config key, the ``COMPACTNET_OUT`` environment variable, or
``./runs``, in that order.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any

import numpy as np

from .. import share
from ..optim import OptimConfig
from ..tasks import grid as grid_task
from ..tasks.synth import SynthProblem, synth_run
from . import checkpoint, config, records, train as runs
from .tune import TunerSpec, log_grid, separable_objective, tune

ENV_OUT = "COMPACTNET_OUT"

WORKED_ALPHA = np.array([
    [0.8, 0.1, -1.2, 0.2, -0.4],
    [-0.2, 0.6, 0.3, 1.2, -0.3],
    [0.6, -0.2, -0.9, -0.4, 0.7],
    [0.2, 1.2, -0.3, 2.4, -0.1],
])

# per-subcommand defaults, applied beneath the config file
SUB_DEFAULTS: dict[str, dict[str, Any]] = {
    "synth": {"optim.method": "adam", "optim.lr": 1e-3, "optim.beta1": 0.0, "optim.beta2": 0.99,
              "optim.momentum": 0.0},
    "quantize": {"optim.method": "adam", "optim.lr": 1e-2},
    "fold": {"optim.method": "adam", "optim.lr": 1e-2, "task.d": 4, "task.n": 64},
    "tune": {"optim.method": "adam", "train.steps": 50},
}

# convenience flag -> config key
FLAG_KEYS = {
    "steps": "train.steps",
    "optimizer": "optim.method",
    "lr": "optim.lr",
    "eps": "optim.eps",
    "eps_schedule": "optim.eps_schedule",
    "lr_schedule": "optim.lr_schedule",
    "method": "sparsify.method",
    "rounds": "sparsify.rounds",
    "lam": "quantize.lam",
    "grouping": "quantize.grouping",
    "tau": "share.tau",
    "tuner": "tune.kind",
    "objective": "tune.objective",
    "budget": "tune.budget",
    "n": "gen.n",
    "D": "gen.D",
    "size": "gen.size",
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="compactnet", description="Model compression and adaptive optimization runs.")
    sub = p.add_subparsers(dest="command", required=True, metavar="subcommand")

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        sp_ = sub.add_parser(name, help=help_text, description=help_text)
        sp_.add_argument("--seed", type=int, required=True, help="random seed (required)")
        sp_.add_argument("--config", help="config file of key = value lines")
        sp_.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        sp_.add_argument("--out", help=f"output root (default: ${ENV_OUT} or ./runs)")
        sp_.add_argument("--json", action="store_true", help="print a JSON summary on stdout")
        return sp_

    s = add("train", "train a dense network on a toy task")
    s.add_argument("--steps", type=int)
    s.add_argument("--optimizer")
    s.add_argument("--lr", type=float)

    s = add("ticket-search", "find a sparse subnetwork (cs, imp, imp-c, iss, sequential-cs, supermask-cs/ss)")
    s.add_argument("--method")
    s.add_argument("--rounds", type=int)
    s.add_argument("--steps", type=int)

    s = add("quantize", "learn per-weight precisions and fine-tune the quantized network")
    s.add_argument("--steps", type=int)
    s.add_argument("--lam", type=float)
    s.add_argument("--grouping")

    s = add("fold", "group similar layers of a template-shared network and fold them into loops")
    s.add_argument("--checkpoint", help="checkpoint holding a template bank")
    s.add_argument("--example", action="store_true", help="fold the built-in 4x5 coefficient example")
    s.add_argument("--tau", type=float)
    s.add_argument("--steps", type=int)

    s = add("tune", "search a 2-D (lr, eps) grid with grid, random, gld or cgld")
    s.add_argument("--tuner")
    s.add_argument("--objective", choices=["separable", "train"])
    s.add_argument("--budget", type=int)

    s = add("synth", "run an optimizer on the stochastic 1-D counterexample")
    s.add_argument("--optimizer")
    s.add_argument("--eps", type=float)
    s.add_argument("--lr", type=float)
    s.add_argument("--steps", type=int)
    s.add_argument("--eps-schedule", dest="eps_schedule")
    s.add_argument("--lr-schedule", dest="lr_schedule")

    s = add("gen-data", "write a shortest-path grid dataset")
    s.add_argument("--n", type=int)
    s.add_argument("-D", "--distance", dest="D", type=int)
    s.add_argument("--size", type=int)
    return p


def _config(args: argparse.Namespace) -> dict[str, Any]:
    cfg = config.build(SUB_DEFAULTS.get(args.command, {}))
    if args.config:
        cfg = config.build(config.parse_text(Path(args.config).read_text(encoding="utf-8")), cfg)
    flags = {}
    for flag, key in FLAG_KEYS.items():
        val = getattr(args, flag, None)
        if val is not None:
            if args.command == "synth" and key == "train.steps":
                key = "synth.steps"
            flags[key] = val
    cfg = config.build(flags, cfg)
    cfg = config.build(config.parse_overrides(args.set), cfg)
    cfg["seed"] = args.seed
    return cfg


def _run_dir(args, cfg) -> Path:
    root = args.out or cfg["output.dir"] or os.environ.get(ENV_OUT) or "runs"
    d = Path(root) / f"{args.command}-seed{args.seed}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _meta(cfg, **extra) -> dict:
    # every checkpoint echoes the full run config
    return {**extra, "config": cfg}


def _cmd_train(cfg, out: Path, log) -> dict:
    net, summary = runs.train(cfg, log)
    checkpoint.save(out / "model.ckpt", "dense", runs.net_arrays(net), _meta(cfg, **runs.net_meta(net)))
    return summary


def _cmd_ticket(cfg, out: Path, log) -> dict:
    net, res, summary = runs.ticket_search(cfg, log)
    arrays = {**runs.net_arrays(net), **{f"mask{i}": m for i, m in enumerate(res.mask)}}
    if res.rewound is not None:
        arrays["rewound"] = res.rewound
    checkpoint.save(out / "ticket.ckpt", "sparsify", arrays, _meta(cfg, **runs.net_meta(net), method=cfg["sparsify.method"]))
    return summary


def _cmd_quantize(cfg, out: Path, log) -> dict:
    net, res, summary = runs.quantize(cfg, log)
    arrays = {**runs.net_arrays(net), "precision": res.pmap.flat(), "s": res.state.s.data}
    checkpoint.save(out / "quantized.ckpt", "quantize", arrays, _meta(cfg, **runs.net_meta(net), grouping=cfg["quantize.grouping"]))
    return summary


def _format_matrix(M: np.ndarray) -> str:
    return "\n".join("  [" + " ".join(f"{v:7.3f}" for v in row) + "]" for row in M)


def _cmd_fold(cfg, out: Path, log, args) -> dict:
    tau = cfg["share.tau"]
    net = None
    if args.checkpoint:
        _, arrays, meta = checkpoint.load(args.checkpoint, "share")
        alpha, T = arrays["alpha"], arrays["T"]
    elif args.example:
        alpha = WORKED_ALPHA
        T = np.random.default_rng(cfg["seed"]).normal(size=(alpha.shape[0], 9))
    else:
        net, x = runs.train_shared(cfg, log)
        alpha, T = net.bank.alpha.data, net.bank.T.data
        checkpoint.save(out / "shared.ckpt", "share", {"alpha": alpha, "T": T},
                        _meta(cfg, weight_shape=list(net.bank.weight_shape)))
    S = share.compute_lsm(alpha)
    res = share.reparameterize(alpha, share.group_layers(S, tau), T)
    (out / "lsm.csv").write_text(share.lsm_to_csv(S), encoding="utf-8")
    summary = {"groups": [int(g) + 1 for g in res.groups], "n_groups": res.n, "program": res.program_text(),
               "B": np.round(res.B, 12).tolist(), "max_residual": float(res.residuals.max())}
    if net is not None:
        _, dev = share.fold_and_execute(net, res, x)
        summary["max_deviation"] = dev
    step = cfg["train.steps"] if net is not None else 0
    log({"step": step, "lsm_offdiag": share.mean_offdiagonal(S), "n_groups": res.n,
         "groups": summary["groups"], "max_residual": summary["max_residual"]})
    checkpoint.save(out / "folded.ckpt", "fold", {"groups": res.groups, "alpha_prime": res.alpha_prime,
                                                   "B": res.B, "T_prime": res.T_prime}, _meta(cfg, tau=tau))
    print("groups: " + " ".join(f"g{g}" for g in summary["groups"]), file=sys.stderr if args.json else sys.stdout)
    print("program: " + summary["program"], file=sys.stderr if args.json else sys.stdout)
    print("B =\n" + _format_matrix(res.B), file=sys.stderr if args.json else sys.stdout)
    return summary


def _cmd_tune(cfg, out: Path, log) -> dict:
    n = cfg["tune.size"]
    spec = TunerSpec(cfg["tune.kind"], (n, n), cfg["tune.budget"], cfg["tune.target"])
    if cfg["tune.objective"] == "separable":
        fn, opt = separable_objective(cfg["seed"], (n, n))
    else:
        lrs = log_grid(cfg["tune.lr_min"], cfg["tune.lr_max"], n)
        epss = log_grid(cfg["tune.eps_min"], cfg["tune.eps_max"], n)

        def fn(i, j):
            c = dict(cfg)
            c["optim.lr"], c["optim.eps"] = float(lrs[i]), float(epss[j])
            try:
                _, summ = runs.train(c)
            except FloatingPointError:
                return 1.0
            return 1.0 - summ.get("test_accuracy", 0.0) if "test_accuracy" in summ else summ["test_loss"]

        opt = None
    res = tune(spec, fn, cfg["seed"], optimum=opt, log=log, workers=cfg["tune.workers"])
    return {"best_cell": list(res.best_cell), "best_value": res.best_value, "trials": res.trials,
            "trials_to_target": res.trials_to_target, "budget_exhausted": res.exhausted}


def _synth_optim(cfg) -> OptimConfig:
    return runs.make_optim(cfg, horizon=cfg["synth.steps"])


def _cmd_synth(cfg, out: Path, log) -> dict:
    problem = SynthProblem(cfg["synth.C"], cfg["synth.delta"])
    traj = synth_run(problem, _synth_optim(cfg), cfg["synth.steps"], cfg["seed"], cfg["synth.w1"],
                     cfg["synth.log_every"])
    for rec in traj.records():
        log(rec)
    return {"final_w": float(traj.w[-1]), "grad_norm_sq_mean": traj.final}


def _cmd_gen(cfg, out: Path, log) -> dict:
    n, D, size = cfg["gen.n"], cfg["gen.D"], cfg["gen.size"]
    rng = np.random.default_rng(cfg["seed"])
    lines = [f"# grid dataset version=1 seed={cfg['seed']} n={n} D={D} size={size} "
             f"obstacle_rate={cfg['gen.obstacle_rate']}"]
    fracs = []
    for i in range(n):
        g = grid_task.generate_grid(rng, D, size, cfg["gen.obstacle_rate"])
        lines.append(g.to_text().rstrip("\n"))
        frac = float(g.labels.mean())
        fracs.append(frac)
        log({"step": i, "label_fraction": frac, "path_length": int(grid_task.bfs_distances(g.obstacles, g.q1)[g.q2])})
    (out / "grids.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {"samples": n, "mean_label_fraction": float(np.mean(fracs))}


def run(args: argparse.Namespace) -> dict:
    cfg = _config(args)
    out = _run_dir(args, cfg)
    (out / "config.txt").write_text(config.dump(cfg), encoding="utf-8")
    with records.MetricsWriter(out / "metrics.jsonl") as log:
        if args.command == "train":
            summary = _cmd_train(cfg, out, log)
        elif args.command == "ticket-search":
            summary = _cmd_ticket(cfg, out, log)
        elif args.command == "quantize":
            summary = _cmd_quantize(cfg, out, log)
        elif args.command == "fold":
            summary = _cmd_fold(cfg, out, log, args)
        elif args.command == "tune":
            summary = _cmd_tune(cfg, out, log)
        elif args.command == "synth":
            summary = _cmd_synth(cfg, out, log)
        else:
            summary = _cmd_gen(cfg, out, log)
    summary["output_dir"] = str(out)
    return summary


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        summary = run(args)
    except (config.ConfigError, checkpoint.CheckpointError, ValueError, RuntimeError, OSError) as exc:
        print(f"compactnet {args.command}: error: {exc}", file=sys.stderr)
        return 2
    if args.json:
        print(json.dumps(summary, sort_keys=True))
    else:
        for k in sorted(summary):
            if k != "B":
                print(f"{k}: {summary[k]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
