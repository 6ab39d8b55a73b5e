"""Run configuration: flat ``key = value`` text with dotted keys.

A ``[section]`` line prefixes the keys that follow it, so these are equal::

    optim.lr = 0.05

    [optim]
    lr = 0.05
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Callable


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    text = str(text).strip()
    return [int(v) for v in text.split(",") if v.strip()] if text else []


# key -> (parser, default)
SCHEMA: dict[str, tuple[Callable[[Any], Any], Any]] = {
    "task.kind": (str, "blobs"),
    "task.n": (int, 400),
    "task.d": (int, 20),
    "task.classes": (int, 4),
    "task.separation": (float, 4.0),
    "task.noise": (float, 0.0),
    "task.test_fraction": (float, 0.5),
    "model.hidden": (_ints, [20]),
    "model.activation": (str, "relu"),
    "optim.method": (str, "sgd"),
    "optim.lr": (float, 0.05),
    "optim.lr_schedule": (str, "constant"),
    "optim.decay_every": (int, 0),
    "optim.decay_factor": (float, 0.1),
    "optim.momentum": (float, 0.9),
    "optim.beta1": (float, 0.9),
    "optim.beta2": (float, 0.999),
    "optim.eps": (float, 1e-8),
    "optim.eps_schedule": (str, "constant"),
    "optim.weight_decay": (float, 0.0),
    "optim.bias_correction": (_bool, False),
    "train.steps": (int, 200),
    "train.batch": (int, 0),
    "train.log_every": (int, 10),
    "sparsify.method": (str, "cs"),
    "sparsify.beta_final": (float, 200.0),
    "sparsify.lam": (float, 1e-3),
    "sparsify.s_init": (float, 0.0),
    "sparsify.s_lr": (float, 0.1),
    "sparsify.rounds": (int, 5),
    "sparsify.rewind_step": (int, 0),
    "sparsify.tau": (float, 0.2),
    "sparsify.gate": (str, "sigmoid"),
    "quantize.lam": (float, 1e-4),
    "quantize.p_init": (int, 8),
    "quantize.grouping": (str, "per-parameter"),
    "quantize.precision_fraction": (float, 0.5),
    "quantize.rounding": (str, "round"),
    "quantize.zero_precision": (_bool, True),
    "quantize.samples": (int, 1),
    "quantize.s_lr": (float, 1e-3),
    "share.layers": (int, 4),
    "share.templates": (int, 2),
    "share.width": (int, 8),
    "share.lam_r": (float, 0.0),
    "share.tau": (float, 0.9),
    "share.activation": (str, "tanh"),
    "synth.C": (float, 999.0),
    "synth.delta": (float, 1.0),
    "synth.steps": (int, 100000),
    "synth.w1": (float, 0.5),
    "synth.log_every": (int, 1000),
    "tune.kind": (str, "cgld"),
    "tune.objective": (str, "separable"),
    "tune.size": (int, 21),
    "tune.budget": (int, 200),
    "tune.target": (float, 0.01),
    "tune.lr_min": (float, 1e-4),
    "tune.lr_max": (float, 10.0),
    "tune.eps_min": (float, 1e-8),
    "tune.eps_max": (float, 1e2),
    "tune.workers": (int, 1),
    "gen.n": (int, 100),
    "gen.D": (int, 10),
    "gen.size": (int, 32),
    "gen.obstacle_rate": (float, 0.1),
    "output.dir": (str, ""),
    "seed": (int, 0),  # the CLI always overwrites it from --seed
}


def defaults() -> dict[str, Any]:
    return {k: (list(v) if isinstance(v, list) else v) for k, (_, v) in SCHEMA.items()}


def parse_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    section = ""
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        out[f"{section}.{key}" if section else key] = value
    return out


def parse_overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        k, v = pair.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build(raw: dict[str, Any], base: dict[str, Any] | None = None) -> dict[str, Any]:
    """Merge typed values over ``base``; unknown keys fail all at once."""
    unknown = sorted(k for k in raw if k not in SCHEMA)
    if unknown:
        raise ConfigError("unknown config keys: " + ", ".join(unknown))
    cfg = defaults() if base is None else dict(base)
    for k, v in raw.items():
        parser = SCHEMA[k][0]
        try:
            cfg[k] = parser(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {k}: {v!r} ({exc})") from None
    return cfg


def load(path: str | Path | None = None, overrides: list[str] | None = None,
         extra: dict[str, Any] | None = None) -> dict[str, Any]:
    cfg = defaults()
    if path is not None:
        cfg = build(parse_text(Path(path).read_text(encoding="utf-8")), cfg)
    if extra:
        cfg = build(extra, cfg)
    if overrides:
        cfg = build(parse_overrides(overrides), cfg)
    return cfg


def dump(cfg: dict[str, Any]) -> str:
    lines = []
    for k in sorted(cfg):
        v = cfg[k]
        v = ",".join(str(x) for x in v) if isinstance(v, list) else str(v).lower() if isinstance(v, bool) else v
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
