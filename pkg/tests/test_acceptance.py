"""Acceptance criteria, one test each.

Every test appends a ``PASS``/``FAIL`` line (with tolerance and wall time) to
``REPORT``; ``conftest.py`` prints the lines at the end of the session.  Run
this file alone with ``pytest tests/test_acceptance.py -q``.
"""

import time

import numpy as np
import pytest

from compactnet import autodiff as ad
from compactnet import quantize as qz
from compactnet import share
from compactnet import sparsify as sp
from compactnet.autodiff import Tensor
from compactnet.gradcheck import finite_diff_grad, max_relative_error
from compactnet.harness import records
from compactnet.harness.cli import WORKED_ALPHA, main
from compactnet.harness.tune import TunerSpec, separable_objective, tune
from compactnet.nn import DenseNet
from compactnet.optim import EpsSchedule, LRSchedule, OptimConfig, OptimState, step
from compactnet.tasks import grid
from compactnet.tasks.synth import SynthProblem, synth_run
from compactnet.tasks.toy import toy_dataset, train_test_split

REPORT: list[str] = []

PRINTED_LSM = np.array([
    [1, 0.05, 1, 0.05, 0.15],
    [0.05, 1, 0.05, 1, 0.40],
    [1, 0.05, 1, 0.05, 0.15],
    [0.05, 1, 0.05, 1, 0.40],
    [0.15, 0.40, 0.15, 0.40, 1],
])
PRINTED_B = np.array([
    [-0.2, 0.05, -0.15, -0.05],
    [0.15, 0.9, -0.3, 1.8],
    [-0.4, 0.3, 0.7, -0.1],
])


def report(n, ok: bool, detail: str, t0: float) -> None:
    REPORT.append(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail} [{time.perf_counter() - t0:.2f}s]")


# 1. synthetic convergence separation

SYNTH_BASE = dict(beta1=0.0, beta2=0.99)
SYNTH_SETTINGS = {
    "adam": lambda: OptimConfig("adam", lr=1e-3, eps=1e-8, **SYNTH_BASE),
    "delayed-adam": lambda: OptimConfig("delayed-adam", lr=3e-5, eps=1e-3, **SYNTH_BASE),
    "eps_t-adam": lambda: OptimConfig("adam", eps=EpsSchedule("sqrt-t-cubed", 1.0),
                                      lr=LRSchedule("eps-scaled", 0.01, eps=EpsSchedule("sqrt-t-cubed", 1.0)),
                                      **SYNTH_BASE),
}


def test_c1_synthetic_separation():
    t0 = time.perf_counter()
    P, T = SynthProblem(999.0, 1.0), 100_000
    means, slowest = {}, 0.0
    for name, make in SYNTH_SETTINGS.items():
        finals = []
        for seed in range(5):
            t1 = time.perf_counter()
            finals.append(synth_run(P, make(), T, seed=seed).final)
            slowest = max(slowest, time.perf_counter() - t1)
        means[name] = float(np.mean(finals))
    ok = means["adam"] >= 0.5 and means["delayed-adam"] <= 0.05 and means["eps_t-adam"] <= 0.05 and slowest <= 60
    report(1, ok, "mean running |grad|^2 " + ", ".join(f"{k}={v:.4f}" for k, v in means.items())
           + f" (need adam>=0.5, others<=0.05; slowest trajectory {slowest:.1f}s <= 60s)", t0)
    assert ok


# 2. worked reparameterization example

def test_c2_worked_example_lsm():
    t0 = time.perf_counter()
    S = share.compute_lsm(WORKED_ALPHA)
    err = float(np.max(np.abs(S - PRINTED_LSM)))
    ok = err < 0.01
    report("2a", ok, f"LSM max |computed - printed| = {err:.4f} (< 0.01)", t0)
    assert ok


@pytest.mark.xfail(strict=True, reason="printed B row 3 has +0.3 where the given alpha column has -0.3")
def test_c2_worked_example_b():
    t0 = time.perf_counter()
    res = share.reparameterize(WORKED_ALPHA, share.group_layers(share.compute_lsm(WORKED_ALPHA), 0.9))
    err = np.abs(res.B - PRINTED_B)
    ok = bool(np.all(err < 0.005))
    bad = [tuple(int(v) for v in ix) for ix in np.argwhere(err >= 0.005)]
    report("2b", ok, f"B vs printed to 2 decimals; mismatched entries {bad}"
           f" (computed {res.B[2].round(2).tolist()} vs printed {PRINTED_B[2].tolist()})", t0)
    assert ok


# 3. reparameterization invariance

def test_c3_invertible_reparameterization():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        k, L, d = rng.integers(1, 7), rng.integers(1, 9), rng.integers(1, 17)
        a, T = rng.normal(size=(k, L)), rng.normal(size=(k, d))
        B = rng.normal(size=(k, k)) + 3 * np.eye(k)
        a2, T2 = share.reparameterize_bank(a, T, B)
        worst = max(worst, float(np.max(np.abs(a.T @ T - a2.T @ T2))))
    ok = worst <= 1e-10
    report(3, ok, f"100 triples, max weight change {worst:.2e} (<= 1e-10)", t0)
    assert ok


# 4. quantization oracle suite

def test_c4_quantization_oracles():
    t0 = time.perf_counter()
    grid_w = np.round(np.arange(-2000, 2001) * 1e-3, 12)
    mismatches = 0
    for p in range(5):
        fast = qz.quantize_q(grid_w, np.full(grid_w.shape, p))
        slow = np.array([qz.quantize_oracle(w, p) for w in grid_w])
        mismatches += int(np.sum(fast != slow))
    example = qz.quantize_q(0.2, 2) == 0.5
    zpa = qz.zero_precision_allocate([np.array([0.2, 1.0])], qz.PrecisionMap([np.array([2, 1])])).p[0].tolist()
    rng = np.random.default_rng(0)
    w = rng.uniform(-2, 2, size=100_000)
    p = rng.integers(1, 9, size=w.size)
    after = qz.zero_precision_allocate([w], qz.PrecisionMap([p])).p[0]
    worse = int(np.sum(qz.quantization_error(w, after) > qz.quantization_error(w, p)))
    ok = mismatches == 0 and example and zpa == [0, 1] and worse == 0
    report(4, ok, f"Q vs enumeration mismatches={mismatches} over p<=4; Q(0.2,2)=0.5 {example}; "
           f"ZPA example {zpa}; ZPA error increases {worse}/100000", t0)
    assert ok


# 5. s <-> p round trip

def test_c5_precision_round_trip():
    t0 = time.perf_counter()
    back = [int(qz.finalize_precisions_array(qz.s_init(p))) for p in range(1, 17)]
    sig = abs(float(ad.stable_sigmoid(np.array(qz.s_init(8)))) - 2.0 ** -7)
    ok = back == list(range(1, 17)) and sig <= 1e-12
    report(5, ok, f"round trip exact for p=1..16: {back == list(range(1, 17))}; |sigma(s_init(8)) - 2^-7| = {sig:.1e}"
           " (<= 1e-12)", t0)
    assert ok


# 6. gradient integrity

def _randomize(params, rng, scale=1.0):
    for p in params:
        p.data = rng.normal(scale=scale, size=p.shape)


def _check(f, params) -> float:
    _, g = ad.value_and_grad(f, params)
    fd = finite_diff_grad(lambda: float(f().data), params, 1e-5)
    return max_relative_error(g, fd)


def test_c6_gradient_integrity():
    t0 = time.perf_counter()
    worst = {}
    rng = np.random.default_rng(0)
    x, yc, yr = rng.normal(size=(6, 4)), rng.integers(0, 3, size=6), rng.normal(size=(6, 3))

    errs = []
    for k in range(100):
        loss = "cross-entropy" if k % 2 else "mse"
        net = DenseNet.build([4, 5, 3], "tanh", loss, seed=k)
        _randomize(net.parameters(), rng)
        y = yc if loss == "cross-entropy" else yr
        errs.append(_check(lambda: net.loss(x, y), net.parameters()))
    worst["plain"] = max(errs)

    errs = []
    for k in range(100):
        net = DenseNet.build([4, 5, 3], "tanh", "cross-entropy", seed=k)
        _randomize(net.parameters(), rng)
        s = [Tensor(rng.normal(size=w.shape), requires_grad=True) for w in net.weights()]
        beta, gate = float(rng.uniform(1, 10)), sorted(sp.GATES)[k % len(sp.GATES)]
        errs.append(_check(lambda: sp.cs_loss(net, s, beta, 0.01, x, yc, gate), net.parameters() + s))
    worst["cs"] = max(errs)

    errs = []
    for k in range(100):
        net = DenseNet.build([4, 5, 3], "tanh", "mse", seed=k)
        _randomize(net.parameters(), rng, 0.5)
        state = qz.PrecisionState.create([w.shape for w in net.weights()], qz.GROUPINGS[k % 3], p_init=4)
        state.s.data[:] = rng.normal(-1.0, 1.0, size=state.s.size)
        noise = qz.sample_noise(state, rng, K=2)
        params = net.parameters() + [state.s]
        errs.append(_check(lambda: qz.smol_loss(net, net.weights(), state, 0.01, x, yr, noise=noise), params))
    worst["smol"] = max(errs)

    errs = []
    for k in range(100):
        net = share.SharedMLP(4, 4, 3, 3, 2, seed=k)
        _randomize(net.parameters(), rng, 0.7)
        errs.append(_check(lambda: share.recurrence_regularized_loss(net, 0.1, x, yr), net.parameters()))
    worst["recurrence"] = max(errs)

    ok = max(worst.values()) <= 1e-4
    report(6, ok, "max rel error over 100 points each: " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
           + " (<= 1e-4)", t0)
    assert ok


# 7. CS ticket at desk scale

def test_c7_cs_ticket():
    t0 = time.perf_counter()
    x, y = toy_dataset("blobs", 600, 20, seed=0, classes=4, separation=4.0)
    xtr, ytr, xte, yte = train_test_split(x, y, 0.5, 0)
    cfg, s_cfg, T = OptimConfig("sgd", lr=0.05, momentum=0.9), OptimConfig("sgd", lr=0.1, momentum=0.9), 200
    dense = DenseNet.build([20, 20, 4], "relu", "cross-entropy", seed=1)
    sp.train_masked(dense, xtr, ytr, None, cfg, T)
    dense_acc = dense.accuracy(xte, yte)
    net = DenseNet.build([20, 20, 4], "relu", "cross-entropy", seed=1)
    state = sp.MaskState.for_net(net, beta_final=200.0, lam=1e-3, s_init=0.0, rounds=5, steps=T, rewind_step=0)
    res = sp.cs_ticket_search(net, xtr, ytr, state, cfg, s_cfg)
    net.set_flat(res.rewound)
    sp.train_masked(net, xtr, ytr, res.mask, cfg, T)
    acc = net.accuracy(xte, yte, sp.masked_weights(net, res.mask))
    elapsed = time.perf_counter() - t0
    ok = res.sparsity >= 0.7 and acc >= dense_acc - 0.01 and res.soft_fraction < 0.01 and elapsed <= 120
    report(7, ok, f"{res.d} weights, sparsity {res.sparsity:.3f} (>= 0.70), ticket acc {acc:.3f} vs dense "
           f"{dense_acc:.3f} (within 0.01), undecided gates {res.soft_fraction:.4f} (< 0.01)", t0)
    assert ok


# 8. CS against exhaustive search

def test_c8_cs_vs_brute_force():
    t0 = time.perf_counter()
    gaps, sane = [], True
    for seed in range(20):
        rng = np.random.default_rng(seed)
        d = 8 + seed % 5
        x = rng.normal(size=(60, d))
        w = np.where(rng.random(d) < 0.5, rng.normal(0, 2, d), 0.0)
        y = x @ w + 0.1 * rng.normal(size=60)
        lam = 0.05
        loss = sp.least_squares_loss(x, y)
        _, best = sp.brute_force_l0(loss, d, lam)
        net = DenseNet.build([d, 1], "identity", "mse", bias=False, seed=seed)
        state = sp.MaskState.for_net(net, steps=300, lam=lam, s_init=0.5)
        res = sp.cs_prune(net, x, y.reshape(-1, 1), state, OptimConfig("adam", lr=0.05), OptimConfig("adam", lr=0.05))
        val = sp.l0_objective(loss, res.mask[0].ravel(), lam)
        sane &= val >= best - 1e-12
        gaps.append(val - best)
    report(8, sane, f"CS objective >= exhaustive optimum on 20 seeds (d=8..12): {sane}; "
           f"median gap {np.median(gaps):.4f}, max gap {np.max(gaps):.4f} (informational)", t0)
    assert sane


# 9. AvaGrad decoupling

def _trajectory(method, eps, lr, steps=100):
    rng = np.random.default_rng(9)
    x, y = rng.normal(size=(32, 6)), rng.normal(size=32)
    w = [np.zeros(6)]
    state = OptimState.zeros([(6,)])
    cfg = OptimConfig(method, lr=lr, beta1=0.9, beta2=0.999, eps=eps)
    out = []
    for _ in range(steps):
        g = 2 * x.T @ (x @ w[0] - y) / len(y)
        w = step(w, [g], state, cfg)
        out.append(w[0].copy())
    return np.array(out)


def _rel(a, b):
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


def test_c9_avagrad_decoupling():
    t0 = time.perf_counter()
    ava = _rel(_trajectory("avagrad", 1e8, 0.01), _trajectory("avagrad", 1e12, 0.01))
    adam = _rel(_trajectory("adam", 1e8, 0.01), _trajectory("adam", 1e12, 0.01))
    rescaled = _rel(_trajectory("adam", 1e8, 0.01), _trajectory("adam", 1e12, 0.01 * 1e4))
    ok = ava <= 1e-8 and adam >= 1e-2 and rescaled <= 1e-6
    report(9, ok, f"avagrad eps 1e8 vs 1e12 rel {ava:.1e} (<= 1e-8); adam rel {adam:.2f} (>= 1e-2); "
           f"adam with lr x1e4 rel {rescaled:.1e} (<= 1e-6)", t0)
    assert ok


# 10. CGLD vs GLD

def test_c10_cgld_beats_gld():
    t0 = time.perf_counter()
    out = {"gld": [], "cgld": []}
    for seed in range(20):
        fn, opt = separable_objective(seed)
        for kind in out:
            res = tune(TunerSpec(kind, (21, 21), budget=441, target=0.01), fn, seed, opt)
            out[kind].append(res.trials_to_target if res.trials_to_target is not None else np.inf)
    med = {k: float(np.median(v)) for k, v in out.items()}
    elapsed = time.perf_counter() - t0
    ok = med["cgld"] < med["gld"] and elapsed <= 10
    report(10, ok, f"median trials to 1% suboptimality cgld={med['cgld']} < gld={med['gld']} over 20 seeds "
           "(<= 10s)", t0)
    assert ok


# 11. shortest-path generator

def test_c11_shortest_paths():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    bad, f1s = 0, []
    for _ in range(200):
        size = int(rng.integers(4, 9))
        D = int(rng.integers(2, size - 1))
        s = grid.generate_grid(rng, D, size=size, obstacle_rate=float(rng.uniform(0, 0.3)), max_tries=10_000)
        oracle = np.zeros_like(s.obstacles)
        for path in grid.enumerate_shortest_paths(s.obstacles, s.q1, s.q2):
            for c in path:
                oracle[c] = True
        bad += int(not np.array_equal(s.labels, oracle))
        f1s.append(grid.f1_score(s.labels.ravel(), oracle.ravel()))
    ok = bad == 0 and min(f1s) == 1.0
    report(11, ok, f"200 grids up to 8x8: label mismatches {bad}, min oracle F1 {min(f1s)}", t0)
    assert ok


# 12. determinism of every subcommand

COMMANDS = ["train", "ticket-search", "quantize", "fold", "tune", "synth", "gen-data"]


def test_c12_cli_determinism(tmp_path, capsys):
    t0 = time.perf_counter()
    same = {}
    for cmd in COMMANDS:
        streams = []
        for rep in ("a", "b"):
            assert main([cmd, "--seed", "7", "--out", str(tmp_path / rep), "--json"]) == 0
            path = tmp_path / rep / f"{cmd}-seed7" / "metrics.jsonl"
            assert records.read_records(path)
            streams.append(path.read_bytes())
        same[cmd] = streams[0] == streams[1]
    capsys.readouterr()
    ok = all(same.values())
    report(12, ok, "byte-identical metrics.jsonl on rerun: " + ", ".join(f"{k}={v}" for k, v in same.items()), t0)
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
