"""Adam drifts to the wrong end of [0, 1] on the rare-large-gradient problem;
delayed adaptivity and a growing eps both fix it."""

from compactnet.optim import EpsSchedule, LRSchedule, OptimConfig
from compactnet.tasks.synth import SynthProblem, synth_run

P = SynthProblem(C=999.0, delta=1.0)
T = 100_000
base = dict(beta1=0.0, beta2=0.99)
eps_t = EpsSchedule("sqrt-t-cubed", 1.0)
runs = {
    "adam": OptimConfig("adam", lr=1e-3, eps=1e-8, **base),
    "delayed adam": OptimConfig("delayed-adam", lr=3e-5, eps=1e-3, **base),
    "adam, eps_t = t^1.5": OptimConfig("adam", lr=LRSchedule("eps-scaled", 0.01, eps=eps_t), eps=eps_t, **base),
}
print(f"stationary point w* = {P.w_star:.4f}")
for name, cfg in runs.items():
    tr = synth_run(P, cfg, T, seed=0)
    print(f"{name:22s} final w {tr.w[-1]:.3f}   running mean |grad|^2 {tr.final:.4f}")
