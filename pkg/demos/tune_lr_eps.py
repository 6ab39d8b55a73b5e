"""Compare gld and cgld on a separable (lr, eps) surface."""

import numpy as np

from compactnet.harness.tune import TunerSpec, separable_objective, tune

out = {"gld": [], "cgld": []}
for seed in range(20):
    fn, opt = separable_objective(seed)
    for kind in out:
        out[kind].append(tune(TunerSpec(kind), fn, seed, opt).trials_to_target)
for kind, trials in out.items():
    print(f"{kind:5s} median trials to 1% suboptimality: {np.median(trials)}")
