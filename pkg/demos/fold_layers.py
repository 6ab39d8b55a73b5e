"""Group similar layers of a template-shared network and fold them into a loop."""

import numpy as np

from compactnet import share
from compactnet.harness.cli import WORKED_ALPHA

S = share.compute_lsm(WORKED_ALPHA)
print("layer similarity:\n", np.round(S, 3))
res = share.reparameterize(WORKED_ALPHA, share.group_layers(S, 0.9))
print("groups:", [int(g) + 1 for g in res.groups], " program:", res.program_text())
print("B:\n", np.round(res.B, 3))

net = share.SharedMLP(3, 6, 1, 4, 2, seed=0)
net = net.with_alpha(net.bank.alpha.data[:, [0, 1, 0, 1]])
res = share.fold(net.bank, 0.99)
_, dev = share.fold_and_execute(net, res, np.random.default_rng(0).normal(size=(5, 3)))
print(f"folded program {res.program_text()!r}, max output change {dev:.1e}")
