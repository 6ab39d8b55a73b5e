"""Learn per-weight precisions with SMOL, then look at the bit allocation."""

import numpy as np

from compactnet import quantize as qz
from compactnet.nn import DenseNet
from compactnet.optim import OptimConfig
from compactnet.tasks.toy import toy_dataset

print("Q(0.2, p) for p = 0..4:", [qz.quantize_q(0.2, p) for p in range(5)])

x, y = toy_dataset("blobs", 400, 10, seed=0, classes=3, separation=4.0)
net = DenseNet.build([10, 16, 3], "relu", "cross-entropy", seed=0)
cfg = qz.SmolConfig(steps=300, lam=1e-4, p_init=8, weight_opt=OptimConfig("adam", lr=1e-2),
                    s_opt=OptimConfig("adam", lr=1e-2))
res = qz.smol(net, x, y, cfg, seed=0)
flat = res.pmap.flat()
print(f"bits per parameter {res.bpp:.2f}, compression {res.pmap.compression_ratio:.1f}x")
vals, counts = np.unique(flat, return_counts=True)
print("precision histogram:", {int(v): int(c) for v, c in zip(vals, counts)})
qw = [qz.quantize_q(w.data, p) for w, p in zip(net.weights(), res.pmap.p)]
print(f"accuracy with quantized weights {net.accuracy(x, y, qw):.3f}")
