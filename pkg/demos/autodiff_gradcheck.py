"""Build a small network on the tape and compare its gradient with finite differences."""

import numpy as np

from compactnet import autodiff as ad
from compactnet.gradcheck import finite_diff_grad, max_relative_error
from compactnet.nn import DenseNet

rng = np.random.default_rng(0)
x, y = rng.normal(size=(16, 5)), rng.integers(0, 3, size=16)
net = DenseNet.build([5, 8, 3], "tanh", "cross-entropy", seed=0)

loss, grads = ad.value_and_grad(lambda: net.loss(x, y), net.parameters())
fd = finite_diff_grad(lambda: float(net.loss(x, y).data), net.parameters())
print(f"loss {float(loss):.4f}")
print(f"max relative error vs central differences: {max_relative_error(grads, fd):.2e}")
