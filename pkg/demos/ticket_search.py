"""Continuous sparsification on blobs: find a sparse mask, rewind, retrain, compare with dense."""

from compactnet import sparsify as sp
from compactnet.nn import DenseNet
from compactnet.optim import OptimConfig
from compactnet.tasks.toy import toy_dataset, train_test_split

x, y = toy_dataset("blobs", 600, 20, seed=0, classes=4, separation=4.0)
xtr, ytr, xte, yte = train_test_split(x, y, 0.5, 0)
sgd = OptimConfig("sgd", lr=0.05, momentum=0.9)

dense = DenseNet.build([20, 20, 4], "relu", "cross-entropy", seed=1)
sp.train_masked(dense, xtr, ytr, None, sgd, 200)

net = DenseNet.build([20, 20, 4], "relu", "cross-entropy", seed=1)
state = sp.MaskState.for_net(net, beta_final=200.0, lam=1e-3, rounds=5, steps=200)
res = sp.cs_ticket_search(net, xtr, ytr, state, sgd, OptimConfig("sgd", lr=0.1, momentum=0.9))
for rec in res.history:
    print(f"round {rec['round']}: sparsity {rec['sparsity']:.3f}")

net.set_flat(res.rewound)
sp.train_masked(net, xtr, ytr, res.mask, sgd, 200)
print(f"dense test accuracy  {dense.accuracy(xte, yte):.3f}")
print(f"ticket test accuracy {net.accuracy(xte, yte, sp.masked_weights(net, res.mask)):.3f}"
      f" with {res.sparsity:.1%} of weights removed")
