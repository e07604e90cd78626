#!/usr/bin/env python3
# Tour of the autodiff core: build a small graph, differentiate it, verify
# against finite differences, and count multiply-accumulates.

import numpy as np

from slimmatch import tensor as T
from slimmatch.tensor import DiffTensor, FlopLedger, record_flops, finite_diff_check

rng = np.random.default_rng(0)

# forward: loss = sum(gelu(x @ w) * x)
x = DiffTensor(rng.standard_normal((4, 3)), requires_grad=True)
w = DiffTensor(rng.standard_normal((3, 3)), requires_grad=True)

ledger = FlopLedger()
with record_flops(ledger):
    loss = T.reduce_sum(T.mul(T.gelu(T.matmul(x, w)), x))
loss.backward()

print("loss:", loss.item())
print("grad wrt w:\n", w.grad)
print("MACs by op kind:", ledger.snapshot())

# the same graph, against central finite differences
err = finite_diff_check(
    lambda: T.reduce_sum(T.mul(T.gelu(T.matmul(x, w)), x)), [x, w], step=1e-5)
print("max relative gradient error vs finite differences:", err)

# running a graph twice doubles every counter exactly
with record_flops(ledger):
    T.reduce_sum(T.mul(T.gelu(T.matmul(x, w)), x))
print("MACs after re-running the forward pass:", ledger.snapshot())
