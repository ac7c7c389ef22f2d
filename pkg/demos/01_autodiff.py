"""Tour of the tensor core: build a computation, run reverse mode, and
check every gradient against central finite differences."""

import numpy as np

from cyclegnn.tensor import Adam, Tensor, backward, gradcheck, matmul, relu, tsum

rng = np.random.default_rng(0)

# A tiny two-layer network on random data, all in float64.
x = Tensor(rng.normal(size=(8, 3)))
w1 = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
w2 = Tensor(rng.normal(size=(5, 1)), requires_grad=True)
target = rng.normal(size=(8, 1))


def loss_fn():
    pred = matmul(relu(matmul(x, w1)), w2)
    diff = pred - Tensor(target)
    return tsum(diff * diff)


loss = loss_fn()
backward(loss)
print(f"loss = {float(loss.data):.4f}")
print(f"dL/dw2 first entries: {w2.grad[:3].ravel()}")

err = gradcheck(loss_fn, [w1, w2])
print(f"worst relative error vs finite differences: {err:.2e}")

# A few Adam steps shrink the loss.
opt = Adam([w1, w2], lr=0.05)
for step in range(20):
    opt.zero_grad()
    loss = loss_fn()
    backward(loss)
    opt.step()
print(f"loss after 20 Adam steps = {float(loss_fn().data):.4f}")
