"""A tour of the autodiff core: build a graph, run backward, check gradients.

Run from the repository root: python3 demos/01_autodiff_basics.py
"""

import numpy as np

from spanqa import autodiff as ad

# %%
# Tensors detached from any graph are plain values; ops on them just compute.

a = ad.Tensor([[1.0, 2.0], [3.0, 4.0]])
b = ad.Tensor([[5.0, 6.0], [7.0, 8.0]])
print("matmul:\n", ad.matmul(a, b).data)
print("relu(-1, 0, 2):", ad.relu([-1.0, 0.0, 2.0]).data)

# %%
# For gradients, register leaves on a Graph. The tape records every op in
# topological order, so backward is a single reverse sweep.

graph = ad.Graph()
x = graph.leaf([1.0, 2.0, 3.0], requires_grad=True)
loss = ad.reduce_sum(ad.mul(x, x))          # sum of squares
grads = graph.backward(loss)
print("d/dx sum(x^2) at [1,2,3]:", grads[x.node_id])  # 2x

# %%
# masked_softmax keeps padding at probability exactly zero.

logits = np.array([[2.0, 1.0, -3.0, 0.0]])
mask = np.array([[1.0, 1.0, 1.0, 0.0]])
probs = ad.masked_softmax(logits, mask)
print("masked softmax:", probs.data, "row sum:", probs.data.sum())

# %%
# grad_check compares backprop against central finite differences.

err = ad.grad_check(lambda t: ad.reduce_sum(ad.tanh(t)),
                    np.random.default_rng(0).normal(size=(3, 3)))
print(f"tanh gradcheck worst relative error: {err:.2e}")
