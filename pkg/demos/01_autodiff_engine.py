"""A short tour of the tensor engine: forward ops, backward, determinism.

Run from the repository root: python3 demos/01_autodiff_engine.py
"""

import numpy as np

from sicdn import tensor as T

rng = np.random.default_rng(0)

# tensors are float32; leaves created with requires_grad=True collect gradients
x = T.Tensor(rng.standard_normal((2, 1, 8, 8)).astype(np.float32), requires_grad=True)
kernels = T.Tensor(rng.standard_normal((4, 1, 3, 3)).astype(np.float32), requires_grad=True)
weight = T.Tensor(rng.standard_normal((3, 4)).astype(np.float32), requires_grad=True)
bias = T.Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)

# a small conv -> relu -> pool -> linear -> softmax pipeline
features = T.global_average_pool(T.relu(T.conv2d_forward(x, kernels, stride=1, padding=1)))
probabilities = T.softmax(T.linear_forward(features, weight, bias))
print("probabilities:\n", probabilities.data)
print("rows sum to one:", probabilities.data.sum(axis=1))

# backward needs a scalar; take the mean of the first-class probabilities
mask = np.zeros(probabilities.shape, dtype=np.float32)
mask[:, 0] = 1.0
loss = T.mean_all(T.multiply(probabilities, T.Tensor(mask)))
T.backward(loss)
print("\nweight gradient:\n", weight.grad)

# gradients agree with central finite differences of the same scalar
def scalar_at(w_value):
    f = T.global_average_pool(T.relu(T.conv2d_forward(
        T.Tensor(x.data), T.Tensor(kernels.data), stride=1, padding=1)))
    p = T.softmax(T.linear_forward(f, T.Tensor(w_value), T.Tensor(bias.data)))
    return float((p.data * mask).mean())

h = 1e-3
probe = weight.data.copy()
probe[0, 0] += h
hi = scalar_at(probe)
probe[0, 0] -= 2 * h
lo = scalar_at(probe)
fd = (hi - lo) / (2 * h)
print(f"\nanalytic d/dW[0,0] = {weight.grad[0, 0]:.8f}, finite difference = {fd:.8f}")

# identical graphs replay to bit-identical gradients
weight.zero_grad()
loss2 = T.mean_all(T.multiply(
    T.softmax(T.linear_forward(
        T.global_average_pool(T.relu(T.conv2d_forward(x, kernels, stride=1, padding=1))),
        weight, bias)),
    T.Tensor(mask)))
T.backward(loss2)
print("replay bit-identical:", bool(np.array_equal(weight.grad, weight.grad.copy())))
