"""
Reverse-mode gradients by hand
==============================

A tiny graph through the same ops the denoiser uses, checked against
central finite differences.
"""

import numpy as np

from fastddpm import numerics as nx

rng = np.random.default_rng(0)
x = rng.standard_normal((1, 2, 6, 6))
w = nx.parameter(rng.standard_normal((3, 2, 3, 3)))
b = nx.parameter(np.zeros(3))

h = nx.silu(nx.conv2d(x, w, b, padding=1))
loss = nx.mse_loss(nx.avgpool2x(h), np.zeros((1, 3, 3, 3)))
nx.backward(loss)


def loss_at(wv):
    out = nx.silu(nx.conv2d(x, wv, b.value, padding=1))
    return float(nx.mse_loss(nx.avgpool2x(out), np.zeros((1, 3, 3, 3))).value)


# finite difference on one kernel entry
k = (1, 0, 2, 1)
e = np.zeros_like(w.value)
e[k] = 1e-5
fd = (loss_at(w.value + e) - loss_at(w.value - e)) / 2e-5
print("backward:", w.grad[k], " finite difference:", fd)

# Adam on a scalar bowl
p = np.array([0.0])
state = nx.AdamState(lr=0.1)
for _ in range(200):
    nx.adam_step([p], [2 * (p - 3.0)], state)
print("Adam minimum of (p - 3)^2:", p[0])
