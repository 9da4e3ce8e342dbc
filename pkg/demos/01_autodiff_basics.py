"""Walk through the autodiff core on a few small graphs.

Run with: python demos/01_autodiff_basics.py
"""

import numpy as np

import condensery.tensor as T
from condensery.tensor import Tensor

# A tensor wraps a float64 array plus a gradient buffer. Building ops
# records a graph; backward() walks it in reverse topological order.
x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
y = Tensor(np.array([[0.5, 0.5], [0.5, 0.5]]))
z = T.sum_all(T.mul(x, y))
T.backward(z)
print("d sum(x*y)/dx =\n", x.grad)   # equals y

# Fan-out accumulates: using a tensor twice adds both contributions.
a = Tensor(np.array(3.0))
out = T.add(T.mul(a, a), a)          # a^2 + a, derivative 2a + 1 = 7
T.backward(out)
print("d(a^2 + a)/da =", a.grad)

# A one-layer network end to end: conv -> relu -> pool -> linear -> CE.
rng = np.random.default_rng(0)
img = Tensor(rng.standard_normal((2, 1, 8, 8)))
kernel = Tensor(rng.standard_normal((4, 1, 3, 3)) * 0.5)
kbias = Tensor(np.zeros(4))
w = Tensor(rng.standard_normal((4 * 4 * 4, 3)) * 0.1)
b = Tensor(np.zeros(3))

h = T.conv2d(img, kernel, kbias, stride=1, pad=1)
h = T.relu(h)
h = T.avg_pool2d(h, 2, 2)
h = T.reshape(h, (2, 4 * 4 * 4))
logits = T.linear(h, w, b)
loss = T.softmax_cross_entropy_mean(logits, np.array([0, 2]))
T.backward(loss)
print("loss =", loss.item())
print("kernel grad norm =", np.linalg.norm(kernel.grad))

# One SGD step moves parameters against the gradient and clears it.
before = w.values.copy()
T.sgd_step([kernel, kbias, w, b], lr=0.1)
print("weight moved by", np.linalg.norm(w.values - before))
print("grads cleared:", w.grad is None)
