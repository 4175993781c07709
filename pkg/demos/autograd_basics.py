"""
Reverse-mode gradients on numpy arrays
======================================

The tape in ``pegcn.numerics`` records each primitive as it runs and walks
the graph backwards on demand.  This script builds a two-layer map, takes
its gradient and checks it against central differences.
"""

import numpy as np

from pegcn import numerics as nx
from pegcn.numerics import ShapeError, Tensor

rng = np.random.default_rng(0)
x = rng.standard_normal((5, 2))
params = {"W1": rng.standard_normal((2, 3)), "b1": rng.standard_normal(3),
          "W2": rng.standard_normal((3, 2)), "b2": rng.standard_normal(2)}


def loss(p):
    h = nx.tanh(nx.add(nx.matmul(Tensor(x), p["W1"]), p["b1"]))
    return nx.mean(nx.add(nx.matmul(h, p["W2"]), p["b2"]))


value, grads = nx.value_and_grad(loss, params)
print("loss", value)
for name, g in grads.items():
    print(f"  d/d{name}", g.shape)

# analytic vs numeric, worst relative error over all 17 entries
print("finite-difference check:", nx.finite_diff_check(loss, params))

# only a shared leading batch axis broadcasts; anything else is an error
try:
    nx.add(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 1))))
except ShapeError as exc:
    print("rejected:", exc)
