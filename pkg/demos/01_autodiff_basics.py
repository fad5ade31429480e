"""A walking tour of the autodiff core.

Builds a few small graphs by hand, runs reverse mode, and cross-checks one
gradient against a central finite difference.  Finishes with the packaged
gradient audit, which does the same exercise for every operation and layer.

Run:  python3 demos/01_autodiff_basics.py
"""

import numpy as np

from tripcast.gradcheck import run_gradcheck
from tripcast.tensor import Tensor, matmul, mul, softmax, tanh, tmean

rule = "-" * 64

# ----------------------------------------------------------------------
print(rule)
print("1. A scalar chain: y = tmean(tanh(a * b))")
print(rule)

a = Tensor(np.array([0.3, -1.2, 0.8]), requires_grad=True)
b = Tensor(np.array([1.5, 0.4, -0.7]), requires_grad=True)
y = tmean(tanh(mul(a, b)))
y.backward()

# d/da tmean(tanh(a*b)) = (1 - tanh(a*b)^2) * b / n
manual = (1.0 - np.tanh(a.data * b.data) ** 2) * b.data / a.data.size
print("y           =", float(y.data))
print("a.grad      =", a.grad)
print("closed form =", manual)
print("max |diff|  =", np.max(np.abs(a.grad - manual)))

# ----------------------------------------------------------------------
print()
print(rule)
print("2. The same gradient by central finite differences")
print(rule)

# Nudge one coordinate of `a` both ways and difference the losses.  This
# is the oracle the gradient audit uses for every parameter of every op.
step = 1e-6
i = 1
fd = np.zeros_like(a.data)
for sign in (+1.0, -1.0):
    bumped = a.data.copy()
    bumped[i] += sign * step
    out = tmean(tanh(mul(Tensor(bumped), Tensor(b.data))))
    fd[i] += sign * float(out.data)
fd[i] /= 2.0 * step
print(f"finite difference for a[{i}] = {fd[i]:.10f}")
print(f"reverse mode for a[{i}]     = {a.grad[i]:.10f}")

# ----------------------------------------------------------------------
print()
print(rule)
print("3. Matrix ops and fan-out accumulate correctly")
print(rule)

w = Tensor(np.arange(6.0).reshape(2, 3) / 10.0, requires_grad=True)
x = Tensor(np.ones((3, 2)))
# w is used twice; its gradient is the sum of both paths
y = tmean(mul(matmul(w, x), matmul(w, x)))
y.backward()
print("w used twice, grad shape", w.grad.shape)
print(w.grad)

# ----------------------------------------------------------------------
print()
print(rule)
print("4. Softmax rows always sum to one, and gradients flow through")
print(rule)

logits = Tensor(np.array([[2.0, -1.0, 0.5], [0.0, 0.0, 0.0]]),
                requires_grad=True)
probs = softmax(logits, axis=-1)
print("row sums:", probs.data.sum(axis=-1))
tmean(mul(probs, probs)).backward()
print("logits.grad rows sum to ~0 (softmax is shift-invariant):",
      logits.grad.sum(axis=-1))

# ----------------------------------------------------------------------
print()
print(rule)
print("5. The full gradient audit (every op, every layer)")
print(rule)

report = run_gradcheck()
print(report.format())
