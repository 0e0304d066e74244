"""Tour of the tensor core: eager numpy forward, taped reverse-mode gradients.

Run:  python demos/01_autodiff_basics.py
"""

import numpy as np

import glassdepth.tensor as T
from glassdepth.gradcheck import gradcheck
from glassdepth.tensor import Tape, Tensor

# Tensors wrap float32 numpy arrays.  Nothing is recorded until a Tape is
# active, so inference-style code pays no bookkeeping cost.
x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
w = Tensor(np.array([[0.5], [-1.0]]), requires_grad=True)

with Tape() as tape:
    h = T.relu(x @ w)          # operators build the graph eagerly
    loss = T.tsum(T.mul(h, h))
print("loss =", loss.item())

# backward deposits dLoss/dLeaf into .grad of every gradient-requiring leaf
tape.backward(loss)
print("dL/dx =\n", x.grad)
print("dL/dw =\n", w.grad)

# a second backward on the same tape is a contract error: fresh pass, fresh tape
try:
    tape.backward(loss)
except Exception as exc:
    print("second backward rejected:", type(exc).__name__)

# the library checks its own calculus against central finite differences in
# float64; every operation in the package passes this at rel err < 1e-3
report = gradcheck(lambda a, b: T.relu(a @ b),
                   [np.random.randn(3, 4), np.random.randn(4, 2)])
print("gradient check:", report)

# softmax is stabilized by max subtraction: huge logits stay finite
print("softmax([1000, 0]) =", T.softmax(Tensor([1000.0, 0.0])).numpy())
