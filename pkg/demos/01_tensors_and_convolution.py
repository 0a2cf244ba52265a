"""
Tensors, gradients and dilated convolution
==========================================

"""

import numpy as np

from rdcnet import Rng, Tensor, backward
from rdcnet import ops
from rdcnet.tensor import relu, sum_

# a Tensor wraps a float32 array and remembers how it was made
x = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3) - 2, requires_grad=True)
y = sum_(relu(x) * x)
backward(y)
print(x.data)
print(y.data)        # sum of x^2 over the positive entries
print(x.grad)        # 2x where x > 0, else 0
print("")

# convolution output extent: (n + 2p - d(k-1) - 1) // s + 1
for d in (1, 2, 3):
    print("dilation", d, "->", ops.conv_out_extent(32, k=3, s=1, p=d, d=d))
print("stride 2 ->", ops.conv_out_extent(32, k=3, s=2, p=1))
print("")

# a 3x3 kernel at dilation 2 touches a 5x5 neighbourhood
img = np.zeros((1, 1, 7, 7), np.float32)
img[0, 0, 3, 3] = 1.0
w = np.ones((1, 1, 3, 3), np.float32)
out = ops.conv2d(Tensor(img), Tensor(w), padding=2, dilation=2).data
print(out[0, 0].astype(int))
print("")

# the im2col path agrees with a per-tap sum
rng = Rng(0)
x = rng.normal(size=(2, 4, 9, 9)).astype(np.float32)
w = rng.normal(size=(6, 4, 3, 3)).astype(np.float32)
fast = ops.conv2d(Tensor(x), Tensor(w), padding=3, dilation=3).data
slow = ops.conv2d_direct(x, w, padding=3, dilation=3)
print("max abs difference", np.abs(fast - slow).max())
