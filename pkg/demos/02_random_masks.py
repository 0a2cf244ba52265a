"""
Random channel and kernel masks
===============================

"""

import numpy as np

from rdcnet import MaskConfig, Rng, Tensor
from rdcnet.masking import STRATEGIES, apply_masks, channel_mask, kernel_mask

rng = Rng(3)
x = Tensor(np.ones((2, 8, 4, 4), np.float32))

# a channel mask keeps whole channels, the same ones for every sample
cm = channel_mask(x, tau=0.5, rng=rng).data
print(cm[0, :, 0, 0])
print(np.array_equal(cm[0], cm[1]))
print("")

# a kernel mask keeps individual positions
km = kernel_mask(x, tau=0.5, rng=rng).data
print(km[0, 0])
print("")

# roughly tau of the entries survive; nothing is rescaled
big = Tensor(np.ones((1, 64, 32, 32), np.float32))
for tau in (0.3, 0.6, 0.9):
    kept = kernel_mask(big, tau, Rng(int(tau * 10))).data.mean()
    print(f"tau {tau}: kept {kept:.3f}")
print("")

# the four strategies, and eval mode passing input through
for s in STRATEGIES:
    out = apply_masks(big, MaskConfig(s, 0.5), Rng(1)).data
    print(f"{s:9s} kept {out.mean():.3f}")
print("eval", apply_masks(big, MaskConfig("c_k_mask", 0.5), Rng(1), training=False).data.mean())
