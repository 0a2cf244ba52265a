"""
Building blocks: FGFE, MRDC, CE and the residual block
======================================================

"""

import numpy as np

from rdcnet import CE, FGFE, MRDC, MRDCBlock, MaskConfig, Rng, Tensor, no_grad

rng = Rng(0)
x = Tensor(rng.normal(size=(2, 16, 8, 8)).astype(np.float32))

# FGFE: pooled, projected, then spread back out, so it is flat in space
fgfe = FGFE(16, Rng(1))
f = fgfe(x).data
print(f.shape, np.ptp(f[0, 0]))
print("")

# MRDC splits channels into quarters, one branch per quarter
mrdc = MRDC(16, MaskConfig("c_k_mask", 0.9), Rng(2), Rng(3))
for i, b in enumerate(mrdc.branches(x), 1):
    print("branch", i, b.shape)
print("alpha", float(mrdc.alpha.data[0]))

# with alpha at zero the block returns its input exactly
mrdc.alpha.data[:] = 0.0
print("identity at alpha 0:", np.array_equal(mrdc(x).data, x.data))
print("")

# CE: a softmax over positions, then a per-channel gate in (0, 1)
ce = CE(16, reduction=4, rng=Rng(4))
with no_grad():
    parts = ce.parts(x)
print("attention sums", parts["attention"].data.reshape(2, -1).sum(axis=1))
g = parts["gate"].data
print("gate range", g.min(), g.max())
print("")

# a downsampling residual block: 16 channels -> 32, extent halves
block = MRDCBlock(16, 32, downsample=True, mask=MaskConfig("c_k_mask", 0.9), rng=Rng(5),
                  mask_rng=Rng(6))
print(block(x).shape)
