"""
Training a tiny network on synthetic shapes
===========================================

"""

import numpy as np

from rdcnet import (ArchConfig, Rng, Tensor, TrainConfig, build_network, evaluate,
                    synth_dataset, train_loop)
from rdcnet.data import compute_meta
from rdcnet.training import AugmentConfig

# rectangles versus disks on noise, 80/20 split
train, test = synth_dataset(160, classes=2, extent=16, rng=Rng(0))
meta = compute_meta("synthetic", train, test)
print(len(train), "train,", len(test), "eval")
print("mean", meta.mean, "std", meta.std)
print("")

arch = ArchConfig(blocks=(1, 1, 1, 1), widths=(8, 8, 16, 16), reduction=4, classes=2)
net = build_network(arch, Rng(1))
print(net.num_parameters(), "parameters")
for name, shape in net.trace(Tensor(np.zeros((1, 3, 16, 16), np.float32))):
    print(f"  {name:7s} {shape}")

acc, loss = evaluate(net, test, meta)
print(f"before: eval acc {acc:.3f} loss {loss:.3f}")

cfg = TrainConfig(epochs=15, batch_size=32, augment=AugmentConfig.off())
report = train_loop(net, train, cfg, test, meta,
                    on_epoch=lambda r: print(f"epoch {r.epoch:2d} lr {r.lr:.4f} "
                                             f"loss {r.train_loss:.3f} acc {r.train_acc:.3f}"))

acc, loss = evaluate(net, test, meta)
print(f"after:  eval acc {acc:.3f} loss {loss:.3f}")
print("alphas", {k: round(v, 3) for k, v in net.alphas().items()})
