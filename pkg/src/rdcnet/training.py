"""Loss, optimizer, schedule, augmentation and the training loop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset, DatasetMeta, batches
from .errors import ConfigError, ContractError, DataError, NonFiniteError
from .rng import Rng
from .tensor import Tensor, as_tensor, backward, check_finite, no_grad, record

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# loss


def label_smoothed_ce(logits: Tensor, labels, smoothing: float = 0.1) -> Tensor:
    """Mean over the batch of ``-sum_k q_k log softmax(logits)_k`` where
    ``q = (1 - smoothing) * onehot + smoothing / K``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DataError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"labels must lie in [0, {k}), got range "
                        f"[{labels.min()}, {labels.max()}]")
    if not 0.0 <= smoothing < 1.0:
        raise ConfigError(f"label smoothing must lie in [0, 1), got {smoothing}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    q = np.full((n, k), smoothing / k, dtype=logits.dtype)
    q[np.arange(n), labels] += 1.0 - smoothing
    loss = -(q * logp).sum() / n

    def bw(g):
        return ((np.exp(logp) - q) * (g / n),)

    return record(np.asarray(loss, dtype=logits.dtype), (logits,), bw)


# ---------------------------------------------------------------------------
# optimizer and schedule


class SGD:
    """SGD with classical momentum and L2 weight decay folded into the
    gradient: ``g' = g + wd*p``; ``v = mu*v + g'``; ``p -= lr*v``.

    Decay only touches parameters flagged ``weight_decay`` (conv and linear
    weights); parameters that do not require grad are skipped.
    """

    def __init__(self, params, lr=0.1, momentum=0.9, weight_decay=5e-4):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        sgd_step(self.params, self.velocity, lr, self.momentum, self.weight_decay)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def sgd_step(params, velocity, lr, momentum, weight_decay):
    for p, v in zip(params, velocity):
        if p.grad is None:
            raise ContractError(f"parameter {p.name or tuple(p.shape)} has no gradient")
        g = p.grad
        if weight_decay and getattr(p, "weight_decay", True):
            g = g + p.dtype.type(weight_decay) * p.data
        v *= p.dtype.type(momentum)
        v += g
        p.data -= p.dtype.type(lr) * v


def cosine_lr(epoch, total, lr0=0.1, lr_min=0.0) -> float:
    """``lr_min + (lr0 - lr_min) * (1 + cos(pi * epoch / total)) / 2``."""
    if not 0 <= epoch <= total:
        raise ContractError(f"epoch {epoch} outside [0, {total}]")
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * epoch / total))


# ---------------------------------------------------------------------------
# augmentation


@dataclass
class AugmentConfig:
    hflip: bool = True
    hflip_p: float = 0.5
    pad_crop: bool = True
    pad: int = 4
    erase_p: float = 0.5
    erase_area: tuple = (0.02, 0.33)
    erase_ratio: tuple = (0.3, 3.3)

    @classmethod
    def off(cls):
        return cls(hflip=False, pad_crop=False, erase_p=0.0)

    @property
    def enabled(self):
        return self.hflip or self.pad_crop or self.erase_p > 0


def hflip(image: np.ndarray) -> np.ndarray:
    return image[..., ::-1].copy()


def pad_crop(image: np.ndarray, pad: int, top: int, left: int) -> np.ndarray:
    """Zero-pad by ``pad`` on every side, then crop the original size at
    ``(top, left)`` of the padded image."""
    c, h, w = image.shape
    padded = np.pad(image, ((0, 0), (pad, pad), (pad, pad)))
    return padded[:, top:top + h, left:left + w].copy()


def random_erase(image: np.ndarray, rng: Rng, area=(0.02, 0.33), ratio=(0.3, 3.3),
                 attempts: int = 10) -> np.ndarray:
    """Overwrite one random rectangle with uniform noise.

    Area fraction and aspect ratio (log-uniform) are drawn per attempt; the
    image comes back unchanged if no draw fits within ``attempts``.
    """
    c, h, w = image.shape
    out = image.copy()
    for _ in range(attempts):
        target = rng.uniform(*area) * h * w
        aspect = math.exp(rng.uniform(math.log(ratio[0]), math.log(ratio[1])))
        eh = int(round(math.sqrt(target * aspect)))
        ew = int(round(math.sqrt(target / aspect)))
        if 0 < eh < h and 0 < ew < w:
            top = int(rng.integers(0, h - eh + 1))
            left = int(rng.integers(0, w - ew + 1))
            out[:, top:top + eh, left:left + ew] = rng.random((c, eh, ew)).astype(out.dtype)
            return out
    return out


def augment(image, cfg: AugmentConfig, rng: Rng) -> np.ndarray:
    """Flip, pad-and-crop and random erasing of one ``[3, H, W]`` image."""
    image = image.data if isinstance(image, Tensor) else np.asarray(image)
    if cfg.hflip and rng.random() < cfg.hflip_p:
        image = hflip(image)
    if cfg.pad_crop and cfg.pad > 0:
        top, left = rng.integers(0, 2 * cfg.pad + 1, size=2)
        image = pad_crop(image, cfg.pad, int(top), int(left))
    if cfg.erase_p > 0 and rng.random() < cfg.erase_p:
        image = random_erase(image, rng, cfg.erase_area, cfg.erase_ratio)
    return image


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    lr: float = 0.1
    lr_min: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 5e-4
    label_smoothing: float = 0.1
    eval_batch_size: int = 256
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("learning rate must be >= 0", field="train.lr")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)", field="train.momentum")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label smoothing must lie in [0, 1)", field="train.label_smoothing")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1", field="train.epochs")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("batch sizes must be >= 1", field="train.batch_size")


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    eval_acc: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class TrainingReport:
    epochs: list = field(default_factory=list)

    @property
    def losses(self):
        return [r.train_loss for r in self.epochs]

    @property
    def final(self) -> EpochRecord:
        return self.epochs[-1]


def evaluate(network, dataset: Dataset, meta: DatasetMeta | None = None,
             batch_size: int = 256) -> tuple:
    """Top-1 accuracy and mean (unsmoothed) cross-entropy in eval mode.

    Parameters, BN statistics and training random streams are untouched.
    """
    was_training = network.training
    network.eval()
    correct, total, loss_sum = 0, 0, 0.0
    try:
        with no_grad():
            for x, y in batches(dataset, batch_size, shuffle=False, meta=meta):
                logits = network(x)
                loss = label_smoothed_ce(logits, y, 0.0)
                correct += int((logits.data.argmax(axis=1) == y).sum())
                loss_sum += float(loss.data) * len(y)
                total += len(y)
    finally:
        network.train(was_training)
    return correct / total, loss_sum / total


def _validate_step(network, loss):
    if np.isfinite(loss.data).all():
        return
    check_finite(network.named_parameters())
    raise NonFiniteError("loss")


def train_loop(network, train_data: Dataset, cfg: TrainConfig, eval_data: Dataset | None = None,
               meta: DatasetMeta | None = None, on_epoch=None) -> TrainingReport:
    """Run ``cfg.epochs`` epochs of shuffled mini-batch SGD.

    The learning rate follows :func:`cosine_lr`, stepped once per epoch.
    ``on_epoch(record)`` is called after every epoch (e.g. to stream the
    report). Raises :class:`NonFiniteError` naming the first non-finite
    parameter (or ``loss``) if the loss stops being finite.
    """
    if len(train_data) == 0:
        raise DataError("training set is empty")
    rng = Rng(cfg.seed, (7,))
    shuffle_rng, aug_rng = rng.child(0), rng.child(1)
    opt = SGD(network.parameters(), cfg.lr, cfg.momentum, cfg.weight_decay)
    aug = None
    if cfg.augment.enabled:
        aug = lambda img: augment(img, cfg.augment, aug_rng)  # noqa: E731
    report = TrainingReport()
    network.train()
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr, cfg.lr_min)
        loss_sum, correct, seen = 0.0, 0, 0
        for x, y in batches(train_data, cfg.batch_size, shuffle=True, rng=shuffle_rng,
                            meta=meta, augment=aug):
            opt.zero_grad()
            logits = network(x)
            loss = label_smoothed_ce(logits, y, cfg.label_smoothing)
            _validate_step(network, loss)
            backward(loss)
            opt.step(lr)
            loss_sum += float(loss.data) * len(y)
            correct += int((logits.data.argmax(axis=1) == y).sum())
            seen += len(y)
        rec = EpochRecord(epoch, lr, loss_sum / seen, correct / seen)
        if eval_data is not None:
            rec.eval_acc, _ = evaluate(network, eval_data, meta, cfg.eval_batch_size)
        report.epochs.append(rec)
        logger.info("epoch %d lr %.5f loss %.4f acc %.4f eval %s", epoch, lr, rec.train_loss,
                    rec.train_acc, rec.eval_acc)
        if on_epoch is not None:
            on_epoch(rec)
    return report
