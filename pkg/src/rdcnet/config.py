"""Flat ``key = value`` run configuration.

Grammar (one entry per line)::

    line    := blank | comment | entry
    comment := '#' anything
    entry   := key '=' value [ '#' anything ]
    key     := name ('.' name)*          e.g. mask.strategy

Keys are grouped by dotted prefix (``arch.``, ``mask.``, ``train.``,
``aug.``, ``data.``, ``norm.``). Lists are comma separated, booleans are
``true``/``false``. Unknown keys, duplicate keys and bad values raise
:class:`ConfigError` carrying the line number and key. Every key has a
default; :func:`format_config` writes all of them, so its output (the run
manifest) reproduces a run exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import ConfigError
from .masking import STRATEGIES, MaskConfig
from .network import ABLATIONS, BLOCK_TYPES, CE_PLACEMENTS, STEMS, ArchConfig, ablation
from .training import AugmentConfig, TrainConfig

DATASETS = ("synthetic", "cifar10", "cifar100", "svhn")
DATASET_CLASSES = {"cifar10": 10, "cifar100": 100, "svhn": 10}


def _bool(s):
    low = s.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected true/false, got {s!r}")


def _ints(s):
    return tuple(int(v) for v in s.split(",") if v.strip())


def _floats(s):
    return tuple(float(v) for v in s.split(",") if v.strip())


def _pair(s):
    v = _floats(s)
    if len(v) != 2:
        raise ValueError(f"expected two comma-separated numbers, got {s!r}")
    return v


def _placements(s):
    s = s.strip()
    if s.upper() in CE_PLACEMENTS:
        return CE_PLACEMENTS[s.upper()]
    if s.lower() in ("none", ""):
        return ()
    return _ints(s)


def _stats(s):
    if s.strip().lower() == "auto":
        return None
    v = _floats(s)
    if len(v) != 3:
        raise ValueError("expected three per-channel values or 'auto'")
    return v


def _choice(options):
    def parse(s):
        if s not in options:
            raise ValueError(f"unknown value {s!r}; expected one of {', '.join(options)}")
        return s
    return parse


def _u64(s):
    v = int(s)
    if not 0 <= v < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return v


# key -> (parser, default text)
SCHEMA = {
    "seed": (_u64, "0"),
    "output": (str, "runs/rdcnet"),
    "dataset": (_choice(DATASETS), "synthetic"),
    "data.dir": (str, ""),
    "data.n": (int, "320"),
    "data.classes": (int, "2"),
    "data.extent": (int, "32"),
    "data.train_limit": (int, "0"),
    "data.eval_limit": (int, "0"),
    "norm.mean": (_stats, "auto"),
    "norm.std": (_stats, "auto"),
    "arch.variant": (_choice(ABLATIONS), "rdcnet"),
    "arch.stem": (_choice(STEMS), "small_input"),
    "arch.blocks": (_ints, "3,4,6,3"),
    "arch.widths": (_ints, "64,128,256,512"),
    "arch.block": (_choice(BLOCK_TYPES), "mrdc"),
    "arch.alpha": (float, "0.5"),
    "arch.alpha_mode": (_choice(("learnable", "frozen")), "learnable"),
    "arch.ce": (_placements, "4"),
    "arch.reduction": (int, "16"),
    "mask.strategy": (_choice(STRATEGIES), "c_k_mask"),
    "mask.tau": (float, "0.9"),
    "train.epochs": (int, "200"),
    "train.batch_size": (int, "128"),
    "train.eval_batch_size": (int, "256"),
    "train.lr": (float, "0.1"),
    "train.lr_min": (float, "0.0"),
    "train.momentum": (float, "0.9"),
    "train.weight_decay": (float, "0.0005"),
    "train.label_smoothing": (float, "0.1"),
    "aug.hflip": (_bool, "true"),
    "aug.pad_crop": (_bool, "true"),
    "aug.pad": (int, "4"),
    "aug.erase_p": (float, "0.5"),
    "aug.erase_area": (_pair, "0.02,0.33"),
    "aug.erase_ratio": (_pair, "0.3,3.3"),
}


@dataclass
class RunConfig:
    arch: ArchConfig
    train: TrainConfig
    dataset: str
    data_dir: str
    data_n: int
    data_classes: int
    data_extent: int
    train_limit: int
    eval_limit: int
    norm_mean: tuple | None
    norm_std: tuple | None
    output: str
    seed: int
    variant: str
    values: dict  # parsed value per key, for formatting

    def with_norm(self, mean, std) -> "RunConfig":
        values = dict(self.values, **{"norm.mean": tuple(mean), "norm.std": tuple(std)})
        return replace(self, norm_mean=tuple(mean), norm_std=tuple(std), values=values)


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse config text; ``overrides`` (key -> text) win over file entries."""
    raw, lines = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError("unknown key", field=key, line=lineno)
        if key in raw:
            raise ConfigError("duplicate key", field=key, line=lineno)
        raw[key], lines[key] = value, lineno
    for key, value in (overrides or {}).items():
        if key not in SCHEMA:
            raise ConfigError("unknown key", field=key)
        raw[key] = str(value)
        lines.pop(key, None)

    values = {}
    for key, (parse, default) in SCHEMA.items():
        text_value = raw.get(key, default)
        try:
            values[key] = parse(text_value)
        except ValueError as e:
            raise ConfigError(str(e), field=key, line=lines.get(key)) from None
    try:
        return _build(values)
    except ConfigError as e:
        if e.field is not None and e.line is None and e.field in lines:
            raise ConfigError(str(e).split(": ", 1)[-1], field=e.field,
                              line=lines[e.field]) from None
        raise


def _build(v: dict) -> RunConfig:
    dataset = v["dataset"]
    classes = v["data.classes"] if dataset == "synthetic" else DATASET_CLASSES[dataset]
    if dataset != "synthetic" and not v["data.dir"]:
        raise ConfigError(f"dataset {dataset} needs a data directory", field="data.dir")
    mask = MaskConfig(v["mask.strategy"], v["mask.tau"])
    arch = ArchConfig(
        stem=v["arch.stem"], blocks=v["arch.blocks"], widths=v["arch.widths"],
        block=v["arch.block"], mask=mask, alpha=v["arch.alpha"],
        alpha_learnable=v["arch.alpha_mode"] == "learnable", ce=v["arch.ce"],
        reduction=v["arch.reduction"], classes=classes)
    arch = ablation(arch, v["arch.variant"])
    aug = AugmentConfig(hflip=v["aug.hflip"], pad_crop=v["aug.pad_crop"], pad=v["aug.pad"],
                        erase_p=v["aug.erase_p"], erase_area=v["aug.erase_area"],
                        erase_ratio=v["aug.erase_ratio"])
    train = TrainConfig(
        epochs=v["train.epochs"], batch_size=v["train.batch_size"], lr=v["train.lr"],
        lr_min=v["train.lr_min"], momentum=v["train.momentum"],
        weight_decay=v["train.weight_decay"], label_smoothing=v["train.label_smoothing"],
        eval_batch_size=v["train.eval_batch_size"], seed=v["seed"], augment=aug)
    if (v["norm.mean"] is None) != (v["norm.std"] is None):
        raise ConfigError("norm.mean and norm.std must both be set or both 'auto'",
                          field="norm.std")
    return RunConfig(arch, train, dataset, v["data.dir"], v["data.n"], classes,
                     v["data.extent"], v["data.train_limit"], v["data.eval_limit"],
                     v["norm.mean"], v["norm.std"], v["output"], v["seed"],
                     v["arch.variant"], v)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    with open(path) as f:
        return parse_config(f.read(), overrides)


def _format_value(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(x) for x in value) if value else "none"
    return repr(value) if isinstance(value, float) else str(value)


def format_config(run: RunConfig) -> str:
    """Every key with its resolved value, in schema order."""
    lines = ["# resolved run configuration"]
    for key in SCHEMA:
        lines.append(f"{key} = {_format_value(run.values[key])}")
    return "\n".join(lines) + "\n"
