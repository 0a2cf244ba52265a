"""RDCNet image classifiers on a small numpy autodiff engine."""

from .blocks import CE, FGFE, MRDC, MRDCBlock
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, format_config, load_config, parse_config
from .data import Dataset, DatasetMeta, LabeledImage, synth_dataset
from .errors import (ConfigError, ContractError, DataError, NonFiniteError, ParseError,
                     RDCNetError, ShapeError)
from .masking import MaskConfig
from .network import ArchConfig, RDCNet, ablation, build_network
from .rng import Rng
from .tensor import Tensor, backward, no_grad
from .training import AugmentConfig, TrainConfig, evaluate, train_loop

__version__ = "0.1.0"

__all__ = [
    "CE", "FGFE", "MRDC", "MRDCBlock", "load_checkpoint", "save_checkpoint", "RunConfig",
    "format_config", "load_config", "parse_config", "Dataset", "DatasetMeta", "LabeledImage",
    "synth_dataset", "ConfigError", "ContractError", "DataError", "NonFiniteError",
    "ParseError", "RDCNetError", "ShapeError", "MaskConfig", "ArchConfig", "RDCNet",
    "ablation", "build_network", "Rng", "Tensor", "backward", "no_grad", "AugmentConfig",
    "TrainConfig", "evaluate", "train_loop",
]
