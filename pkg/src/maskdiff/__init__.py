"""Toy masked diffusion language models: training, mask-agnostic fine-tuning and evaluation."""

from .decoding import DecodeConfig, decode_single_step, iterative_unmask
from .errors import (
    ConfigError,
    ContextOverflowError,
    ContractError,
    DataError,
    MaskDiffError,
    NumericError,
)
from .estimator import MaskAgnosticFineTuner, MaskedDiffusionLM, Tokenizer
from .maloss import FinetuneParams, LossConfig, finetune, ma_loss
from .model import ModelConfig, init_model, load_checkpoint, pretrain_loss, save_checkpoint
from .train import PretrainParams, pretrain

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContextOverflowError",
    "ContractError",
    "DataError",
    "DecodeConfig",
    "FinetuneParams",
    "LossConfig",
    "MaskAgnosticFineTuner",
    "MaskDiffError",
    "MaskedDiffusionLM",
    "ModelConfig",
    "NumericError",
    "PretrainParams",
    "Tokenizer",
    "decode_single_step",
    "finetune",
    "init_model",
    "iterative_unmask",
    "load_checkpoint",
    "ma_loss",
    "pretrain",
    "pretrain_loss",
    "save_checkpoint",
]
