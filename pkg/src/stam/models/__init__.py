from .archs import (
    MODEL_CLASSES,
    DaRnnModel,
    EncDecModel,
    LstmAttModel,
    StamLiteModel,
    StamModel,
    build_model,
)
from .base import AttentionRecord, Forecaster
from .config import ARCHS, ATTENTION_ARCHS, ModelConfig
from .costs import flop_estimate, param_count
from .weights import load_weights, read_header, save_weights

__all__ = [
    "ARCHS",
    "ATTENTION_ARCHS",
    "AttentionRecord",
    "DaRnnModel",
    "EncDecModel",
    "Forecaster",
    "LstmAttModel",
    "MODEL_CLASSES",
    "ModelConfig",
    "StamLiteModel",
    "StamModel",
    "build_model",
    "flop_estimate",
    "load_weights",
    "param_count",
    "read_header",
    "save_weights",
]
