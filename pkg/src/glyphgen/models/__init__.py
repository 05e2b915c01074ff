"""The three generative architectures behind a single construction point."""

from .base import COORD_SCALE, GenerativeModel, StrokeStep, drawing_to_steps, split_offset_head
from .baseline import BaselineLSTM, decode_sequence, encode_drawing
from .config import MODEL_KINDS, ModelConfig
from .full_ns import FullNeuroSymbolic
from .hlstm import HierarchicalLSTM

_CLASSES = {
    "full_ns": FullNeuroSymbolic,
    "hlstm": HierarchicalLSTM,
    "baseline": BaselineLSTM,
}


def build_model(config: ModelConfig, seed: int = 0) -> GenerativeModel:
    return _CLASSES[config.kind](config, seed=seed)


__all__ = [
    "COORD_SCALE",
    "MODEL_KINDS",
    "BaselineLSTM",
    "FullNeuroSymbolic",
    "GenerativeModel",
    "HierarchicalLSTM",
    "ModelConfig",
    "StrokeStep",
    "build_model",
    "decode_sequence",
    "drawing_to_steps",
    "encode_drawing",
    "split_offset_head",
]
