"""Contrastive context-aware learning for face anti-spoofing on synthetic features."""

from .catalog import Catalog, SynthConfig, build_protocol_split, load_catalog, save_catalog, synth_catalog
from .model import CCLNet, ModelConfig, build_model, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, train

__all__ = [
    "Catalog",
    "SynthConfig",
    "build_protocol_split",
    "load_catalog",
    "save_catalog",
    "synth_catalog",
    "CCLNet",
    "ModelConfig",
    "build_model",
    "load_checkpoint",
    "save_checkpoint",
    "TrainConfig",
    "train",
]

__version__ = "0.1.0"
