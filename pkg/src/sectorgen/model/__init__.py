"""Desk-scale generative sector model: network, trainer and checkpoints."""

from sectorgen.model.checkpoint import Checkpoint, CheckpointError, ModelRegistry, load_backbone, save_backbone
from sectorgen.model.net import Backbone, ModelDims, Paradigm, SectorModel
from sectorgen.model.trainer import (
    Example,
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    gradient_check,
    lr_at,
    pretrain,
    train,
)
from sectorgen.model.vocab import Vocabulary

__all__ = [
    "Backbone", "Checkpoint", "CheckpointError", "Example", "ModelDims", "ModelRegistry", "Paradigm",
    "SectorModel", "TrainConfig", "TrainResult", "TrainingDiverged", "Vocabulary", "gradient_check",
    "load_backbone", "lr_at", "pretrain", "save_backbone", "train",
]
