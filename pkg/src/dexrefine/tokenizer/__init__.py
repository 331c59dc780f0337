"""Cross-morphology motion tokenizer: coder nets, shared codebook, training."""

from .codebook import (
    MASK_TOKEN,
    Codebook,
    PoseChunkSpec,
    make_chunks,
    mask_ratio_schedule,
    mask_sequence,
    quantize,
    quantize_many,
    reconstruct,
    refresh_cold_codes,
    translate,
)
from .nets import CoderNet
from .training import TokenizerSpec, TrainConfig, TrainingDiverged, reconstruction_mse, train_new_morphology, train_reference

__all__ = [
    "MASK_TOKEN",
    "Codebook",
    "CoderNet",
    "PoseChunkSpec",
    "TokenizerSpec",
    "TrainConfig",
    "TrainingDiverged",
    "make_chunks",
    "mask_ratio_schedule",
    "mask_sequence",
    "quantize",
    "quantize_many",
    "reconstruct",
    "reconstruction_mse",
    "refresh_cold_codes",
    "train_new_morphology",
    "train_reference",
    "translate",
]
