"""Tiny CNN feature-point descriptor: data synthesis, triplet training,
patch verification/retrieval evaluation and 8-bit output quantization."""

from .net import (
    DescriptorBounds,
    DescriptorNet,
    build_descriptor_net,
    count_operations,
    count_parameters,
    dequantize,
    forward,
    load_model,
    output_bounds,
    quantize,
    save_model,
)
from .patches import PatchDataset, extract_patches, load_dataset, save_dataset
from .trainer import TrainConfig, TrainStats, sample_batch, train, triplet_loss

__version__ = "0.1.0"
