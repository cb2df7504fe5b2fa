"""Convolutional VAE used as the crossover operator."""

from .model import (
    TrainReport,
    VaeConfig,
    VaeTrainingError,
    decode,
    encode,
    init_params,
    kl_divergence,
    load_params,
    loss_and_grad,
    params_checksum,
    save_params,
    train_vae,
)
from .sample import generate_offspring

__all__ = [
    "TrainReport", "VaeConfig", "VaeTrainingError", "decode", "encode", "generate_offspring",
    "init_params", "kl_divergence", "load_params", "loss_and_grad", "params_checksum", "save_params",
    "train_vae",
]
