"""Conditional variational model of per-point contact probability maps."""

from .config import NetworkConfig, SaLevel, default_config, small_config, tiny_config
from .params import ParamStore, init_params, load_params, save_params
from .network import (
    GaussianLatent,
    LossBreakdown,
    Structure,
    build_structure,
    declare_params,
    decode,
    elbo_loss,
    encode_geometry,
    encode_posterior,
    grad,
    kl_divergence,
    model_forward,
    reparameterize,
)
from .train import TrainConfig, build_dataset, train
from .sampling import decode_map, sample_contacts

__all__ = [
    "NetworkConfig", "SaLevel", "default_config", "small_config", "tiny_config",
    "ParamStore", "init_params", "load_params", "save_params",
    "GaussianLatent", "LossBreakdown", "Structure", "build_structure",
    "declare_params", "decode", "elbo_loss", "encode_geometry",
    "encode_posterior", "grad", "kl_divergence", "model_forward",
    "reparameterize", "TrainConfig", "build_dataset", "train",
    "decode_map", "sample_contacts",
]
