"""Mini-batch training with a hand-rolled Adam optimizer."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..articulated import observe_scene
from ..errors import InvalidArgumentError, TrainingDivergedError
from ..explore import LabelPool, render_label, snap_contact
from ..rng import derive_seed, generator
from .config import NetworkConfig
from .network import (
    LossBreakdown,
    Structure,
    build_structure,
    declare_params,
    grad,
)
from .params import ParamStore, init_params


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    kl_warmup_steps: int = 0
    divergence_cap: float = 1e6
    sample_size: int = 1024
    kernel: float = 0.005
    observe_seed: int = 0
    seed: int = 0
    curve_path: str | None = None

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise InvalidArgumentError("steps and batch size must be positive")
        if self.learning_rate < 0:
            raise InvalidArgumentError("learning rate must be non-negative")


@dataclass(frozen=True)
class Sample:
    """One training pair: a cloud (with precomputed structure) and the
    contact map one gripper should reproduce on it."""

    structure: Structure
    rgb: np.ndarray
    target: np.ndarray


def build_dataset(pool: LabelPool, net_config: NetworkConfig,
                  sample_size: int = 1024, kernel: float = 0.005,
                  observe_seed: int = 0) -> list[Sample]:
    """One sample per (pool entry, gripper): rendered splat labels on the
    observed scene cloud. Observations and grouping structures are cached
    per distinct scene configuration."""
    if len(pool) == 0:
        raise InvalidArgumentError("cannot build a dataset from an empty pool")
    observed_cache: dict[str, tuple] = {}
    samples: list[Sample] = []
    for entry in pool.entries:
        key = json.dumps({"root": entry.scene.root_pose.to_json(),
                          "angles": sorted(entry.scene.joint_angles.items())})
        if key not in observed_cache:
            observed = observe_scene(entry.scene, sample_size, observe_seed)
            structure = build_structure(observed.cloud.positions, net_config)
            observed_cache[key] = (observed, structure,
                                   entry.scene.part_poses())
        observed, structure, poses = observed_cache[key]
        rgb = observed.cloud.rgb()
        for contact in entry.contacts:
            points, _ = snap_contact(observed, contact, poses)
            target = render_label(observed.cloud, points, kernel)
            samples.append(Sample(structure, rgb, target))
    return samples


def _mean_loss(losses: list[LossBreakdown]) -> LossBreakdown:
    recon = float(np.mean([l.recon for l in losses]))
    latent = float(np.mean([l.latent for l in losses]))
    return LossBreakdown(recon + latent, recon, latent)


def write_curve(curve: list[LossBreakdown], path: str) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,recon,latent,total\n")
        for i, loss in enumerate(curve):
            fh.write(f"{i},{loss.recon!r},{loss.latent!r},{loss.total!r}\n")


def train(pool: LabelPool, net_config: NetworkConfig,
          config: TrainConfig = TrainConfig(),
          dataset: list[Sample] | None = None
          ) -> tuple[ParamStore, list[LossBreakdown]]:
    """Adam on the ELBO; returns final parameters and the per-step curve.

    Bit-exact deterministic for a given (pool, configs): every random
    draw comes from one stream derived from the training seed. The KL
    term's gradient can be warmed up linearly over kl_warmup_steps; the
    reported losses are always unweighted.
    """
    if dataset is None:
        dataset = build_dataset(pool, net_config, config.sample_size,
                                config.kernel, config.observe_seed)
    store = declare_params(net_config)
    init_params(store, derive_seed(config.seed, "init"))
    rng = generator(config.seed, "train")

    m = store.zeros_like()
    v = store.zeros_like()
    curve: list[LossBreakdown] = []
    d = net_config.latent_dim
    for step in range(config.steps):
        idx = rng.integers(0, len(dataset), config.batch_size)
        if config.kl_warmup_steps > 0:
            kl_weight = min(1.0, (step + 1) / config.kl_warmup_steps)
        else:
            kl_weight = 1.0
        total_grad = store.zeros_like()
        losses = []
        for i in idx:
            sample = dataset[int(i)]
            eps = rng.standard_normal(d)
            loss, g, _ = grad(store, net_config, sample.structure,
                              sample.rgb, sample.target, eps, kl_weight)
            total_grad += g
            losses.append(loss)
        mean = _mean_loss(losses)
        curve.append(mean)
        if not np.isfinite(mean.total) or mean.total > config.divergence_cap:
            raise TrainingDivergedError(
                f"loss {mean.total} at step {step} exceeds the cap")
        total_grad /= config.batch_size

        t = step + 1
        m = config.beta1 * m + (1.0 - config.beta1) * total_grad
        v = config.beta2 * v + (1.0 - config.beta2) * total_grad * total_grad
        m_hat = m / (1.0 - config.beta1 ** t)
        v_hat = v / (1.0 - config.beta2 ** t)
        store.values -= config.learning_rate * m_hat / (np.sqrt(v_hat)
                                                        + config.adam_eps)
        store.check_finite()

    if config.curve_path:
        write_curve(curve, config.curve_path)
    return store, curve
