"""Contact proposals from a trained model."""

from __future__ import annotations

import numpy as np

from ..articulated import STATIC_PART_ID, ArticulatedObject, ObservedScene
from ..errors import InvalidArgumentError
from ..grasp import FingerContact, GripperContact
from .config import NetworkConfig
from .network import Structure, build_structure, decode, encode_geometry
from .params import ParamStore

MODE_PRIOR = "prior"
MODE_SWEEP = "latent-sweep"
MODE_TOP1 = "top1"


def decode_map(store: ParamStore, config: NetworkConfig, structure: Structure,
               rgb: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Contact probability map for a given latent code (no posterior pass)."""
    hs, _ = encode_geometry(store, config, structure, rgb)
    probs, _ = decode(store, config, structure, z, hs, rgb)
    return probs


def _argmax_lowest(values: np.ndarray) -> int:
    return int(np.argmax(values))


def sample_contacts(observed: ObservedScene, obj: ArticulatedObject,
                    store: ParamStore, config: NetworkConfig,
                    allowed, mode: str, *, z_value: float | None = None,
                    rng: np.random.Generator | None = None,
                    structure: Structure | None = None) -> GripperContact:
    """Propose one gripper's finger contacts from the decoded map.

    The map is decoded for a latent code chosen by mode: `prior` draws
    z ~ N(0, I) from the supplied rng, `latent-sweep` puts z_value in the
    first latent coordinate and zeros elsewhere, and `top1` decodes the
    deterministic z = 0 baseline. Both finger channels are masked to the
    allowed observed-cloud indices; the first finger is the channel-0
    argmax (ties to the lowest index) and the second finger the channel-1
    argmax restricted to the same part, excluding the first point when an
    alternative exists.
    """
    allowed = np.unique(np.asarray(list(allowed), dtype=int))
    allowed = allowed[observed.part_ids[allowed] != STATIC_PART_ID]
    if allowed.size == 0:
        raise InvalidArgumentError("affordance mask selects no object points")

    d = config.latent_dim
    if mode == MODE_PRIOR:
        if rng is None:
            raise InvalidArgumentError("prior sampling needs an rng")
        z = rng.standard_normal(d)
    elif mode == MODE_SWEEP:
        if z_value is None:
            raise InvalidArgumentError("latent-sweep needs a z value")
        z = np.zeros(d)
        z[0] = float(z_value)
    elif mode == MODE_TOP1:
        z = np.zeros(d)
    else:
        raise InvalidArgumentError(f"unknown sampling mode {mode!r}")

    if structure is None:
        structure = build_structure(observed.cloud.positions, config)
    probs = decode_map(store, config, structure, observed.cloud.rgb(), z)

    masked = np.full(len(observed), -1.0)
    masked[allowed] = probs[allowed, 0]
    first = _argmax_lowest(masked)
    part_id = int(observed.part_ids[first])

    same_part = allowed[observed.part_ids[allowed] == part_id]
    candidates = same_part[same_part != first]
    if candidates.size == 0:
        candidates = same_part
    masked = np.full(len(observed), -1.0)
    masked[candidates] = probs[candidates, 1]
    second = _argmax_lowest(masked)

    fingers = []
    for idx in (first, second):
        src = int(observed.source_indices[idx])
        part = obj.part(int(observed.part_ids[idx]))
        fingers.append(FingerContact(part.part_id, src,
                                     tuple(part.cloud.positions[src]),
                                     tuple(part.normals[src])))
    return GripperContact((fingers[0], fingers[1]))
