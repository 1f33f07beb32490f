"""Contact-label generation by random exploration around demonstrations.

Starting from a small set of human-authored contact tuples, exploration
repeatedly picks a known-good tuple, nudges every finger contact to a
nearby point inside the same part's affordance region, and replays a
full grasp-and-move episode. Tuples that survive the episode join the
pool; the pool is the training set for the contact-map model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import partial

import numpy as np

from .articulated import ArticulatedObject, SceneConfig, StaticGeometry
from .errors import ExplorationStalledError, InvalidArgumentError, PoolParseError
from .geometry import FeaturedPointCloud, Pose
from .grasp import AffordanceRegion, FingerContact, GripperContact
from .rng import generator

POOL_FORMAT = "artmanip-pool"
POOL_VERSION = 1
DEFAULT_RADIUS = 0.01
STALL_LIMIT = 10_000


@dataclass(frozen=True)
class PoolEntry:
    """One verified contact tuple: which grippers touch where, on which
    scene, and in what order the grasps were established."""

    contacts: tuple[GripperContact, ...]
    scene: SceneConfig
    grasp_order: tuple[int, ...]
    seed: int | None = None

    def __post_init__(self):
        if not self.contacts:
            raise InvalidArgumentError("an entry needs at least one gripper contact")
        if sorted(self.grasp_order) != list(range(len(self.contacts))):
            raise InvalidArgumentError(
                "grasp_order must be a permutation of the contact indices")

    def contact_key(self) -> tuple:
        """Exact contact identity: (part, finger indices) per gripper."""
        return tuple((c.part_id, c.fingers[0].point_index, c.fingers[1].point_index)
                     for c in self.contacts)

    def to_json(self) -> dict:
        return {"contacts": [c.to_json() for c in self.contacts],
                "root_pose": self.scene.root_pose.to_json(),
                "joint_angles": {str(k): float(v)
                                 for k, v in sorted(self.scene.joint_angles.items())},
                "grasp_order": list(self.grasp_order),
                "seed": self.seed,
                "episode_result": {"success": True, "stage": "none"}}

    def __eq__(self, other) -> bool:
        if not isinstance(other, PoolEntry):
            return NotImplemented
        return (self.to_json() == other.to_json()
                and self.scene.obj.content_hash() == other.scene.obj.content_hash())


# Human-authored entries share the verified-entry shape.
Demonstration = PoolEntry


@dataclass(frozen=True)
class LabelPool:
    """Verified contact tuples, in insertion order, up to a capacity."""

    entries: tuple[PoolEntry, ...]
    capacity: int

    def __post_init__(self):
        if self.capacity < 0:
            raise InvalidArgumentError("capacity must be non-negative")
        if len(self.entries) > self.capacity:
            raise InvalidArgumentError("pool holds more entries than its capacity")

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabelPool):
            return NotImplemented
        return (self.capacity == other.capacity
                and len(self.entries) == len(other.entries)
                and all(a == b for a, b in zip(self.entries, other.entries)))

    def object(self) -> ArticulatedObject | None:
        return self.entries[0].scene.obj if self.entries else None


def _unique_entries(entries: list[PoolEntry]) -> list[PoolEntry]:
    seen, unique = set(), []
    for entry in entries:
        key = entry.contact_key()
        if key not in seen:
            seen.add(key)
            unique.append(entry)
    return unique


def _perturb_gripper(contact: GripperContact, obj: ArticulatedObject,
                     regions: dict[int, AffordanceRegion], radius: float,
                     rng: np.random.Generator) -> GripperContact:
    fingers = []
    for finger in contact.fingers:
        region = regions.get(finger.part_id)
        if region is None:
            raise InvalidArgumentError(
                f"part {finger.part_id} has no affordance region")
        part = obj.part(finger.part_id)
        pos = part.cloud.positions
        dist = np.linalg.norm(pos[list(region.indices)] - finger.position_vec(),
                              axis=1)
        candidates = [idx for idx, d in zip(region.indices, dist) if d <= radius]
        idx = candidates[int(rng.integers(len(candidates)))]
        fingers.append(FingerContact(finger.part_id, int(idx),
                                     tuple(pos[idx]), tuple(part.normals[idx])))
    return GripperContact((fingers[0], fingers[1]))


def explore(demos, obj: ArticulatedObject, affordances, n: int,
            r: float = DEFAULT_RADIUS, seed: int = 0, execute=None,
            stall_limit: int = STALL_LIMIT, scene_fn=None) -> LabelPool:
    """Grow a label pool to `n` entries by perturb-and-verify exploration.

    Each attempt derives its own RNG stream from (seed, attempt index),
    picks uniformly among entries with distinct contact indices, perturbs
    every finger within `r` meters inside its part's affordance region,
    and accepts the tuple if `execute(entry, rng)` reports success.
    `execute` defaults to a full grasp-and-move episode in the standard
    environment, and `scene_fn(rng) -> SceneConfig` to that environment's
    randomized initial scenes (each attempt draws its own, before the
    contact perturbations; without a scene_fn candidates inherit the
    parent entry's scene). Raises ExplorationStalledError after
    `stall_limit` consecutive failures.
    """
    entries = list(demos)
    if not entries:
        raise InvalidArgumentError("exploration needs at least one demonstration")
    if n < len(entries):
        raise InvalidArgumentError("target size is below the demonstration count")
    if r < 0:
        raise InvalidArgumentError("perturbation radius must be non-negative")
    if len(entries) == n:
        return LabelPool(tuple(entries), n)

    if execute is None:
        from .harness.env import env_for_object, sample_scene
        from .harness.episodes import pool_executor
        execute = pool_executor(obj, affordances)
        if scene_fn is None:
            env = env_for_object(obj, affordances)
            scene_fn = partial(sample_scene, env)

    regions = {reg.part_id: reg for reg in affordances}
    failures = 0
    attempt = 0
    while len(entries) < n:
        if failures >= stall_limit:
            raise ExplorationStalledError(
                f"{failures} consecutive failures after {attempt} attempts"
                f" with {len(entries)}/{n} entries")
        rng = generator(seed, "attempt", attempt)
        unique = _unique_entries(entries)
        parent = unique[int(rng.integers(len(unique)))]
        scene = scene_fn(rng) if scene_fn is not None else parent.scene
        contacts = tuple(_perturb_gripper(c, obj, regions, r, rng)
                         for c in parent.contacts)
        candidate = PoolEntry(contacts, scene, parent.grasp_order,
                              seed=attempt)
        attempt += 1
        if execute(candidate, rng):
            entries.append(candidate)
            failures = 0
        else:
            failures += 1
    return LabelPool(tuple(entries), n)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_pool(pool: LabelPool, path: str) -> None:
    """Write a pool as JSON lines: a header, then one entry per line."""
    obj = pool.object()
    header = {"format": POOL_FORMAT, "version": POOL_VERSION,
              "capacity": pool.capacity,
              "object_hash": obj.content_hash() if obj else None,
              "object": obj.to_json() if obj else None,
              "statics": ([s.to_json() for s in pool.entries[0].scene.statics]
                          if pool.entries else [])}
    if obj is not None:
        for entry in pool.entries:
            if entry.scene.obj.content_hash() != header["object_hash"]:
                raise InvalidArgumentError("pool entries mix different objects")
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for entry in pool.entries:
            fh.write(json.dumps(entry.to_json()) + "\n")


def load_pool(path: str) -> LabelPool:
    """Read a pool written by save_pool; malformed records carry their index."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise PoolParseError("missing header line", 0)
    try:
        header = json.loads(lines[0])
        if header.get("format") != POOL_FORMAT:
            raise PoolParseError(f"unknown format {header.get('format')!r}", 0)
        if header.get("version") != POOL_VERSION:
            raise PoolParseError(f"unsupported version {header.get('version')!r}", 0)
        capacity = int(header["capacity"])
        obj = (ArticulatedObject.from_json(header["object"])
               if header.get("object") else None)
        statics = tuple(StaticGeometry.from_json(s)
                        for s in header.get("statics", []))
    except PoolParseError:
        raise
    except Exception as exc:
        raise PoolParseError(f"bad header: {exc}", 0) from exc
    if obj is not None and obj.content_hash() != header.get("object_hash"):
        raise PoolParseError("object hash does not match its description", 0)

    entries = []
    for record, line in enumerate(lines[1:], start=1):
        try:
            d = json.loads(line)
            if not d["episode_result"]["success"]:
                raise PoolParseError("stored entry marked unsuccessful", record)
            contacts = tuple(GripperContact.from_json(c) for c in d["contacts"])
            angles = {int(k): float(v) for k, v in d["joint_angles"].items()}
            scene = SceneConfig(obj, Pose.from_json(d["root_pose"]), angles, statics)
            entries.append(PoolEntry(contacts, scene,
                                     tuple(int(i) for i in d["grasp_order"]),
                                     seed=d.get("seed")))
        except PoolParseError:
            raise
        except Exception as exc:
            raise PoolParseError(f"bad entry: {exc}", record) from exc
    return LabelPool(tuple(entries), capacity)


# ---------------------------------------------------------------------------
# Label rendering
# ---------------------------------------------------------------------------


def render_label(cloud: FeaturedPointCloud, contact_points,
                 kernel: float = 0.005) -> np.ndarray:
    """Per-point contact probability channels for one gripper.

    Each finger contact point must coincide with a cloud point; its
    channel is the Gaussian splat exp(-|x - c|^2 / (2 kernel^2)), which
    peaks at 1 on the contact point and falls to e^(-1/2) at one kernel
    radius. kernel = 0 degenerates to a one-hot channel.
    """
    points = np.asarray(contact_points, dtype=float).reshape(-1, 3)
    if kernel < 0:
        raise InvalidArgumentError("kernel radius must be non-negative")
    channels = np.zeros((len(cloud), points.shape[0]))
    for f, c in enumerate(points):
        d2 = np.sum((cloud.positions - c) ** 2, axis=1)
        nearest = float(d2.min())
        if nearest > 1e-12:
            raise InvalidArgumentError(
                f"contact point {c.tolist()} does not lie on the cloud")
        if kernel == 0.0:
            channels[:, f] = (d2 <= 1e-12).astype(float)
        else:
            channels[:, f] = np.exp(-d2 / (2.0 * kernel * kernel))
    return np.clip(channels, 0.0, 1.0)


def snap_contact(observed, contact: GripperContact,
                 part_poses: dict[int, Pose]) -> tuple[np.ndarray, tuple[int, int]]:
    """World positions and observed-cloud indices for a gripper contact.

    Prefers the exact observed copy of the contact's source point; if
    downsampling dropped it, snaps to the nearest observed point from
    the same part.
    """
    points, indices = [], []
    for finger in contact.fingers:
        world = part_poses[finger.part_id].apply(finger.position_vec())
        idx = observed.observed_index(finger.part_id, finger.point_index)
        if idx is None:
            part_points = observed.indices_for_part(finger.part_id)
            if part_points.size == 0:
                raise InvalidArgumentError(
                    f"part {finger.part_id} is absent from the observation")
            d = np.linalg.norm(observed.cloud.positions[part_points] - world, axis=1)
            idx = int(part_points[int(np.argmin(d))])
        points.append(observed.cloud.positions[idx])
        indices.append(int(idx))
    return np.asarray(points), (indices[0], indices[1])
