"""Standard experiment environments: objects, tables, and arm layouts.

Arms stand on a circle around the table center, one per object part,
facing inward: two arms across the table from each other, a third (for
three-part objects) across from the object's long axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..articulated import (
    ArticulatedObject,
    SceneConfig,
    StaticGeometry,
    make_pliers,
    make_table,
    make_three_stick,
)
from ..errors import ExplorationStalledError, InvalidArgumentError
from ..explore import Demonstration
from ..geometry import Pose
from ..grasp import AffordanceRegion, FingerContact, GripperContact
from ..ocao import OcaoCommand
from ..plan.arm import ArmModel, make_standard_arm
from ..plan.sim import SimConfig, Simulator
from ..rng import generator

ARM_RADIUS = 0.45
ARM_HEIGHT = 0.05
OBJECT_NAMES = ("pliers", "three-stick")

# Base placement angles around the table, by arm count.
_LAYOUTS = {
    1: (math.pi / 2,),
    2: (math.pi / 2, -math.pi / 2),
    3: (math.pi / 2, -math.pi / 2, math.pi),
}


@dataclass(frozen=True)
class GoalRanges:
    """Uniform sampling ranges for randomized goal configurations.

    Root-pose deltas: xy shift, upward lift, yaw about the root origin.
    Joint targets move by at most `joint_delta` from the current angle
    and keep `joint_margin` away from the limits.
    """

    xy: float = 0.05
    lift: float = 0.04
    yaw: float = math.pi / 6
    joint_delta: float = 0.3
    joint_margin: float = 0.05

    def to_json(self) -> dict:
        return {"xy": self.xy, "lift": self.lift, "yaw": self.yaw,
                "joint_delta": self.joint_delta,
                "joint_margin": self.joint_margin}

    @staticmethod
    def from_json(d: dict) -> "GoalRanges":
        return GoalRanges(**{k: float(v) for k, v in d.items()})


def facing_base(radius: float, angle: float, height: float = ARM_HEIGHT) -> Pose:
    """Arm base on a circle of `radius` at `angle`, yawed to face the center."""
    x, y = radius * math.cos(angle), radius * math.sin(angle)
    yaw = math.atan2(-y, -x)
    c, s = math.cos(yaw), math.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return Pose(rot, np.array([x, y, height]))


@dataclass(frozen=True)
class Environment:
    """One experiment setup: an object with affordances, arms, and statics."""

    obj: ArticulatedObject
    regions: tuple[AffordanceRegion, ...]
    arms: tuple[ArmModel, ...]
    statics: tuple[StaticGeometry, ...]
    sim_config: SimConfig = SimConfig()
    sample_size: int = 512
    observe_seed: int = 0
    resample_budget: int = 10
    goal_ranges: GoalRanges = field(default_factory=GoalRanges)

    def __post_init__(self):
        by_part = {r.part_id for r in self.regions}
        for part in self.obj.parts:
            if part.part_id not in by_part:
                raise InvalidArgumentError(
                    f"part {part.part_id} has no affordance region")

    def region(self, part_id: int) -> AffordanceRegion:
        for reg in self.regions:
            if reg.part_id == part_id:
                return reg
        raise InvalidArgumentError(f"no affordance region for part {part_id}")

    def reference_scene(self, extra_statics: tuple[StaticGeometry, ...] = ()
                        ) -> SceneConfig:
        return SceneConfig(self.obj, self.obj.reference_root_pose(),
                           self.obj.reference_angles(),
                           self.statics + tuple(extra_statics))

    def make_sim(self, scene: SceneConfig | None = None,
                 extra_statics: tuple[StaticGeometry, ...] = ()) -> Simulator:
        if scene is None:
            scene = self.reference_scene(extra_statics)
        elif extra_statics:
            scene = SceneConfig(scene.obj, scene.root_pose,
                                dict(scene.joint_angles),
                                tuple(scene.statics) + tuple(extra_statics))
        return Simulator(scene, arms=self.arms, config=self.sim_config)

    def with_goal_ranges(self, ranges: GoalRanges) -> "Environment":
        return replace(self, goal_ranges=ranges)


def _make_arms(n: int) -> tuple[ArmModel, ...]:
    if n not in _LAYOUTS:
        raise InvalidArgumentError(f"no arm layout for {n} arms")
    return tuple(make_standard_arm(f"arm{i}", facing_base(ARM_RADIUS, angle))
                 for i, angle in enumerate(_LAYOUTS[n]))


def make_env(object_name: str, **overrides) -> Environment:
    """Standard environment for a named procedural object."""
    if object_name == "pliers":
        obj, regions = make_pliers()
    elif object_name == "three-stick":
        obj, regions = make_three_stick()
    else:
        raise InvalidArgumentError(
            f"unknown object {object_name!r}; choose from {OBJECT_NAMES}")
    return env_for_object(obj, regions, **overrides)


def env_for_object(obj: ArticulatedObject, regions, **overrides) -> Environment:
    """Environment with one arm per part, placed by the standard layout."""
    regions = tuple(regions)
    env = Environment(obj, regions, _make_arms(len(obj.parts)),
                      statics=(make_table(),))
    return replace(env, **overrides) if overrides else env


def sample_scene(env: Environment, rng: np.random.Generator) -> SceneConfig:
    """Randomized initial scene: root pose shifted and spun in the plane,
    each joint uniform within its margin-clipped limits.

    Draw order is fixed (root shift, yaw, then joints in ascending id
    order) so a given rng stream always yields the same scene. The root
    keeps its reference height; objects start resting on the table.
    """
    g = env.goal_ranges
    ref_root = env.obj.reference_root_pose()
    dx, dy = rng.uniform(-g.xy, g.xy, 2)
    dyaw = rng.uniform(-g.yaw, g.yaw)
    c, s = math.cos(dyaw), math.sin(dyaw)
    spin = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    root = Pose(spin @ ref_root.rotation,
                ref_root.translation + np.array([dx, dy, 0.0]))
    angles = {}
    for jid in sorted(env.obj.joints):
        lo, hi = env.obj.joint(jid).limits
        angles[jid] = float(rng.uniform(lo + g.joint_margin,
                                        hi - g.joint_margin))
    return SceneConfig(env.obj, root, angles, env.statics)


def sample_goal(env: Environment, scene: SceneConfig,
                rng: np.random.Generator) -> OcaoCommand:
    """Random goal configuration within the environment's ranges.

    Draw order is fixed (root shift, lift, yaw, then joints in ascending
    id order) so a given rng stream always yields the same goal.
    """
    g = env.goal_ranges
    dx, dy = rng.uniform(-g.xy, g.xy, 2)
    dz = rng.uniform(0.0, g.lift)
    dyaw = rng.uniform(-g.yaw, g.yaw)
    c, s = math.cos(dyaw), math.sin(dyaw)
    spin = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    root = scene.root_pose
    target_root = Pose(spin @ root.rotation,
                       root.translation + np.array([dx, dy, dz]))

    angles = {}
    current = dict(scene.joint_angles)
    for jid in sorted(env.obj.joints):
        lo, hi = env.obj.joint(jid).limits
        a = current[jid] + rng.uniform(-g.joint_delta, g.joint_delta)
        angles[jid] = float(np.clip(a, lo + g.joint_margin, hi - g.joint_margin))
    return OcaoCommand(target_root, angles)


def _joint_anchors_local(obj, part) -> list[np.ndarray]:
    """Anchors of every joint touching this part, in the part's frame."""
    inv = part.reference_pose.invert()
    anchors = []
    if part.part_id != obj.root_id:
        anchors.append(inv.apply(obj.joint(part.part_id).anchor_vec()))
    for child in obj.part_ids:
        if child != obj.root_id and obj.parent_of(child) == part.part_id:
            anchors.append(inv.apply(obj.joint(child).anchor_vec()))
    return anchors


def _demo_antipodal_pair(obj, part, region: AffordanceRegion):
    """A pair of opposing y-normal points, matched in x/z, clear of hinges.

    Grasping near a joint anchor parks the wrist over the neighboring
    part, so the expert pair maximizes distance to the nearest anchor;
    the outermost x breaks ties and covers parts without joints.
    """
    pos, nrm = part.cloud.positions, part.normals
    anchors = _joint_anchors_local(obj, part)
    plus = [i for i in region.indices if nrm[i][1] > 0.9]
    minus = [i for i in region.indices if nrm[i][1] < -0.9]
    pair, best = None, None
    for i in plus:
        for j in minus:
            if (abs(pos[i][0] - pos[j][0]) >= 1e-9
                    or abs(pos[i][2] - pos[j][2]) >= 1e-9):
                continue
            mid = (pos[i] + pos[j]) / 2.0
            clearance = (min(float(np.linalg.norm(mid - a)) for a in anchors)
                         if anchors else 0.0)
            key = (clearance, float(pos[i][0]))
            if best is None or key > best:
                pair, best = (i, j), key
    if pair is None:
        raise InvalidArgumentError(
            f"part {part.part_id} has no opposing contact pair in its region")
    return pair


def make_demonstrations(env: Environment,
                        seed: int = 0,
                        candidates: int = 20) -> tuple[Demonstration, ...]:
    """Two expert entries in opposite grasp orders, verified to replay.

    Contacts are part-local (the widest antipodal pair clear of joint
    anchors), so the same pairs serve any scene.  Candidate scenes are
    drawn from the seed until one is found where both grasp orders
    replay successfully — a stored entry must replay, and randomized
    scenes can put waypoints outside an arm's reachable workspace.  The
    search is deterministic; raises ExplorationStalledError if the
    candidate budget runs out.
    """
    from .episodes import run_entry  # this module is imported by episodes

    rng = generator(seed, "demo-scene")
    contacts = []
    for part in env.obj.parts:
        i, j = _demo_antipodal_pair(env.obj, part, env.region(part.part_id))
        pos, nrm = part.cloud.positions, part.normals
        contacts.append(GripperContact((
            FingerContact(part.part_id, i, tuple(pos[i]), tuple(nrm[i])),
            FingerContact(part.part_id, j, tuple(pos[j]), tuple(nrm[j])))))
    n = len(contacts)
    orders = (tuple(range(n)), tuple(reversed(range(n))))
    for cand in range(candidates):
        scene = sample_scene(env, rng)
        entries = tuple(Demonstration(tuple(contacts), scene, order, seed=cand)
                        for order in orders)
        if all(run_entry(env, entry).success for entry in entries):
            return entries
    raise ExplorationStalledError(
        f"no demonstration scene for '{env.obj.name}' replayed in both"
        f" grasp orders within {candidates} candidates")
