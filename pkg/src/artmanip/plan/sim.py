"""Quasi-static kinematic simulator for multi-arm object manipulation.

State is part poses, joint angles, arm configurations, gripper poses,
and the grasp attachment map. Object motion is executed exactly: part
and gripper poses are set from interpolated kinematics each waypoint
(so the grasp constraint holds to machine precision) while the arms
follow their grippers with damped-least-squares IK and everything is
collision checked. Arm motion between grasps runs through planned joint
paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..articulated import (
    ArticulatedObject,
    ObservedScene,
    SceneConfig,
    StaticGeometry,
    forward_configuration,
    observe_scene,
)
from ..errors import GraspConflictError, InvalidArgumentError
from ..geometry import Pose, interpolate_pose
from ..grasp import (
    DEFAULT_MAX_OPENING,
    GraspState,
    GripperContact,
    antipodal_valid,
    contacts_to_gripper_pose,
)
from ..ocao import OcaoCommand, plan_targets, recover_joint_angles
from .arm import ArmModel, ik_solve, pose_error, standard_arm_ik_seeds
from .collision import (
    Capsule,
    Obb,
    capsule_batch,
    obb_batch,
    obb_from_box,
    points_obb_clearance,
    segments_obbs_clearance,
    segments_segments_clearance,
)
from .rrt import JointPath

STAGE_IK = "ik"
STAGE_PLAN = "plan"
STAGE_GRASP = "grasp"
STAGE_MOVE = "move"
STAGE_COLLISION = "collision"
STAGE_NONE = "none"

FAILURE_STAGES = (STAGE_IK, STAGE_PLAN, STAGE_GRASP, STAGE_MOVE,
                  STAGE_COLLISION, STAGE_NONE)


@dataclass(frozen=True)
class SimConfig:
    waypoints: int = 25
    arm_static_margin: float = 0.005
    arm_arm_margin: float = 0.005
    arm_part_margin: float = 0.0
    part_penetration_tol: float = 1e-6
    track_pos_tol: float = 3e-3
    track_rot_tol: float = 3e-2
    track_ik_iters: int = 150
    grasp_snap_tol: float = 0.03
    max_opening: float = DEFAULT_MAX_OPENING
    constraint_tol: float = 1e-9
    friction: float = 0.65
    seed: int = 0
    keep_trace: bool = False


@dataclass(frozen=True)
class MoveReport:
    """Outcome of one object-motion command."""

    success: bool
    stage: str
    detail: str = ""
    max_constraint_drift: float = 0.0
    waypoints_done: int = 0


@dataclass(frozen=True)
class GraspReport:
    success: bool
    stage: str
    detail: str = ""


def _pose_drift(a: Pose, b: Pose) -> float:
    return max(float(np.max(np.abs(a.rotation - b.rotation))),
               float(np.max(np.abs(a.translation - b.translation))))


class Simulator:
    """Mutable scene: articulated object, static geometry, arms, grasps."""

    def __init__(self, scene: SceneConfig, arms: tuple[ArmModel, ...] = (),
                 config: SimConfig = SimConfig(),
                 home: dict[str, np.ndarray] | None = None):
        self.obj: ArticulatedObject = scene.obj
        self.statics: tuple[StaticGeometry, ...] = scene.statics
        self.config = config
        self.root_pose: Pose = scene.root_pose
        self.joint_angles: dict[int, float] = dict(scene.joint_angles)
        self.part_poses: dict[int, Pose] = scene.part_poses()
        self.arms: dict[str, ArmModel] = {a.name: a for a in arms}
        if len(self.arms) != len(arms):
            raise InvalidArgumentError("arm names must be unique")
        self.arm_q: dict[str, np.ndarray] = {}
        self.gripper_poses: dict[str, Pose] = {}
        for arm in arms:
            q = np.asarray((home or {}).get(arm.name,
                                            np.zeros(arm.dof)), dtype=float)
            self.arm_q[arm.name] = arm.clamp(q)
            self.gripper_poses[arm.name] = arm.fk(self.arm_q[arm.name])
        self.grasp = GraspState()
        self._static_obbs = tuple(obb_from_box(b, Pose.identity())
                                  for s in self.statics for b in s.boxes)
        # Version counters invalidate the collision-geometry caches; they
        # are bumped at every part-pose / arm-configuration assignment.
        self._parts_version = 0
        self._arms_version = 0
        self._part_obb_cache: tuple | None = None
        self._other_caps_cache: tuple | None = None
        self.trace: list[dict] = []

    # ------------------------------------------------------------------
    # Queries
    # ------------------------------------------------------------------

    def scene_config(self) -> SceneConfig:
        return SceneConfig(self.obj, self.root_pose, dict(self.joint_angles),
                           self.statics)

    def observe(self, sample_size: int = 1024, seed: int = 0) -> ObservedScene:
        return observe_scene(self.scene_config(), sample_size, seed)

    def part_obbs(self, exclude: frozenset[int] = frozenset()) -> list[Obb]:
        obbs = []
        for part in self.obj.parts:
            if part.part_id in exclude:
                continue
            pose = self.part_poses[part.part_id]
            obbs.extend(obb_from_box(b, pose) for b in part.boxes)
        return obbs

    def arm_capsules(self, name: str, q=None) -> list[Capsule]:
        return self.arms[name].link_capsules(self.arm_q[name] if q is None else q)

    def arm_collision_free(self, name: str, q, extra_excluded_parts=()) -> bool:
        """Whether an arm configuration keeps its margins to everything.

        The part held by this arm's gripper (and any explicitly excluded
        part, e.g. the one about to be grasped) is ignored; other parts,
        static geometry, and the other arms are obstacles.
        """
        cfg = self.config
        exclude = set(extra_excluded_parts)
        held = self.grasp.part_held_by(name)
        if held is not None:
            exclude.add(held)
        p0, p1, radii = capsule_batch(self.arm_capsules(name, q))
        obstacles = self._obstacle_arrays(frozenset(exclude))
        if obstacles is not None:
            arrays, margins = obstacles
            clearances = segments_obbs_clearance(p0, p1, radii, *arrays,
                                                 iters=48)
            if (clearances < margins).any():
                return False
        other = self._other_arm_arrays(name)
        if other is not None:
            if segments_segments_clearance(
                    p0, p1, radii, *other).min() < cfg.arm_arm_margin:
                return False
        return True

    def _obstacle_arrays(self, exclude: frozenset[int]):
        """Static and part boxes stacked with their per-box arm margins."""
        key = (self._parts_version, exclude)
        cached = self._part_obb_cache
        if cached is not None and cached[0] == key:
            return cached[1]
        obbs = list(self._static_obbs) + self.part_obbs(exclude)
        margins = np.array([self.config.arm_static_margin] * len(self._static_obbs)
                           + [self.config.arm_part_margin]
                           * (len(obbs) - len(self._static_obbs)))
        arrays = (obb_batch(obbs), margins) if obbs else None
        self._part_obb_cache = (key, arrays)
        return arrays

    def _other_arm_arrays(self, name: str):
        key = (self._arms_version, name)
        cached = self._other_caps_cache
        if cached is not None and cached[0] == key:
            return cached[1]
        caps = [c for other in self.arms if other != name
                for c in self.arm_capsules(other)]
        arrays = capsule_batch(caps) if caps else None
        self._other_caps_cache = (key, arrays)
        return arrays

    def part_placement_free(self, part_id: int, pose: Pose) -> bool:
        """Whether a part pose keeps its sampled surface out of static geometry."""
        if not self._static_obbs:
            return True
        points = pose.apply(self.obj.part(part_id).cloud.positions)
        worst = min(points_obb_clearance(points, obb) for obb in self._static_obbs)
        return worst > -self.config.part_penetration_tol

    def grasp_constraint_drift(self) -> float:
        """Largest deviation of any held part's gripper from its frozen
        relative pose."""
        worst = 0.0
        for name, (part_id, rel) in self.grasp.attachments.items():
            actual = self.part_poses[part_id].invert().compose(self.gripper_poses[name])
            worst = max(worst, _pose_drift(actual, rel))
        return worst

    # ------------------------------------------------------------------
    # Arm motion
    # ------------------------------------------------------------------

    def set_arm_configuration(self, name: str, q) -> None:
        if self.grasp.holds(name):
            raise GraspConflictError(
                f"arm {name} is holding a part; move it through object commands")
        self.arm_q[name] = np.asarray(q, dtype=float)
        self._arms_version += 1
        self.gripper_poses[name] = self.arms[name].fk(self.arm_q[name])

    def follow_path(self, name: str, path: JointPath,
                    extra_excluded_parts=()) -> MoveReport:
        """Step an unattached arm along a joint path, collision checked."""
        for i, wp in enumerate(path.waypoints):
            q = np.asarray(wp, dtype=float)
            if not self.arm_collision_free(name, q, extra_excluded_parts):
                return MoveReport(False, STAGE_COLLISION,
                                  f"arm {name} collides at waypoint {i}",
                                  waypoints_done=i)
            self.set_arm_configuration(name, q)
            if self.config.keep_trace:
                self.trace.append({"event": "arm", "arm": name,
                                   "q": [float(v) for v in q]})
        return MoveReport(True, STAGE_NONE, waypoints_done=len(path.waypoints))

    # ------------------------------------------------------------------
    # Grasping
    # ------------------------------------------------------------------

    def grasp_goal_pose(self, contact: GripperContact) -> Pose:
        return contacts_to_gripper_pose(contact, self.part_poses[contact.part_id])

    def try_grasp(self, name: str, contact: GripperContact) -> GraspReport:
        """Attach a gripper to a part at a contact pair.

        The contact must be antipodal under the configured friction, fit
        inside the gripper opening, and the arm must already be posed at
        the grasp frame (within the snap tolerance); the gripper is then
        snapped exactly onto it and the relative pose frozen.
        """
        cfg = self.config
        f1, f2 = contact.fingers
        width = float(np.linalg.norm(f2.position_vec() - f1.position_vec()))
        if width > cfg.max_opening:
            return GraspReport(False, STAGE_GRASP,
                               f"contact span {width:.3f} exceeds opening")
        if not antipodal_valid(f1, f2, cfg.friction):
            return GraspReport(False, STAGE_GRASP, "contacts not antipodal")
        goal = self.grasp_goal_pose(contact)
        _, pos_err, rot_err = pose_error(self.gripper_poses[name], goal)
        if pos_err > cfg.grasp_snap_tol or rot_err > 10 * cfg.grasp_snap_tol:
            return GraspReport(False, STAGE_GRASP,
                               f"gripper {name} too far from grasp frame"
                               f" ({pos_err:.4f} m, {rot_err:.4f} rad)")
        try:
            self.grasp = self.grasp.attach(name, contact.part_id, goal,
                                           self.part_poses[contact.part_id])
        except GraspConflictError as exc:
            return GraspReport(False, STAGE_GRASP, str(exc))
        self.gripper_poses[name] = goal
        if self.config.keep_trace:
            self.trace.append({"event": "grasp", "arm": name,
                               "part": contact.part_id})
        return GraspReport(True, STAGE_NONE)

    def release(self, name: str) -> None:
        self.grasp = self.grasp.detach(name)
        if name in self.arms:
            self.gripper_poses[name] = self.arms[name].fk(self.arm_q[name])

    def attach_virtual_gripper(self, name: str, part_id: int,
                               gripper_pose: Pose) -> None:
        """Attach a disembodied gripper (no arm), for kinematics-only runs."""
        if name in self.arms:
            raise InvalidArgumentError(f"{name} is a real arm")
        self.grasp = self.grasp.attach(name, part_id, gripper_pose,
                                       self.part_poses[part_id])
        self.gripper_poses[name] = gripper_pose

    # ------------------------------------------------------------------
    # Object motion
    # ------------------------------------------------------------------

    def track_object_motion(self, command: OcaoCommand) -> MoveReport:
        """Execute a configuration change on the held object.

        Interpolates root pose and joint angles to the target over the
        configured number of waypoints. Each waypoint sets part poses by
        forward kinematics and gripper poses exactly from the frozen
        grasp transforms, IK-tracks every attached arm, and collision
        checks arms and moved parts. Every moved part must be held.
        """
        cfg = self.config
        plan = plan_targets(self.obj, self.part_poses, command)
        for pid in plan.moved_parts:
            if self.grasp.gripper_holding(pid) is None:
                raise GraspConflictError(f"moved part {pid} is not held")

        root = self.obj.root_id
        root0, root1 = self.part_poses[root], plan.part_targets[root]
        angles0, angles1 = plan.current_angles, plan.target_angles
        # Parts that move in the world, including ones riding on an
        # ancestor; only actively driven parts need a gripper, but all
        # of them get placement checks.
        world_moved = [pid for pid, tgt in plan.part_targets.items()
                       if not tgt.almost_equal(self.part_poses[pid])]
        max_drift = 0.0

        for k in range(1, cfg.waypoints + 1):
            f = k / cfg.waypoints
            if k == cfg.waypoints:
                poses_f = dict(plan.part_targets)
            else:
                angles_f = {j: angles0[j] + f * (angles1[j] - angles0[j])
                            for j in angles0}
                poses_f = forward_configuration(
                    self.obj, interpolate_pose(root0, root1, f), angles_f)

            self.part_poses = poses_f
            self._parts_version += 1
            for name, (pid, rel) in self.grasp.attachments.items():
                self.gripper_poses[name] = poses_f[pid].compose(rel)
            max_drift = max(max_drift, self.grasp_constraint_drift())

            for pid in world_moved:
                if not self.part_placement_free(pid, poses_f[pid]):
                    return MoveReport(False, STAGE_COLLISION,
                                      f"part {pid} hits static geometry",
                                      max_drift, k)

            for name in self.grasp.attachments:
                if name not in self.arms:
                    continue
                goal = self.gripper_poses[name]
                result = ik_solve(self.arms[name], goal, q0=self.arm_q[name],
                                  extra_seeds=standard_arm_ik_seeds(
                                      self.arms[name], goal),
                                  pos_tol=cfg.track_pos_tol,
                                  rot_tol=cfg.track_rot_tol,
                                  max_iters=cfg.track_ik_iters,
                                  seed=cfg.seed)
                if not result.success:
                    return MoveReport(False, STAGE_MOVE,
                                      f"arm {name} cannot track its gripper"
                                      f" (pos {result.pos_err:.4f},"
                                      f" rot {result.rot_err:.4f})",
                                      max_drift, k)
                self.arm_q[name] = result.q
                self._arms_version += 1

            for name in self.arms:
                if not self.arm_collision_free(name, self.arm_q[name]):
                    return MoveReport(False, STAGE_COLLISION,
                                      f"arm {name} collides during motion",
                                      max_drift, k)
            if cfg.keep_trace:
                self.trace.append({"event": "object", "fraction": f})

        self.root_pose = root1
        self.joint_angles = dict(angles1)
        return MoveReport(True, STAGE_NONE, "", max_drift, cfg.waypoints)

    def refresh_joint_angles(self) -> None:
        """Re-derive stored root pose and joint angles from part poses."""
        self.joint_angles = recover_joint_angles(self.obj, self.part_poses)
        self.root_pose = self.part_poses[self.obj.root_id]

    def save_trace(self, path: str) -> None:
        import json
        with open(path, "w") as fh:
            for event in self.trace:
                fh.write(json.dumps(event) + "\n")
