"""Object-centric control: gripper goals from desired part motions.

A command says where the root should go and what the joint angles should
become; everything else stays put. Targets are planned incrementally from
the *current* part poses (delta composition about the current joint axes),
not by re-running forward kinematics from the reference placement, so the
two routes check each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .articulated import ArticulatedObject
from .errors import InvalidArgumentError
from .geometry import Pose, signed_angle_about_axis
from .grasp import GraspState

POSE_CHANGE_TOL = 1e-9
ANGLE_CHANGE_TOL = 1e-9


@dataclass(frozen=True)
class OcaoCommand:
    """Desired object configuration change.

    `target_root_pose` of None keeps the root where it is; joints absent
    from `target_joint_angles` keep their current angle. Angles are radians.
    """

    target_root_pose: Pose | None = None
    target_joint_angles: dict[int, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"target_root_pose": (self.target_root_pose.to_json()
                                     if self.target_root_pose else None),
                "target_joint_angles": {str(k): float(v)
                                        for k, v in self.target_joint_angles.items()}}

    @staticmethod
    def from_json(d: dict) -> "OcaoCommand":
        pose = d.get("target_root_pose")
        return OcaoCommand(Pose.from_json(pose) if pose else None,
                           {int(k): float(v)
                            for k, v in d.get("target_joint_angles", {}).items()})


@dataclass(frozen=True)
class GripperGoalSet:
    """World-frame goal pose per gripper, with the part each one holds."""

    goals: dict[int, Pose]
    held_parts: dict[int, int]

    def __len__(self) -> int:
        return len(self.goals)


@dataclass(frozen=True)
class MotionPlan:
    """Part-level targets for one command, plus the angle bookkeeping."""

    part_targets: dict[int, Pose]
    current_angles: dict[int, float]
    target_angles: dict[int, float]
    moved_parts: tuple[int, ...]


def recover_joint_angles(obj: ArticulatedObject,
                         poses: dict[int, Pose]) -> dict[int, float]:
    """Read joint angles back off the current part poses.

    For child j under parent i, the residual rotation after removing the
    parent's delta from the child's delta is a pure turn about the joint
    axis; its signed angle offsets the reference value.
    """
    angles: dict[int, float] = {}
    for child, (parent, joint) in obj.joints.items():
        delta_parent = poses[parent].compose(obj.part(parent).reference_pose.invert())
        delta_child = poses[child].compose(obj.part(child).reference_pose.invert())
        residual = delta_parent.invert().compose(delta_child)
        angles[child] = joint.reference_angle + signed_angle_about_axis(
            residual.rotation, joint.direction_vec())
    return angles


def current_joint_axis(obj: ArticulatedObject, child: int,
                       poses: dict[int, Pose]) -> tuple[np.ndarray, np.ndarray]:
    """World-frame (anchor, direction) of a joint in the current placement.

    The axis rides with the parent: transform the reference axis by the
    parent's delta from its reference pose.
    """
    parent, joint = obj.joints[child]
    delta = poses[parent].compose(obj.part(parent).reference_pose.invert())
    return delta.apply(joint.anchor_vec()), delta.apply_direction(joint.direction_vec())


def root_gripper_goal(current_root: Pose, target_root: Pose, gripper: Pose) -> Pose:
    """Carry a pose rigidly along with the root's motion.

    Applies the root's pose change: goal = target o current^-1 o gripper.
    """
    return target_root.compose(current_root.invert()).compose(gripper)


def child_goal(parent_current: Pose, parent_target: Pose, follower: Pose,
               anchor: np.ndarray, direction: np.ndarray, delta_angle: float) -> Pose:
    """Move a follower pose for a joint swing plus the parent's change.

    `follower` may be the child part's pose or an attached gripper's pose;
    anchor/direction are the joint axis in the *current* world placement.
    First swing about the axis by `delta_angle`, then apply the parent's
    pose change.
    """
    swing = Pose.from_anchored_rotation(anchor, direction, delta_angle)
    parent_change = parent_target.compose(parent_current.invert())
    return parent_change.compose(swing).compose(follower)


def plan_targets(obj: ArticulatedObject, current_poses: dict[int, Pose],
                 command: OcaoCommand) -> MotionPlan:
    """Target pose for every part under a command, from current poses only.

    Walks the tree top-down composing deltas about current-placement joint
    axes. Commanded angles must lie within joint limits, and commanded
    joints must exist.
    """
    for child, angle in command.target_joint_angles.items():
        if child not in obj.joints:
            raise InvalidArgumentError(f"part {child} has no joint")
        lo, hi = obj.joint(child).limits
        if not lo - 1e-9 <= angle <= hi + 1e-9:
            raise InvalidArgumentError(
                f"target angle {angle:.4f} for part {child} outside limits"
                f" [{lo:.4f}, {hi:.4f}]")

    current_angles = recover_joint_angles(obj, current_poses)
    target_angles = dict(current_angles)
    target_angles.update({c: float(a) for c, a in command.target_joint_angles.items()})

    root = obj.root_id
    root_target = command.target_root_pose or current_poses[root]
    targets: dict[int, Pose] = {root: root_target}
    moved: list[int] = []
    if not root_target.almost_equal(current_poses[root], POSE_CHANGE_TOL):
        moved.append(root)

    for child in obj.topological_order():
        if child == root:
            continue
        parent, _ = obj.joints[child]
        anchor, direction = current_joint_axis(obj, child, current_poses)
        delta_angle = target_angles[child] - current_angles[child]
        targets[child] = child_goal(current_poses[parent], targets[parent],
                                    current_poses[child], anchor, direction,
                                    delta_angle)
        if abs(delta_angle) > ANGLE_CHANGE_TOL:
            moved.append(child)

    return MotionPlan(targets, current_angles, target_angles, tuple(moved))


def gripper_goals(plan: MotionPlan, grasp_state: GraspState) -> GripperGoalSet:
    """Goal pose for every attached gripper: ride with the held part.

    The grasp constraint fixes the gripper in the part frame, so the goal
    is the part's target composed with the frozen relative pose.
    """
    goals: dict[int, Pose] = {}
    parts: dict[int, int] = {}
    for gripper_id, (part_id, rel) in grasp_state.attachments.items():
        goals[gripper_id] = plan.part_targets[part_id].compose(rel)
        parts[gripper_id] = part_id
    return GripperGoalSet(goals, parts)
