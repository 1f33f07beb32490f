"""Contacts, antipodal friction-cone validity, and grasp attachment.

A gripper has two fingers; a grasp is a pair of finger contacts on the
same rigid part. Contact positions and normals are stored in the part's
local frame so they stay valid as the part moves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GraspConflictError, InvalidArgumentError
from .geometry import Pose

DEFAULT_FRICTION = 0.65
DEFAULT_MAX_OPENING = 0.08
DEFAULT_STANDOFF = 0.05

_DOWN = np.array([0.0, 0.0, -1.0])
_FALLBACK = np.array([-1.0, 0.0, 0.0])


@dataclass(frozen=True)
class FingerContact:
    """One finger's contact: part-local position, outward unit normal."""

    part_id: int
    point_index: int
    position: tuple[float, float, float]
    normal: tuple[float, float, float]

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if abs(np.linalg.norm(n) - 1.0) > 1e-6:
            raise InvalidArgumentError("contact normal must be unit length")
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "normal", tuple(float(v) for v in self.normal))

    def position_vec(self) -> np.ndarray:
        return np.asarray(self.position, dtype=float)

    def normal_vec(self) -> np.ndarray:
        return np.asarray(self.normal, dtype=float)

    def to_json(self) -> dict:
        return {"part": self.part_id, "index": self.point_index,
                "position": list(self.position), "normal": list(self.normal)}

    @staticmethod
    def from_json(d: dict) -> "FingerContact":
        return FingerContact(int(d["part"]), int(d["index"]),
                             tuple(d["position"]), tuple(d["normal"]))


@dataclass(frozen=True)
class GripperContact:
    """Both finger contacts of one gripper; both must lie on one part."""

    fingers: tuple[FingerContact, FingerContact]

    def __post_init__(self):
        if self.fingers[0].part_id != self.fingers[1].part_id:
            raise InvalidArgumentError("both finger contacts must lie on the same part")

    @property
    def part_id(self) -> int:
        return self.fingers[0].part_id

    def to_json(self) -> list:
        return [f.to_json() for f in self.fingers]

    @staticmethod
    def from_json(d: list) -> "GripperContact":
        return GripperContact((FingerContact.from_json(d[0]), FingerContact.from_json(d[1])))


# Ordered per-gripper contact assignment for a whole manipulation.
ContactTuple = tuple[GripperContact, ...]


@dataclass(frozen=True)
class AffordanceRegion:
    """Point indices of one part where grasping is permitted."""

    part_id: int
    indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))

    def __len__(self) -> int:
        return len(self.indices)


def antipodal_valid(c1: FingerContact, c2: FingerContact, mu: float = DEFAULT_FRICTION) -> bool:
    """Whether the contact line lies inside both friction cones.

    The pyramidal cone is approximated by its circumscribed circular cone
    of half-angle atan(mu). Positions/normals of both contacts must be
    expressed in a common frame; since both lie on one rigid part, the
    part-local frame works.
    """
    if mu <= 0:
        raise InvalidArgumentError("friction coefficient must be positive")
    p1, p2 = c1.position_vec(), c2.position_vec()
    line = p2 - p1
    dist = np.linalg.norm(line)
    if dist < 1e-12:
        raise InvalidArgumentError("coincident contacts")
    line = line / dist
    half_angle = np.arctan(mu)

    def inside(direction, normal):
        cos_angle = np.clip(direction @ (-normal), -1.0, 1.0)
        return np.arccos(cos_angle) <= half_angle + 1e-12

    return bool(inside(line, c1.normal_vec()) and inside(-line, c2.normal_vec()))


def contacts_to_gripper_pose(contact: GripperContact, part_pose: Pose,
                             standoff: float = DEFAULT_STANDOFF) -> Pose:
    """Build a world-frame gripper goal pose from a finger contact pair.

    Frame convention: x = closing axis (finger 1 toward finger 2),
    z = approach axis pointing at the object, origin backed off from the
    contact midpoint by `standoff` along the approach. The approach is the
    unit vector orthogonal to the closing axis closest to world -z
    (top-down preference); if the closing axis is vertical the reference
    falls back to world -x.
    """
    p1 = part_pose.apply(contact.fingers[0].position_vec())
    p2 = part_pose.apply(contact.fingers[1].position_vec())
    closing = p2 - p1
    width = np.linalg.norm(closing)
    if width < 1e-12:
        raise InvalidArgumentError("degenerate contact pair")
    closing = closing / width

    reference = _DOWN
    if abs(abs(closing @ _DOWN) - 1.0) < 1e-6:
        reference = _FALLBACK
    approach = reference - (reference @ closing) * closing
    approach = approach / np.linalg.norm(approach)
    side = np.cross(approach, closing)

    rotation = np.column_stack([closing, side, approach])
    midpoint = (p1 + p2) / 2.0
    return Pose(rotation, midpoint - standoff * approach)


@dataclass(frozen=True)
class GraspState:
    """Immutable map of which gripper holds which part, and the relative
    pose (part-frame gripper pose) frozen at attach time."""

    attachments: dict[int, tuple[int, Pose]] = field(default_factory=dict)

    def holds(self, gripper_id: int) -> bool:
        return gripper_id in self.attachments

    def part_held_by(self, gripper_id: int) -> int | None:
        entry = self.attachments.get(gripper_id)
        return entry[0] if entry else None

    def gripper_holding(self, part_id: int) -> int | None:
        for g, (p, _) in self.attachments.items():
            if p == part_id:
                return g
        return None

    def relative_pose(self, gripper_id: int) -> Pose:
        return self.attachments[gripper_id][1]

    def attach(self, gripper_id: int, part_id: int,
               gripper_pose: Pose, part_pose: Pose) -> "GraspState":
        if gripper_id in self.attachments:
            raise GraspConflictError(f"gripper {gripper_id} already holds a part")
        if self.gripper_holding(part_id) is not None:
            raise GraspConflictError(f"part {part_id} already held")
        rel = part_pose.invert().compose(gripper_pose)
        new = dict(self.attachments)
        new[gripper_id] = (part_id, rel)
        return GraspState(new)

    def detach(self, gripper_id: int) -> "GraspState":
        new = dict(self.attachments)
        new.pop(gripper_id, None)
        return GraspState(new)


def attach(state: GraspState, gripper_id: int, part_id: int,
           gripper_pose: Pose, part_pose: Pose) -> GraspState:
    return state.attach(gripper_id, part_id, gripper_pose, part_pose)
