"""Serial revolute arms: forward kinematics, Jacobian, damped IK.

An arm is a chain of revolute joints. Each joint contributes a fixed
translation in the preceding frame followed by a rotation of the joint
angle about a fixed local axis; a final fixed offset reaches the gripper
frame. Link geometry for collision checking is one capsule per segment
between consecutive joint origins (plus the gripper offset).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgumentError
from ..geometry import Pose, rotation_about_axis, rotation_to_axis_angle
from ..rng import generator
from .collision import Capsule

MIN_IK_JOINTS = 6
POS_TOL = 1e-3
ROT_TOL = 1e-2
# One radian of orientation error counts like 0.3 m of position error in
# the least-squares objective.
ROT_WEIGHT = 0.3
# Give up on a start after this many consecutive non-improving iterations
# (the damping has grown so large the step is numerically dead by then).
REJECT_PATIENCE = 8
# Iteration slice each start gets before the next reseed.
SEGMENT_BUDGET = 25


@dataclass(frozen=True)
class ArmModel:
    """Fixed-base serial chain of revolute joints.

    `offsets[i]` is the translation from frame i-1 to joint i (in frame
    i-1), `axes[i]` the unit rotation axis of joint i in its own frame.
    """

    name: str
    base_pose: Pose
    offsets: tuple[tuple[float, float, float], ...]
    axes: tuple[tuple[float, float, float], ...]
    limits: tuple[tuple[float, float], ...]
    ee_offset: tuple[float, float, float]
    link_radius: float = 0.035

    def __post_init__(self):
        if not (len(self.offsets) == len(self.axes) == len(self.limits)):
            raise InvalidArgumentError("offsets, axes, and limits must align")
        if len(self.offsets) == 0:
            raise InvalidArgumentError("arm needs at least one joint")
        for a in self.axes:
            if abs(np.linalg.norm(np.asarray(a, dtype=float)) - 1.0) > 1e-9:
                raise InvalidArgumentError("joint axes must be unit length")
        for lo, hi in self.limits:
            if not lo < hi:
                raise InvalidArgumentError("joint limits must satisfy lower < upper")
        object.__setattr__(self, "_offsets_arr",
                           np.asarray(self.offsets, dtype=float))
        object.__setattr__(self, "_axes_arr", np.asarray(self.axes, dtype=float))
        object.__setattr__(self, "_lo", np.array([l for l, _ in self.limits]))
        object.__setattr__(self, "_hi", np.array([h for _, h in self.limits]))
        object.__setattr__(self, "_ee_arr", np.asarray(self.ee_offset, dtype=float))

    @property
    def dof(self) -> int:
        return len(self.offsets)

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self._lo, self._hi)

    def random_configuration(self, rng) -> np.ndarray:
        return rng.uniform(self._lo, self._hi)

    def chain(self, q) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Raw forward kinematics: gripper rotation and position, plus the
        world origin and world axis of every joint. Hot path, no Pose
        objects."""
        q = np.asarray(q, dtype=float)
        if q.shape != (self.dof,):
            raise InvalidArgumentError(f"expected {self.dof} joint angles, got {q.shape}")
        rot = self.base_pose.rotation
        pos = self.base_pose.translation
        origins = np.empty((self.dof, 3))
        axes = np.empty((self.dof, 3))
        for i in range(self.dof):
            pos = pos + rot @ self._offsets_arr[i]
            origins[i] = pos
            rot = rot @ rotation_about_axis(self._axes_arr[i], q[i])
            axes[i] = rot @ self._axes_arr[i]
        return rot, pos + rot @ self._ee_arr, origins, axes

    def fk(self, q) -> Pose:
        rot, pos, _, _ = self.chain(q)
        return Pose(rot, pos)

    def frames(self, q) -> list[Pose]:
        """Pose of every joint frame, then the gripper frame."""
        q = np.asarray(q, dtype=float)
        poses = []
        cur = self.base_pose
        for i in range(self.dof):
            step = Pose(rotation_about_axis(self._axes_arr[i], q[i]),
                        self._offsets_arr[i])
            cur = cur.compose(step)
            poses.append(cur)
        poses.append(cur.compose(Pose(np.eye(3), self._ee_arr)))
        return poses

    def jacobian(self, q) -> np.ndarray:
        """Geometric Jacobian (6 x dof): linear rows first, then angular."""
        _, p_ee, origins, axes = self.chain(q)
        jac = np.empty((6, self.dof))
        jac[:3] = np.cross(axes, p_ee - origins).T
        jac[3:] = axes.T
        return jac

    def link_capsules(self, q) -> list[Capsule]:
        """One capsule per link segment, joint origins through the gripper."""
        _, ee_pos, origins, _ = self.chain(q)
        pts = [self.base_pose.translation, *origins, ee_pos]
        caps = []
        for a, b in zip(pts[:-1], pts[1:]):
            if np.linalg.norm(b - a) > 1e-9:
                caps.append(Capsule(a, b, self.link_radius))
        return caps


def pose_error(current: Pose, target: Pose) -> tuple[np.ndarray, float, float]:
    """Twist from current to target and its position/rotation magnitudes."""
    dp = target.translation - current.translation
    axis, angle = rotation_to_axis_angle(target.rotation @ current.rotation.T)
    twist = np.concatenate([dp, axis * angle])
    return twist, float(np.linalg.norm(dp)), float(abs(angle))


@dataclass(frozen=True)
class IkResult:
    success: bool
    q: np.ndarray
    pos_err: float
    rot_err: float
    iterations: int
    residual_segments: tuple[tuple[float, ...], ...] = field(default=())

    @property
    def residuals(self) -> tuple[float, ...]:
        return tuple(r for seg in self.residual_segments for r in seg)


def ik_solve(arm: ArmModel, target: Pose, q0=None, pos_tol: float = POS_TOL,
             rot_tol: float = ROT_TOL, max_iters: int = 500,
             seed: int = 0, extra_seeds=()) -> IkResult:
    """Damped-least-squares IK, multi-start within one iteration budget.

    Minimizes the weighted twist norm; each iteration solves the damped
    normal equations, then backtracks until the residual drops, raising
    the damping when no step helps. Accepted residuals are therefore
    monotone within each start's segment. A start is abandoned once it
    stops making progress or exhausts its slice of the budget; the next
    one re-seeds the joints: first `q0`, then any `extra_seeds` (e.g.
    posture heuristics), then uniform random inside the limits. Success
    needs position error below `pos_tol` and rotation error below
    `rot_tol`.
    """
    if arm.dof < MIN_IK_JOINTS:
        raise InvalidArgumentError(
            f"ik_solve needs >= {MIN_IK_JOINTS} joints, arm has {arm.dof}")
    rng = generator(seed, "ik", arm.name)
    target_rot, target_pos = target.rotation, target.translation

    def residual(qv):
        rot, pos, origins, axes = arm.chain(qv)
        dp = target_pos - pos
        axis, angle = rotation_to_axis_angle(target_rot @ rot.T)
        err = np.concatenate([dp, ROT_WEIGHT * angle * axis])
        return err, float(np.linalg.norm(dp)), float(abs(angle)), (pos, origins, axes)

    starts = ([np.asarray(q0, dtype=float)] if q0 is not None else [])
    starts.extend(np.asarray(s, dtype=float) for s in extra_seeds)
    segments: list[tuple[float, ...]] = []
    best = None  # (combined, q, pos_err, rot_err)
    iterations = 0

    while iterations < max_iters:
        if len(segments) < len(starts):
            q = arm.clamp(starts[len(segments)])
        else:
            q = arm.random_configuration(rng)
        err, pos_err, rot_err, geo = residual(q)
        score = float(np.linalg.norm(err))
        lam = 1e-3
        segment = [score]
        rejects_in_row = 0
        segment_iters = 0

        while (iterations < max_iters and segment_iters < SEGMENT_BUDGET
               and rejects_in_row < REJECT_PATIENCE):
            if pos_err < pos_tol and rot_err < rot_tol:
                segments.append(tuple(segment))
                return IkResult(True, q, pos_err, rot_err, iterations,
                                tuple(segments))
            iterations += 1
            segment_iters += 1

            p_ee, origins, axes = geo
            jac = np.empty((6, arm.dof))
            jac[:3] = np.cross(axes, p_ee - origins).T
            jac[3:] = ROT_WEIGHT * axes.T
            dq = np.linalg.solve(jac.T @ jac + lam * lam * np.eye(arm.dof),
                                 jac.T @ err)
            accepted = False
            for alpha in (1.0, 0.5, 0.25, 0.125):
                cand = arm.clamp(q + alpha * dq)
                c_err, c_pos, c_rot, c_geo = residual(cand)
                c_score = float(np.linalg.norm(c_err))
                if c_score < score:
                    q, err, pos_err, rot_err, geo, score = \
                        cand, c_err, c_pos, c_rot, c_geo, c_score
                    segment.append(score)
                    lam = max(lam * 0.5, 1e-6)
                    accepted = True
                    break
            if accepted:
                rejects_in_row = 0
            else:
                lam = min(lam * 4.0, 1e3)
                rejects_in_row += 1

        if pos_err < pos_tol and rot_err < rot_tol:
            segments.append(tuple(segment))
            return IkResult(True, q, pos_err, rot_err, iterations, tuple(segments))
        segments.append(tuple(segment))
        combined = pos_err + ROT_WEIGHT * rot_err
        if best is None or combined < best[0]:
            best = (combined, q, pos_err, rot_err)

    _, q, pos_err, rot_err = best
    return IkResult(False, q, pos_err, rot_err, iterations, tuple(segments))


def make_standard_arm(name: str, base_pose: Pose) -> ArmModel:
    """Six-joint elbow arm used by the experiment scenes.

    Yaw base, pitch shoulder and elbow, roll forearm, pitch wrist, roll
    flange: a ZYZ wrist after the elbow, so any reachable position can be
    paired with any orientation. About 1.0 m of reach.
    """
    z, y = (0.0, 0.0, 1.0), (0.0, 1.0, 0.0)
    return ArmModel(
        name=name,
        base_pose=base_pose,
        offsets=((0.0, 0.0, 0.12), (0.0, 0.0, 0.10), (0.0, 0.0, 0.40),
                 (0.0, 0.0, 0.35), (0.0, 0.0, 0.08), (0.0, 0.0, 0.06)),
        axes=(z, y, y, z, y, z),
        limits=((-3.05, 3.05), (-2.09, 2.09), (-2.70, 2.70),
                (-3.05, 3.05), (-2.09, 2.09), (-3.05, 3.05)),
        ee_offset=(0.0, 0.0, 0.10),
        link_radius=0.035,
    )


def _wrap_angle(a: float) -> float:
    return float((a + np.pi) % (2.0 * np.pi) - np.pi)


def standard_arm_ik_seeds(arm: ArmModel, target: Pose) -> list[np.ndarray]:
    """Closed-form joint candidates for `make_standard_arm`-shaped chains.

    Exploits that every offset is along the local z axis with the axis
    pattern (z, y, y, z, y, z): the flange segment length backs the wrist
    point off the target along the approach, base yaw and the planar
    shoulder/elbow pair position that point (two yaw branches, two elbow
    branches), and the remaining rotation factors as ZYZ Euler angles
    (two more branches). Returns the branches clamped to the limits, for
    use as `ik_solve` seeds; empty if the arm does not match the pattern.
    """
    z, y = (0.0, 0.0, 1.0), (0.0, 1.0, 0.0)
    if arm.dof != 6 or arm.axes != (z, y, y, z, y, z):
        return []
    off = arm._offsets_arr
    if np.abs(off[:, :2]).max() > 1e-12 or abs(arm._ee_arr[0]) > 1e-12 \
            or abs(arm._ee_arr[1]) > 1e-12:
        return []
    l_upper = off[2][2]
    l_fore = off[3][2] + off[4][2]
    flange = off[5][2] + arm._ee_arr[2]

    base_inv = arm.base_pose.invert()
    rot_b = base_inv.rotation @ target.rotation
    wrist_b = base_inv.apply(target.translation) - flange * (rot_b @ np.array(z))
    shoulder_b = np.array([0.0, 0.0, off[0][2] + off[1][2]])
    d = wrist_b - shoulder_b
    reach = float(np.linalg.norm(d))
    if not abs(l_upper - l_fore) <= reach <= l_upper + l_fore:
        return []

    cos_elbow = np.clip((l_upper**2 + l_fore**2 - reach**2)
                        / (2.0 * l_upper * l_fore), -1.0, 1.0)
    elbow_inner = float(np.arccos(cos_elbow))
    seeds = []
    for yaw_flip in (1.0, -1.0):
        q0 = _wrap_angle(np.arctan2(yaw_flip * d[1], yaw_flip * d[0]))
        rho = yaw_flip * float(np.hypot(d[0], d[1]))
        tilt = np.arctan2(rho, d[2])
        for bend in (1.0, -1.0):
            q2 = bend * (np.pi - elbow_inner)
            q1 = _wrap_angle(tilt - np.arctan2(l_fore * np.sin(q2),
                                               l_upper + l_fore * np.cos(q2)))
            pre = rotation_about_axis(np.array(z), q0) \
                @ rotation_about_axis(np.array(y), q1 + q2)
            m = pre.T @ rot_b
            sin_q4 = float(np.hypot(m[0, 2], m[1, 2]))
            for wrist_flip in (1.0, -1.0):
                q4 = np.arctan2(wrist_flip * sin_q4, m[2, 2])
                if sin_q4 < 1e-9:
                    q3 = 0.0
                    q5 = np.arctan2(m[1, 0], m[0, 0]) * (1.0 if m[2, 2] > 0 else -1.0)
                else:
                    q3 = np.arctan2(wrist_flip * m[1, 2], wrist_flip * m[0, 2])
                    q5 = np.arctan2(wrist_flip * m[2, 1], -wrist_flip * m[2, 0])
                seeds.append(arm.clamp(np.array([q0, q1, q2, q3, q4, q5])))
    return seeds
