"""Friction-cone antipodal checks and grasp-frame construction."""

import numpy as np
import pytest

from artmanip.errors import GraspConflictError, InvalidArgumentError
from artmanip.geometry import Pose, rotation_about_axis
from artmanip.grasp import (
    DEFAULT_FRICTION,
    FingerContact,
    GraspState,
    GripperContact,
    antipodal_valid,
    contacts_to_gripper_pose,
)

from oracles import random_rotation


def pair_at_angle(angle_deg: float, separation: float = 0.03):
    """Two contacts whose line deviates from both inward normals by angle."""
    tilt = np.deg2rad(angle_deg)
    c1 = FingerContact(0, 0, (0.0, 0.0, 0.0), (-1.0, 0.0, 0.0))
    offset = separation * np.array([np.cos(tilt), np.sin(tilt), 0.0])
    c2 = FingerContact(0, 1, tuple(offset), (1.0, 0.0, 0.0))
    return c1, c2


class TestAntipodal:
    def test_30_degrees_inside_cone(self):
        # atan(0.65) ~ 33.02 deg, so 30 deg is accepted...
        c1, c2 = pair_at_angle(30.0)
        assert antipodal_valid(c1, c2, DEFAULT_FRICTION)

    def test_40_degrees_outside_cone(self):
        # ...and 40 deg is not.
        c1, c2 = pair_at_angle(40.0)
        assert not antipodal_valid(c1, c2, DEFAULT_FRICTION)

    def test_symmetric_in_contact_order(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            p1, p2 = rng.uniform(-0.05, 0.05, 3), rng.uniform(-0.05, 0.05, 3)
            n1 = rng.normal(size=3)
            n2 = rng.normal(size=3)
            n1, n2 = n1 / np.linalg.norm(n1), n2 / np.linalg.norm(n2)
            c1 = FingerContact(0, 0, tuple(p1), tuple(n1))
            c2 = FingerContact(0, 1, tuple(p2), tuple(n2))
            assert antipodal_valid(c1, c2) == antipodal_valid(c2, c1)

    def test_scale_invariant(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            p1, p2 = rng.uniform(-0.05, 0.05, 3), rng.uniform(-0.05, 0.05, 3)
            n1 = rng.normal(size=3)
            n2 = rng.normal(size=3)
            n1, n2 = n1 / np.linalg.norm(n1), n2 / np.linalg.norm(n2)
            small = (FingerContact(0, 0, tuple(p1), tuple(n1)),
                     FingerContact(0, 1, tuple(p2), tuple(n2)))
            big = (FingerContact(0, 0, tuple(10.0 * p1), tuple(n1)),
                   FingerContact(0, 1, tuple(10.0 * p2), tuple(n2)))
            assert antipodal_valid(*small) == antipodal_valid(*big)

    def test_coincident_contacts_rejected(self):
        c1 = FingerContact(0, 0, (0.01, 0.02, 0.0), (-1.0, 0.0, 0.0))
        c2 = FingerContact(0, 1, (0.01, 0.02, 0.0), (1.0, 0.0, 0.0))
        with pytest.raises(InvalidArgumentError):
            antipodal_valid(c1, c2)

    def test_friction_must_be_positive(self):
        c1, c2 = pair_at_angle(0.0)
        with pytest.raises(InvalidArgumentError):
            antipodal_valid(c1, c2, 0.0)

    def test_non_unit_normal_rejected(self):
        with pytest.raises(InvalidArgumentError):
            FingerContact(0, 0, (0, 0, 0), (0.5, 0.0, 0.0))


class TestGripperPose:
    def horizontal_grasp(self):
        c1 = FingerContact(0, 0, (0.0, -0.01, 0.0), (0.0, -1.0, 0.0))
        c2 = FingerContact(0, 1, (0.0, 0.01, 0.0), (0.0, 1.0, 0.0))
        return GripperContact((c1, c2))

    def test_top_down_preference(self):
        pose = contacts_to_gripper_pose(self.horizontal_grasp(), Pose.identity())
        # Approach (+z column of the frame) points straight down at the object.
        np.testing.assert_allclose(pose.rotation[:, 2], [0.0, 0.0, -1.0], atol=1e-12)
        np.testing.assert_allclose(pose.rotation[:, 0], [0.0, 1.0, 0.0], atol=1e-12)
        # Origin backed off along the approach from the midpoint.
        np.testing.assert_allclose(pose.translation, [0.0, 0.0, 0.05], atol=1e-12)

    def test_standoff_along_approach(self):
        pose = contacts_to_gripper_pose(self.horizontal_grasp(), Pose.identity(),
                                        standoff=0.02)
        np.testing.assert_allclose(pose.translation, [0.0, 0.0, 0.02], atol=1e-12)

    def test_vertical_closing_falls_back(self):
        c1 = FingerContact(0, 0, (0.0, 0.0, -0.01), (0.0, 0.0, -1.0))
        c2 = FingerContact(0, 1, (0.0, 0.0, 0.01), (0.0, 0.0, 1.0))
        pose = contacts_to_gripper_pose(GripperContact((c1, c2)), Pose.identity())
        np.testing.assert_allclose(pose.rotation[:, 0], [0.0, 0.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(pose.rotation[:, 2], [-1.0, 0.0, 0.0], atol=1e-12)

    def test_part_pose_carries_grasp_frame(self):
        rng = np.random.default_rng(8)
        contact = self.horizontal_grasp()
        for _ in range(20):
            part_pose = Pose(random_rotation(rng), rng.uniform(-0.2, 0.2, 3))
            pose = contacts_to_gripper_pose(contact, part_pose)
            mid_world = part_pose.apply(np.array([0.0, 0.0, 0.0]))
            np.testing.assert_allclose(pose.translation + 0.05 * pose.rotation[:, 2],
                                       mid_world, atol=1e-12)
            # Valid right-handed frame.
            np.testing.assert_allclose(pose.rotation @ pose.rotation.T, np.eye(3),
                                       atol=1e-12)

    def test_mixed_part_contact_rejected(self):
        c1 = FingerContact(0, 0, (0.0, -0.01, 0.0), (0.0, -1.0, 0.0))
        c2 = FingerContact(1, 1, (0.0, 0.01, 0.0), (0.0, 1.0, 0.0))
        with pytest.raises(InvalidArgumentError):
            GripperContact((c1, c2))


class TestGraspState:
    def test_attach_detach_round_trip(self):
        rng = np.random.default_rng(3)
        gripper = Pose(random_rotation(rng), rng.uniform(-0.2, 0.2, 3))
        part = Pose(random_rotation(rng), rng.uniform(-0.2, 0.2, 3))
        state = GraspState().attach(0, 5, gripper, part)
        assert state.holds(0) and state.part_held_by(0) == 5
        assert state.gripper_holding(5) == 0
        assert state.relative_pose(0).almost_equal(part.invert().compose(gripper), 1e-12)
        assert not state.detach(0).holds(0)

    def test_conflicts_rejected(self):
        state = GraspState().attach(0, 5, Pose.identity(), Pose.identity())
        with pytest.raises(GraspConflictError):
            state.attach(0, 6, Pose.identity(), Pose.identity())
        with pytest.raises(GraspConflictError):
            state.attach(1, 5, Pose.identity(), Pose.identity())

    def test_contact_json_round_trip(self):
        c1 = FingerContact(2, 14, (0.01, -0.02, 0.003), (0.0, -1.0, 0.0))
        c2 = FingerContact(2, 15, (0.01, 0.02, 0.003), (0.0, 1.0, 0.0))
        gc = GripperContact((c1, c2))
        again = GripperContact.from_json(gc.to_json())
        assert again == gc
