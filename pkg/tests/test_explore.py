"""Exploration loop, pool persistence, and label rendering tests."""

import numpy as np
import pytest

from artmanip.articulated import SceneConfig, make_pliers, make_table, observe_scene
from artmanip.errors import ExplorationStalledError, InvalidArgumentError, PoolParseError
from artmanip.explore import (
    Demonstration,
    LabelPool,
    PoolEntry,
    explore,
    load_pool,
    render_label,
    save_pool,
    snap_contact,
)
from artmanip.geometry import FeaturedPointCloud, TAG_RGB
from artmanip.grasp import FingerContact, GripperContact, antipodal_valid


@pytest.fixture(scope="module")
def pliers():
    return make_pliers()


@pytest.fixture(scope="module")
def demos(pliers):
    obj, regions = pliers
    scene = SceneConfig(obj, obj.reference_root_pose(), obj.reference_angles(),
                        (make_table(),))
    entries = []
    for order in ((0, 1), (1, 0)):
        contacts = []
        for part in obj.parts:
            region = regions[part.part_id]
            pos, nrm = part.cloud.positions, part.normals
            plus = [i for i in region.indices if nrm[i][1] > 0.9]
            minus = [i for i in region.indices if nrm[i][1] < -0.9]
            pair = None
            for i in plus:
                for j in minus:
                    if (abs(pos[i][0] - pos[j][0]) < 1e-9
                            and abs(pos[i][2] - pos[j][2]) < 1e-9):
                        if pair is None or pos[i][0] > pos[pair[0]][0]:
                            pair = (i, j)
            i, j = pair
            contacts.append(GripperContact((
                FingerContact(part.part_id, i, tuple(pos[i]), tuple(nrm[i])),
                FingerContact(part.part_id, j, tuple(pos[j]), tuple(nrm[j])))))
        entries.append(Demonstration(tuple(contacts), scene, order))
    return tuple(entries)


def accept_all(entry, rng):
    return True


class TestExploreLoop:
    def test_target_equal_to_demo_count_returns_demos(self, pliers, demos):
        obj, regions = pliers
        pool = explore(demos, obj, regions, n=len(demos), seed=0,
                       execute=accept_all)
        assert pool.entries == demos
        assert pool.capacity == len(demos)

    def test_zero_radius_fills_with_replays(self, pliers, demos):
        obj, regions = pliers
        pool = explore(demos, obj, regions, n=10, r=0.0, seed=1,
                       execute=accept_all)
        assert len(pool) == 10
        demo_keys = {d.contact_key() for d in demos}
        for entry in pool.entries:
            assert entry.contact_key() in demo_keys

    def test_perturbed_contacts_stay_in_region_and_radius(self, pliers, demos):
        obj, regions = pliers
        r = 0.012
        seen_parents = {d.contact_key(): d for d in demos}
        pool = explore(demos, obj, regions, n=40, r=r, seed=2,
                       execute=accept_all)
        region_by_part = {reg.part_id: set(reg.indices) for reg in regions}
        for entry in pool.entries:
            for contact in entry.contacts:
                for finger in contact.fingers:
                    assert finger.point_index in region_by_part[finger.part_id]
        # Radius bound: every accepted contact lies within r of some other
        # pool contact on the same part (its parent, at minimum).
        for entry in pool.entries[len(demos):]:
            for contact in entry.contacts:
                for finger in contact.fingers:
                    dists = [np.linalg.norm(finger.position_vec() - of.position_vec())
                             for other in pool.entries if other is not entry
                             for oc in other.contacts
                             for of in oc.fingers if of.part_id == finger.part_id]
                    assert min(dists) <= r + 1e-12

    def test_deterministic_given_seed(self, pliers, demos):
        obj, regions = pliers
        a = explore(demos, obj, regions, n=25, r=0.01, seed=7, execute=accept_all)
        b = explore(demos, obj, regions, n=25, r=0.01, seed=7, execute=accept_all)
        assert a == b
        c = explore(demos, obj, regions, n=25, r=0.01, seed=8, execute=accept_all)
        keys_b = [e.contact_key() for e in b.entries]
        keys_c = [e.contact_key() for e in c.entries]
        assert keys_b != keys_c

    def test_stall_aborts_with_diagnostic(self, pliers, demos):
        obj, regions = pliers

        def reject_all(entry, rng):
            return False

        with pytest.raises(ExplorationStalledError):
            explore(demos, obj, regions, n=5, seed=0, execute=reject_all,
                    stall_limit=200)

    def test_preconditions(self, pliers, demos):
        obj, regions = pliers
        with pytest.raises(InvalidArgumentError):
            explore((), obj, regions, n=5, execute=accept_all)
        with pytest.raises(InvalidArgumentError):
            explore(demos, obj, regions, n=1, execute=accept_all)
        with pytest.raises(InvalidArgumentError):
            explore(demos, obj, regions, n=5, r=-0.01, execute=accept_all)

    def test_selective_executor_only_keeps_passing(self, pliers, demos):
        obj, regions = pliers

        def picky(entry, rng):
            # Accept only tuples whose contacts all pass the friction check.
            return all(antipodal_valid(c.fingers[0], c.fingers[1], 0.65)
                       for c in entry.contacts)

        pool = explore(demos, obj, regions, n=20, r=0.015, seed=3, execute=picky)
        for entry in pool.entries:
            for contact in entry.contacts:
                assert antipodal_valid(contact.fingers[0], contact.fingers[1], 0.65)


class TestPoolPersistence:
    def test_round_trip_identity(self, pliers, demos, tmp_path):
        obj, regions = pliers
        pool = explore(demos, obj, regions, n=15, r=0.01, seed=4,
                       execute=accept_all)
        path = tmp_path / "pool.jsonl"
        save_pool(pool, str(path))
        loaded = load_pool(str(path))
        assert loaded == pool
        # Bit-exact: a second save produces identical bytes.
        path2 = tmp_path / "pool2.jsonl"
        save_pool(loaded, str(path2))
        assert path.read_bytes() == path2.read_bytes()

    def test_empty_pool_round_trip(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        save_pool(LabelPool((), 0), str(path))
        loaded = load_pool(str(path))
        assert len(loaded) == 0 and loaded.capacity == 0

    def test_truncated_entry_names_record(self, pliers, demos, tmp_path):
        obj, regions = pliers
        pool = explore(demos, obj, regions, n=6, r=0.01, seed=5,
                       execute=accept_all)
        path = tmp_path / "pool.jsonl"
        save_pool(pool, str(path))
        lines = path.read_text().splitlines()
        lines[3] = lines[3][: len(lines[3]) // 2]
        bad = tmp_path / "bad.jsonl"
        bad.write_text("\n".join(lines) + "\n")
        with pytest.raises(PoolParseError) as err:
            load_pool(str(bad))
        assert err.value.record_index == 3

    def test_bad_header_is_record_zero(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"format": "something-else"}\n')
        with pytest.raises(PoolParseError) as err:
            load_pool(str(bad))
        assert err.value.record_index == 0

    def test_missing_file_header_error(self, tmp_path):
        empty = tmp_path / "zero.jsonl"
        empty.write_text("")
        with pytest.raises(PoolParseError):
            load_pool(str(empty))


class TestRenderLabel:
    def grid_cloud(self):
        xs = np.linspace(0.0, 0.1, 11)
        positions = np.column_stack([xs, np.zeros(11), np.zeros(11)])
        rgb = np.full((11, 3), 0.5)
        return FeaturedPointCloud(positions, rgb, (TAG_RGB,) * 3)

    def test_peak_is_one_at_contact(self):
        cloud = self.grid_cloud()
        maps = render_label(cloud, [cloud.positions[3], cloud.positions[8]],
                            kernel=0.005)
        assert maps.shape == (11, 2)
        assert maps[3, 0] == 1.0
        assert maps[8, 1] == 1.0

    def test_value_at_kernel_distance(self):
        cloud = self.grid_cloud()
        maps = render_label(cloud, [cloud.positions[0], cloud.positions[10]],
                            kernel=0.01)
        # Grid spacing is exactly one kernel radius here.
        assert abs(maps[1, 0] - np.exp(-0.5)) < 1e-12
        assert abs(maps[9, 1] - np.exp(-0.5)) < 1e-12

    def test_zero_kernel_one_hot(self):
        cloud = self.grid_cloud()
        maps = render_label(cloud, [cloud.positions[4], cloud.positions[6]],
                            kernel=0.0)
        np.testing.assert_allclose(maps.sum(axis=0), [1.0, 1.0])
        assert maps[4, 0] == 1.0 and maps[6, 1] == 1.0

    def test_off_cloud_contact_rejected(self):
        cloud = self.grid_cloud()
        with pytest.raises(InvalidArgumentError):
            render_label(cloud, [[0.5, 0.5, 0.5], cloud.positions[0]], 0.005)

    def test_negative_kernel_rejected(self):
        cloud = self.grid_cloud()
        with pytest.raises(InvalidArgumentError):
            render_label(cloud, [cloud.positions[0], cloud.positions[1]], -1.0)


class TestSnapContact:
    def test_exact_and_nearest_snapping(self, pliers, demos):
        obj, _ = pliers
        scene = demos[0].scene
        observed = observe_scene(scene, sample_size=400, seed=0)
        poses = scene.part_poses()
        for contact in demos[0].contacts:
            points, indices = snap_contact(observed, contact, poses)
            for k, finger in enumerate(contact.fingers):
                assert observed.part_ids[indices[k]] == finger.part_id
                world = poses[finger.part_id].apply(finger.position_vec())
                d = np.linalg.norm(points[k] - world)
                # Either the exact point survived sampling or we snapped
                # to a nearby same-part point.
                assert d < 0.02
                np.testing.assert_allclose(
                    points[k], observed.cloud.positions[indices[k]], atol=0)
