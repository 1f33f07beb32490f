"""Articulated objects: rigid parts linked by revolute joints.

A part is a union of boxes with a grid-sampled surface cloud in the part's
local frame. The dependency structure is a tree with a single root; every
non-root part is attached to its parent by one revolute joint whose anchor
and direction are given in the reference placement of the object. Forward
kinematics composes the parent's pose delta with a rotation of the joint
angle away from its reference value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .geometry import (
    TAG_RGB,
    FeaturedPointCloud,
    Pose,
    fps_indices,
)
from .grasp import AffordanceRegion

OBJECT_FORMAT = "artmanip-object"
OBJECT_VERSION = 1

STATIC_PART_ID = -1


@dataclass(frozen=True)
class BoxShape:
    """Axis-aligned-by-default box: center, half extents, optional rotation.

    Frame is whatever the owner says: part-local for part geometry,
    world for static obstacles.
    """

    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]
    rotation: tuple[float, ...] = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)

    def __post_init__(self):
        if any(h <= 0 for h in self.half_extents):
            raise InvalidArgumentError("box half extents must be positive")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "half_extents", tuple(float(v) for v in self.half_extents))
        object.__setattr__(self, "rotation", tuple(float(v) for v in self.rotation))

    def center_vec(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)

    def half_vec(self) -> np.ndarray:
        return np.asarray(self.half_extents, dtype=float)

    def rotation_mat(self) -> np.ndarray:
        return np.asarray(self.rotation, dtype=float).reshape(3, 3)

    def to_json(self) -> dict:
        return {"center": list(self.center), "half_extents": list(self.half_extents),
                "rotation": list(self.rotation)}

    @staticmethod
    def from_json(d: dict) -> "BoxShape":
        return BoxShape(tuple(d["center"]), tuple(d["half_extents"]),
                        tuple(d.get("rotation", (1, 0, 0, 0, 1, 0, 0, 0, 1))))


def box_surface_grid(box: BoxShape, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Grid-sample all six faces of a box at roughly `spacing` resolution.

    Returns (positions, outward unit normals), both (N, 3), in the box's
    frame. Points sit at face-cell centers so faces never share points.
    """
    if spacing <= 0:
        raise InvalidArgumentError("spacing must be positive")
    h = box.half_vec()
    points, normals = [], []

    def axis_grid(extent: float) -> np.ndarray:
        n = max(1, int(round(2.0 * extent / spacing)))
        return (np.arange(n) + 0.5) / n * 2.0 * extent - extent

    for axis in range(3):
        u_axis, v_axis = (axis + 1) % 3, (axis + 2) % 3
        uu, vv = np.meshgrid(axis_grid(h[u_axis]), axis_grid(h[v_axis]), indexing="ij")
        face = np.zeros((uu.size, 3))
        face[:, u_axis] = uu.reshape(-1)
        face[:, v_axis] = vv.reshape(-1)
        for sign in (1.0, -1.0):
            pts = face.copy()
            pts[:, axis] = sign * h[axis]
            nrm = np.zeros_like(pts)
            nrm[:, axis] = sign
            points.append(pts)
            normals.append(nrm)

    r = box.rotation_mat()
    positions = np.concatenate(points) @ r.T + box.center_vec()
    return positions, np.concatenate(normals) @ r.T


@dataclass(frozen=True)
class RevoluteJoint:
    """Hinge between a part and its parent.

    Anchor and direction are expressed in the object's reference placement
    (the frame in which all reference part poses are given); the reference
    angle is the joint value at which the child's reference pose holds.
    """

    anchor: tuple[float, float, float]
    direction: tuple[float, float, float]
    reference_angle: float
    limits: tuple[float, float]

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise InvalidArgumentError("joint direction must be unit length")
        lo, hi = self.limits
        if not lo < hi:
            raise InvalidArgumentError("joint limits must satisfy lower < upper")
        if not lo <= self.reference_angle <= hi:
            raise InvalidArgumentError("reference angle must lie within limits")
        object.__setattr__(self, "anchor", tuple(float(v) for v in self.anchor))
        object.__setattr__(self, "direction", tuple(float(v) for v in self.direction))
        object.__setattr__(self, "limits", (float(lo), float(hi)))

    def anchor_vec(self) -> np.ndarray:
        return np.asarray(self.anchor, dtype=float)

    def direction_vec(self) -> np.ndarray:
        return np.asarray(self.direction, dtype=float)

    def clamp(self, angle: float) -> float:
        return float(min(max(angle, self.limits[0]), self.limits[1]))

    def to_json(self) -> dict:
        return {"anchor": list(self.anchor), "direction": list(self.direction),
                "reference_angle": self.reference_angle, "limits": list(self.limits)}

    @staticmethod
    def from_json(d: dict) -> "RevoluteJoint":
        return RevoluteJoint(tuple(d["anchor"]), tuple(d["direction"]),
                             float(d["reference_angle"]), tuple(d["limits"]))


@dataclass(frozen=True)
class Part:
    """One rigid link: box geometry, surface cloud, reference pose.

    The cloud and normals live in the part's local frame; `reference_pose`
    places that frame in the object's reference placement.
    """

    part_id: int
    name: str
    boxes: tuple[BoxShape, ...]
    spacing: float
    color: tuple[float, float, float]
    reference_pose: Pose
    cloud: FeaturedPointCloud = field(repr=False, compare=False, default=None)
    normals: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.cloud is None:
            pos_chunks, nrm_chunks = [], []
            for box in self.boxes:
                p, n = box_surface_grid(box, self.spacing)
                pos_chunks.append(p)
                nrm_chunks.append(n)
            positions = np.concatenate(pos_chunks)
            normals = np.concatenate(nrm_chunks)
            rgb = np.tile(np.asarray(self.color, dtype=float), (len(positions), 1))
            cloud = FeaturedPointCloud(positions, rgb, (TAG_RGB,) * 3)
            object.__setattr__(self, "cloud", cloud)
            object.__setattr__(self, "normals", normals)
        nrm = np.asarray(self.normals, dtype=float)
        nrm.flags.writeable = False
        object.__setattr__(self, "normals", nrm)
        object.__setattr__(self, "color", tuple(float(v) for v in self.color))

    def __len__(self) -> int:
        return len(self.cloud)

    def to_json(self) -> dict:
        return {"id": self.part_id, "name": self.name,
                "boxes": [b.to_json() for b in self.boxes],
                "spacing": self.spacing, "color": list(self.color),
                "reference_pose": self.reference_pose.to_json()}

    @staticmethod
    def from_json(d: dict) -> "Part":
        return Part(int(d["id"]), str(d["name"]),
                    tuple(BoxShape.from_json(b) for b in d["boxes"]),
                    float(d["spacing"]), tuple(d["color"]),
                    Pose.from_json(d["reference_pose"]))


@dataclass(frozen=True)
class ArticulatedObject:
    """Parts plus a joint per non-root part, keyed by child part id."""

    name: str
    parts: tuple[Part, ...]
    joints: dict[int, tuple[int, RevoluteJoint]]

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        ids = [p.part_id for p in self.parts]
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError(f"duplicate part ids in {ids}")
        id_set = set(ids)
        for child, (parent, _) in self.joints.items():
            if child not in id_set:
                raise InvalidArgumentError(f"joint child {child} is not a part")
            if parent not in id_set:
                raise InvalidArgumentError(f"joint parent {parent} is not a part")
            if child == parent:
                raise InvalidArgumentError(f"part {child} cannot be its own parent")
        roots = [i for i in ids if i not in self.joints]
        if len(roots) != 1:
            raise InvalidArgumentError(f"object must have exactly one root part, found {roots}")
        # Walk child -> parent; every part must reach the root without repeats.
        for pid in ids:
            seen, cur = set(), pid
            while cur in self.joints:
                if cur in seen:
                    raise InvalidArgumentError(f"dependency cycle through part {cur}")
                seen.add(cur)
                cur = self.joints[cur][0]
            if cur != roots[0]:
                raise InvalidArgumentError(f"part {pid} does not reach the root")

    @property
    def root_id(self) -> int:
        return next(p.part_id for p in self.parts if p.part_id not in self.joints)

    @property
    def part_ids(self) -> tuple[int, ...]:
        return tuple(p.part_id for p in self.parts)

    @property
    def joint_ids(self) -> tuple[int, ...]:
        """Child part ids that carry a joint, in topological order."""
        return tuple(i for i in self.topological_order() if i in self.joints)

    def part(self, part_id: int) -> Part:
        for p in self.parts:
            if p.part_id == part_id:
                return p
        raise InvalidArgumentError(f"no part with id {part_id}")

    def joint(self, child_id: int) -> RevoluteJoint:
        return self.joints[child_id][1]

    def parent_of(self, child_id: int) -> int:
        return self.joints[child_id][0]

    def children_of(self, part_id: int) -> tuple[int, ...]:
        return tuple(c for c, (p, _) in self.joints.items() if p == part_id)

    def topological_order(self) -> tuple[int, ...]:
        order = [self.root_id]
        frontier = [self.root_id]
        while frontier:
            nxt = []
            for pid in frontier:
                for child in sorted(self.children_of(pid)):
                    order.append(child)
                    nxt.append(child)
            frontier = nxt
        return tuple(order)

    def reference_angles(self) -> dict[int, float]:
        return {c: j.reference_angle for c, (_, j) in self.joints.items()}

    def reference_root_pose(self) -> Pose:
        return self.part(self.root_id).reference_pose

    def to_json(self) -> dict:
        return {"format": OBJECT_FORMAT, "version": OBJECT_VERSION, "name": self.name,
                "parts": [p.to_json() for p in self.parts],
                "joints": [{"child": c, "parent": p, **j.to_json()}
                           for c, (p, j) in sorted(self.joints.items())]}

    @staticmethod
    def from_json(d: dict) -> "ArticulatedObject":
        if d.get("format") != OBJECT_FORMAT:
            raise InvalidArgumentError(f"not an object description: format={d.get('format')!r}")
        if d.get("version") != OBJECT_VERSION:
            raise InvalidArgumentError(f"unsupported object version {d.get('version')!r}")
        parts = tuple(Part.from_json(p) for p in d["parts"])
        joints = {int(j["child"]): (int(j["parent"]), RevoluteJoint.from_json(j))
                  for j in d["joints"]}
        return ArticulatedObject(str(d["name"]), parts, joints)

    def content_hash(self) -> str:
        """Stable digest of the description, for pool headers."""
        import hashlib
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def forward_configuration(obj: ArticulatedObject, root_pose: Pose,
                          joint_angles: dict[int, float]) -> dict[int, Pose]:
    """World pose of every part for a root pose and joint angles.

    Child pose = D_parent o A o reference_pose, where D_parent is the
    parent's delta from its reference pose and A rotates by the angle's
    offset from the joint's reference value about the reference-frame
    anchored axis. Angles outside limits are rejected.
    """
    missing = [c for c in obj.joints if c not in joint_angles]
    if missing:
        raise InvalidArgumentError(f"missing joint angles for parts {sorted(missing)}")
    poses: dict[int, Pose] = {obj.root_id: root_pose}
    for child in obj.topological_order():
        if child == obj.root_id:
            continue
        parent, joint = obj.joints[child]
        angle = float(joint_angles[child])
        lo, hi = joint.limits
        if not lo - 1e-9 <= angle <= hi + 1e-9:
            raise InvalidArgumentError(
                f"joint angle {angle:.4f} for part {child} outside limits [{lo:.4f}, {hi:.4f}]")
        delta = poses[parent].compose(obj.part(parent).reference_pose.invert())
        swing = Pose.from_anchored_rotation(joint.anchor_vec(), joint.direction_vec(),
                                            angle - joint.reference_angle)
        poses[child] = delta.compose(swing).compose(obj.part(child).reference_pose)
    return poses


@dataclass(frozen=True)
class StaticGeometry:
    """Immovable scene geometry: a cloud for observation, boxes for collision.

    Everything world-frame.
    """

    name: str
    cloud: FeaturedPointCloud
    normals: np.ndarray
    boxes: tuple[BoxShape, ...] = ()

    def __post_init__(self):
        nrm = np.asarray(self.normals, dtype=float)
        if nrm.shape != (len(self.cloud), 3):
            raise InvalidArgumentError("static normals must match cloud size")
        nrm.flags.writeable = False
        object.__setattr__(self, "normals", nrm)

    def to_json(self) -> dict:
        return {"name": self.name,
                "positions": self.cloud.positions.tolist(),
                "features": self.cloud.features.tolist(),
                "tags": list(self.cloud.channel_tags),
                "normals": self.normals.tolist(),
                "boxes": [b.to_json() for b in self.boxes]}

    @staticmethod
    def from_json(d: dict) -> "StaticGeometry":
        cloud = FeaturedPointCloud(np.asarray(d["positions"], dtype=float),
                                   np.asarray(d["features"], dtype=float),
                                   list(d["tags"]))
        boxes = tuple(BoxShape.from_json(b) for b in d["boxes"])
        return StaticGeometry(str(d["name"]), cloud,
                              np.asarray(d["normals"], dtype=float), boxes)


@dataclass(frozen=True)
class SceneConfig:
    """One concrete scene: object placement plus static geometry."""

    obj: ArticulatedObject
    root_pose: Pose
    joint_angles: dict[int, float]
    statics: tuple[StaticGeometry, ...] = ()

    def part_poses(self) -> dict[int, Pose]:
        return forward_configuration(self.obj, self.root_pose, self.joint_angles)

    def with_configuration(self, root_pose: Pose,
                           joint_angles: dict[int, float]) -> "SceneConfig":
        return SceneConfig(self.obj, root_pose, dict(joint_angles), self.statics)


@dataclass(frozen=True)
class ObservedScene:
    """Fused world-frame observation with per-point provenance.

    `part_ids[i]` is the part the i-th point came from (STATIC_PART_ID for
    scene geometry) and `source_indices[i]` the index into that part's
    local cloud, so observed points can be mapped back to contacts.
    """

    cloud: FeaturedPointCloud
    part_ids: np.ndarray
    source_indices: np.ndarray
    normals: np.ndarray

    def __len__(self) -> int:
        return len(self.cloud)

    def indices_for_part(self, part_id: int) -> np.ndarray:
        return np.flatnonzero(self.part_ids == part_id)

    def observed_index(self, part_id: int, source_index: int) -> int | None:
        hits = np.flatnonzero((self.part_ids == part_id)
                              & (self.source_indices == source_index))
        return int(hits[0]) if hits.size else None


def observe_scene(scene: SceneConfig, sample_size: int = 1024,
                  seed: int = 0) -> ObservedScene:
    """Render the scene to a fused, downsampled world-frame cloud.

    Part clouds are transformed by their current poses, merged with static
    geometry, and farthest-point sampled to `sample_size` points (or fewer
    if the scene has fewer).
    """
    poses = scene.part_poses()
    positions, rgb, ids, srcs, normals = [], [], [], [], []
    for part in scene.obj.parts:
        pose = poses[part.part_id]
        world = part.cloud.transformed(pose)
        positions.append(world.positions)
        rgb.append(world.rgb())
        ids.append(np.full(len(part), part.part_id, dtype=int))
        srcs.append(np.arange(len(part), dtype=int))
        normals.append(part.normals @ pose.rotation.T)
    for static in scene.statics:
        positions.append(static.cloud.positions)
        rgb.append(static.cloud.rgb())
        ids.append(np.full(len(static.cloud), STATIC_PART_ID, dtype=int))
        srcs.append(np.arange(len(static.cloud), dtype=int))
        normals.append(static.normals)

    all_pos = np.concatenate(positions)
    all_rgb = np.concatenate(rgb)
    all_ids = np.concatenate(ids)
    all_src = np.concatenate(srcs)
    all_nrm = np.concatenate(normals)

    k = min(sample_size, len(all_pos))
    keep = fps_indices(all_pos, k, seed)
    cloud = FeaturedPointCloud(all_pos[keep], all_rgb[keep], (TAG_RGB,) * 3)
    return ObservedScene(cloud, all_ids[keep], all_src[keep], all_nrm[keep])


# ---------------------------------------------------------------------------
# Procedural object catalog
# ---------------------------------------------------------------------------

_LIFT = 0.001  # hover above the table surface to keep resting contact clean


def _affordance(part: Part, mask: np.ndarray) -> AffordanceRegion:
    return AffordanceRegion(part.part_id, tuple(np.flatnonzero(mask)))


def make_pliers() -> tuple[ArticulatedObject, tuple[AffordanceRegion, ...]]:
    """Two crossed handles hinged at the origin, opening about +z.

    Each handle is 0.16 x 0.02 x 0.012 and extends along +x of its local
    frame from the pivot; the handles sit in two z layers so they can
    swing past each other. Reference opening is +/-15 degrees.
    """
    handle = BoxShape((0.08, 0.0, 0.0), (0.08, 0.01, 0.006))
    spacing = 0.006
    half_open = np.deg2rad(15.0)
    z0, z1 = 0.006 + _LIFT, 0.018 + _LIFT

    def handle_pose(angle: float, z: float) -> Pose:
        from .geometry import rotation_about_axis
        return Pose(rotation_about_axis(np.array([0.0, 0.0, 1.0]), angle),
                    np.array([0.0, 0.0, z]))

    fixed = Part(0, "handle-fixed", (handle,), spacing, (0.55, 0.55, 0.6),
                 handle_pose(-half_open, z0))
    moving = Part(1, "handle-moving", (handle,), spacing, (0.75, 0.3, 0.25),
                  handle_pose(half_open, z1))
    joint = RevoluteJoint((0.0, 0.0, 0.0), (0.0, 0.0, 1.0),
                          reference_angle=0.0, limits=(-0.45, 1.1))
    obj = ArticulatedObject("pliers", (fixed, moving), {1: (0, joint)})

    regions = []
    for part in obj.parts:
        pos, nrm = part.cloud.positions, part.normals
        side = np.abs(nrm[:, 1]) > 0.9
        outer = pos[:, 0] > 0.08
        regions.append(_affordance(part, side & outer))
    return obj, tuple(regions)


def make_laptop() -> tuple[ArticulatedObject, tuple[AffordanceRegion, ...]]:
    """Base plus lid hinged along the base's back top edge.

    The hinge line runs along x. Joint angle is the opening angle: 0 is
    closed flat over the base, pi/2 upright; the reference placement has
    the lid open 60 degrees. Limits are [10, 120] degrees.
    """
    from .geometry import rotation_about_axis
    base_box = BoxShape((0.0, 0.0, 0.0075), (0.13, 0.09, 0.0075))
    lid_box = BoxShape((0.0, 0.09, 0.004), (0.13, 0.09, 0.004))
    spacing = 0.01
    hinge_anchor = np.array([0.0, 0.09, 0.015 + _LIFT])
    hinge_dir = np.array([-1.0, 0.0, 0.0])
    ref_angle = np.deg2rad(60.0)

    base = Part(0, "base", (base_box,), spacing, (0.3, 0.3, 0.35),
                Pose(np.eye(3), np.array([0.0, 0.0, _LIFT])))
    # Closed placement: lid local +y runs from hinge toward the front.
    closed = Pose(rotation_about_axis(np.array([0.0, 0.0, 1.0]), np.pi),
                  hinge_anchor)
    lid_ref = Pose.from_anchored_rotation(hinge_anchor, hinge_dir, ref_angle).compose(closed)
    lid = Part(1, "lid", (lid_box,), spacing, (0.25, 0.35, 0.55), lid_ref)
    joint = RevoluteJoint(tuple(hinge_anchor), tuple(hinge_dir),
                          reference_angle=ref_angle,
                          limits=(np.deg2rad(10.0), np.deg2rad(120.0)))
    obj = ArticulatedObject("laptop", (base, lid), {1: (0, joint)})

    bpos, bnrm = base.cloud.positions, base.normals
    base_region = _affordance(base, (np.abs(bnrm[:, 2]) > 0.9) & (bpos[:, 1] < -0.05))
    lpos, lnrm = lid.cloud.positions, lid.normals
    lid_region = _affordance(lid, (np.abs(lnrm[:, 2]) > 0.9) & (lpos[:, 1] > 0.13))
    return obj, (base_region, lid_region)


def make_three_stick() -> tuple[ArticulatedObject, tuple[AffordanceRegion, ...]]:
    """Three stacked sticks sharing a vertical pivot at one end.

    Sticks are 0.18 x 0.025 x 0.012, colored red, white, and blue, and
    chained 0 -> 1 -> 2: rotating a stick carries every stick above it.
    """
    stick = BoxShape((0.09, 0.0, 0.0), (0.09, 0.0125, 0.006))
    spacing = 0.006
    colors = ((0.8, 0.15, 0.15), (0.92, 0.92, 0.92), (0.2, 0.3, 0.8))
    names = ("stick-red", "stick-white", "stick-blue")
    parts, joints = [], {}
    for i in range(3):
        z = 0.006 + 0.0125 * i + _LIFT
        parts.append(Part(i, names[i], (stick,), spacing, colors[i],
                          Pose(np.eye(3), np.array([0.0, 0.0, z]))))
        if i > 0:
            joints[i] = (i - 1, RevoluteJoint((0.0, 0.0, 0.0), (0.0, 0.0, 1.0),
                                              reference_angle=0.0, limits=(-2.9, 2.9)))
    obj = ArticulatedObject("three-stick", tuple(parts), joints)

    regions = []
    for part in obj.parts:
        pos, nrm = part.cloud.positions, part.normals
        side = np.abs(nrm[:, 1]) > 0.9
        outer = pos[:, 0] > 0.12
        regions.append(_affordance(part, side & outer))
    return obj, tuple(regions)


OBJECT_FACTORIES = {
    "pliers": make_pliers,
    "laptop": make_laptop,
    "three-stick": make_three_stick,
}


def make_table(size: float = 0.25, spacing: float = 0.009,
               slab_half: float = 0.3) -> StaticGeometry:
    """Tabletop at z = 0: a sampled patch for observation plus a collision slab."""
    n = max(1, int(round(size / spacing)))
    axis = (np.arange(n) + 0.5) / n * size - size / 2.0
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    positions = np.column_stack([xx.reshape(-1), yy.reshape(-1), np.zeros(xx.size)])
    rgb = np.tile([0.45, 0.33, 0.22], (len(positions), 1))
    normals = np.tile([0.0, 0.0, 1.0], (len(positions), 1))
    cloud = FeaturedPointCloud(positions, rgb, (TAG_RGB,) * 3)
    slab = BoxShape((0.0, 0.0, -0.015), (slab_half, slab_half, 0.015))
    return StaticGeometry("table", cloud, normals, (slab,))


def make_block_obstacle(name: str, center, half_extents,
                        color=(0.9, 0.75, 0.2), spacing: float = 0.01) -> StaticGeometry:
    """A box obstacle resting in the world frame, observed and collidable."""
    box = BoxShape(tuple(center), tuple(half_extents))
    positions, normals = box_surface_grid(box, spacing)
    rgb = np.tile(np.asarray(color, dtype=float), (len(positions), 1))
    cloud = FeaturedPointCloud(positions, rgb, (TAG_RGB,) * 3)
    return StaticGeometry(name, cloud, normals, (box,))
