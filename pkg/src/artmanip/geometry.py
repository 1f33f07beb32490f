"""Rigid-body math, rotations, and point-cloud primitives.

Rotations are stored as 3x3 matrices throughout. Point clouds are plain
numpy arrays wrapped with per-channel tags so color and contact-probability
channels can be told apart. Clouds here are small (a few thousand points),
so every spatial query is a linear scan.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

UNIT_TOL = 1e-9
ORTHO_TOL = 1e-9

TAG_RGB = "rgb"
TAG_CONTACT = "contact-prob"
TAG_OTHER = "other"
_KNOWN_TAGS = (TAG_RGB, TAG_CONTACT, TAG_OTHER)


def _vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.shape != (3,):
        raise InvalidArgumentError(f"expected 3-vector, got shape {v.shape}")
    return v


def _unit(direction) -> np.ndarray:
    d = _vec3(direction)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise InvalidArgumentError(f"direction must be unit length, |d| = {np.linalg.norm(d)!r}")
    return d


def rotation_about_axis(direction, angle: float) -> np.ndarray:
    """Rotation matrix for a turn of `angle` radians about a unit axis.

    Rodrigues form: R = I cos(a) + sin(a) [d]x + (1 - cos(a)) d d^T.
    """
    d = _unit(direction)
    c, s = np.cos(angle), np.sin(angle)
    skew = np.array([[0.0, -d[2], d[1]], [d[2], 0.0, -d[0]], [-d[1], d[0], 0.0]])
    return c * np.eye(3) + s * skew + (1.0 - c) * np.outer(d, d)


def rotate_point_about_anchored_axis(point, anchor, direction, angle: float) -> np.ndarray:
    """Rotate `point` about the axis through `anchor` with unit `direction`."""
    p, a = _vec3(point), _vec3(anchor)
    r = rotation_about_axis(direction, angle)
    return r @ (p - a) + a


def rotation_to_axis_angle(r: np.ndarray) -> tuple[np.ndarray, float]:
    """Axis and angle of a rotation matrix; angle in [0, pi].

    For the identity the axis defaults to +z. Near angle = pi the axis is
    recovered from the diagonal of (R + I) / 2.
    """
    # atan2 of the skew norm against the trace stays accurate at both ends
    # of [0, pi], where arccos of the trace alone loses half the digits;
    # it also guarantees a zero skew part never pairs with a nonzero angle.
    vee = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    s = float(np.linalg.norm(vee)) / 2.0
    angle = float(np.arctan2(s, (np.trace(r) - 1.0) / 2.0))
    if angle < 1e-12:
        return np.array([0.0, 0.0, 1.0]), 0.0
    if angle > np.pi - 1e-6:
        # R ~ 2 d d^T - I
        dd = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(dd), 0.0, None))
        k = int(np.argmax(axis))
        axis[0] = np.copysign(axis[0], dd[k, 0])
        axis[1] = np.copysign(axis[1], dd[k, 1])
        axis[2] = np.copysign(axis[2], dd[k, 2])
        axis /= np.linalg.norm(axis)
        return axis, angle
    return vee / (2.0 * s), angle


def signed_angle_about_axis(r: np.ndarray, direction) -> float:
    """Signed rotation angle of `r` measured about the unit axis `direction`.

    Assumes `r` is (close to) a rotation about that axis; the sign follows
    the right-hand rule around `direction`. Result lies in (-pi, pi].
    """
    d = _unit(direction)
    vee = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) / 2.0
    cos_a = (np.trace(r) - 1.0) / 2.0
    return float(np.arctan2(float(d @ vee), cos_a))


@dataclass(frozen=True)
class Pose:
    """SE(3) element: orthonormal rotation plus translation in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        if r.shape != (3, 3) or t.shape != (3,):
            raise InvalidArgumentError("pose needs a 3x3 rotation and a 3-vector translation")
        if np.max(np.abs(r.T @ r - np.eye(3))) >= ORTHO_TOL:
            raise InvalidArgumentError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) >= 1e-9:
            raise InvalidArgumentError("rotation determinant is not +1")
        r = r.copy()
        t = t.copy()
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_anchored_rotation(anchor, direction, angle: float) -> "Pose":
        """Rigid motion rotating space about an anchored axis."""
        a = _vec3(anchor)
        r = rotation_about_axis(direction, angle)
        return Pose(r, a - r @ a)

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other: (self o other)(x) = self(other(x))."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def invert(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -(rt @ self.translation))

    def apply(self, points) -> np.ndarray:
        """Transform a point (3,) or an array of points (N, 3)."""
        p = np.asarray(points, dtype=float)
        if p.ndim == 1:
            return self.rotation @ p + self.translation
        return p @ self.rotation.T + self.translation

    def apply_direction(self, direction) -> np.ndarray:
        return self.rotation @ np.asarray(direction, dtype=float)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def almost_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        return (np.max(np.abs(self.rotation - other.rotation)) < tol
                and np.max(np.abs(self.translation - other.translation)) < tol)

    def to_json(self) -> dict:
        """Row-major rotation plus translation, plain lists."""
        return {"rotation": [float(v) for v in self.rotation.reshape(-1)],
                "translation": [float(v) for v in self.translation]}

    @staticmethod
    def from_json(d: dict) -> "Pose":
        return Pose(np.asarray(d["rotation"], dtype=float).reshape(3, 3),
                    np.asarray(d["translation"], dtype=float))


def compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def invert(a: Pose) -> Pose:
    return a.invert()


def interpolate_pose(start: Pose, goal: Pose, fraction: float) -> Pose:
    """Linear translation blend with constant-axis rotation blend."""
    rel = goal.rotation @ start.rotation.T
    axis, angle = rotation_to_axis_angle(rel)
    r = rotation_about_axis(axis, angle * fraction) @ start.rotation if angle > 0 else start.rotation
    t = (1.0 - fraction) * start.translation + fraction * goal.translation
    return Pose(r, t)


@dataclass
class FeaturedPointCloud:
    """N points with xyz positions plus C tagged feature channels.

    Channel tags come from {"rgb", "contact-prob", "other"}; rgb and
    contact-prob values must lie in [0, 1].
    """

    positions: np.ndarray
    features: np.ndarray
    channel_tags: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        n = self.positions.shape[0]
        self.features = np.asarray(self.features, dtype=float).reshape(n, -1)
        self.channel_tags = list(self.channel_tags)
        if len(self.channel_tags) != self.features.shape[1]:
            raise InvalidArgumentError(
                f"{len(self.channel_tags)} tags for {self.features.shape[1]} channels")
        for tag in self.channel_tags:
            if tag not in _KNOWN_TAGS:
                raise InvalidArgumentError(f"unknown channel tag {tag!r}")
        bounded = [i for i, t in enumerate(self.channel_tags) if t in (TAG_RGB, TAG_CONTACT)]
        if bounded and n:
            vals = self.features[:, bounded]
            if vals.min() < -1e-12 or vals.max() > 1.0 + 1e-12:
                raise InvalidArgumentError("rgb/contact-prob channels must lie in [0, 1]")

    def __len__(self) -> int:
        return self.positions.shape[0]

    def channels(self, tag: str) -> np.ndarray:
        cols = [i for i, t in enumerate(self.channel_tags) if t == tag]
        return self.features[:, cols]

    def rgb(self) -> np.ndarray:
        return self.channels(TAG_RGB)

    def subset(self, indices) -> "FeaturedPointCloud":
        idx = np.asarray(indices, dtype=int)
        return FeaturedPointCloud(self.positions[idx], self.features[idx], self.channel_tags)

    def transformed(self, pose: Pose) -> "FeaturedPointCloud":
        return FeaturedPointCloud(pose.apply(self.positions), self.features, self.channel_tags)


def merge_clouds(clouds: list[FeaturedPointCloud]) -> FeaturedPointCloud:
    if not clouds:
        raise InvalidArgumentError("nothing to merge")
    tags = clouds[0].channel_tags
    for c in clouds[1:]:
        if c.channel_tags != tags:
            raise InvalidArgumentError("channel tags differ between clouds")
    return FeaturedPointCloud(
        np.concatenate([c.positions for c in clouds]),
        np.concatenate([c.features for c in clouds]),
        tags,
    )


def fps_indices(positions: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Greedy farthest-point selection of k indices.

    The first index is drawn from the seeded RNG through a lexicographic
    ranking of positions, so the selected *points* do not depend on the
    input ordering. Each later pick maximizes the minimum distance to the
    already-selected set, ties broken by lowest index.
    """
    pts = np.asarray(positions, dtype=float)
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise InvalidArgumentError(f"k must satisfy 1 <= k <= {n}, got {k}")
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))
    rng = np.random.default_rng(seed)
    first = int(order[min(int(rng.random() * n), n - 1)])
    chosen = np.empty(k, dtype=int)
    chosen[0] = first
    dists = np.linalg.norm(pts - pts[first], axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(dists))
        chosen[i] = nxt
        np.minimum(dists, np.linalg.norm(pts - pts[nxt], axis=1), out=dists)
    return chosen


def farthest_point_sample(cloud: FeaturedPointCloud, k: int, seed: int) -> np.ndarray:
    return fps_indices(cloud.positions, k, seed)


def ball_query_indices(positions: np.ndarray, center, radius: float,
                       max_neighbors: int | None = None) -> np.ndarray:
    """Indices of points within `radius` of `center`, ascending, truncated."""
    if radius <= 0:
        raise InvalidArgumentError("radius must be positive")
    c = _vec3(center)
    d = np.linalg.norm(np.asarray(positions, dtype=float) - c, axis=1)
    idx = np.flatnonzero(d <= radius)
    if max_neighbors is not None:
        idx = idx[:max_neighbors]
    return idx


def ball_query(cloud: FeaturedPointCloud, center, radius: float,
               max_neighbors: int | None = None) -> np.ndarray:
    return ball_query_indices(cloud.positions, center, radius, max_neighbors)


def _channel_property_names(tags: list[str]) -> list[str]:
    names = []
    counts = {TAG_RGB: 0, TAG_CONTACT: 0, TAG_OTHER: 0}
    rgb_letters = ("r", "g", "b")
    for tag in tags:
        i = counts[tag]
        counts[tag] += 1
        if tag == TAG_RGB:
            names.append(rgb_letters[i] if i < 3 else f"rgb_{i}")
        elif tag == TAG_CONTACT:
            names.append(f"contact_prob_{i}")
        else:
            names.append(f"extra_{i}")
    return names


def _tag_from_property(name: str) -> str:
    if name in ("r", "g", "b") or name.startswith("rgb_"):
        return TAG_RGB
    if name.startswith("contact_prob_"):
        return TAG_CONTACT
    return TAG_OTHER


def save_ply(cloud: FeaturedPointCloud, path) -> None:
    """Write an ASCII PLY with double-precision x y z plus named channels."""
    names = _channel_property_names(cloud.channel_tags)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(cloud)}\n")
        for axis in ("x", "y", "z"):
            f.write(f"property double {axis}\n")
        for name in names:
            f.write(f"property double {name}\n")
        f.write("end_header\n")
        data = np.column_stack([cloud.positions, cloud.features]) if cloud.features.size \
            else cloud.positions
        for row in data:
            f.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_ply(path) -> FeaturedPointCloud:
    with open(path) as f:
        if f.readline().strip() != "ply":
            raise InvalidArgumentError(f"{path}: not a PLY file")
        n = None
        props: list[str] = []
        for line in f:
            line = line.strip()
            if line.startswith("element vertex"):
                n = int(line.split()[-1])
            elif line.startswith("property"):
                props.append(line.split()[-1])
            elif line == "end_header":
                break
        if n is None or props[:3] != ["x", "y", "z"]:
            raise InvalidArgumentError(f"{path}: unsupported PLY layout")
        rows = [[float(v) for v in f.readline().split()] for _ in range(n)]
    data = np.asarray(rows, dtype=float).reshape(n, len(props))
    tags = [_tag_from_property(p) for p in props[3:]]
    return FeaturedPointCloud(data[:, :3], data[:, 3:], tags)
