"""Distance queries between capsules, boxes, and point sets.

Everything returns signed clearance: positive means separated by that
much, negative means penetrating. Arm links are capsules; parts and
static obstacles are oriented boxes; held parts are additionally checked
through their sampled surface points, which keeps every query either
capsule-vs-capsule, capsule-vs-box, or points-vs-box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..articulated import BoxShape
from ..errors import InvalidArgumentError
from ..geometry import Pose

_EPS = 1e-12


@dataclass(frozen=True)
class Capsule:
    """Segment from p0 to p1 swept by a sphere of the given radius."""

    p0: np.ndarray
    p1: np.ndarray
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise InvalidArgumentError("capsule radius must be positive")
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float))
        object.__setattr__(self, "p1", np.asarray(self.p1, dtype=float))


@dataclass(frozen=True)
class Obb:
    """Oriented box: world center, half extents, world rotation."""

    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "half_extents", np.asarray(self.half_extents, dtype=float))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))


def obb_from_box(box: BoxShape, pose: Pose) -> Obb:
    """Place a local box shape in the world."""
    return Obb(pose.apply(box.center_vec()), box.half_vec(),
               pose.rotation @ box.rotation_mat())


def segment_closest_points(p1, q1, p2, q2) -> tuple[np.ndarray, np.ndarray]:
    """Closest points between segments [p1, q1] and [p2, q2]."""
    d1, d2, r = q1 - p1, q2 - p2, p1 - p2
    a, e, f = d1 @ d1, d2 @ d2, d2 @ r

    if a < _EPS and e < _EPS:
        return p1, p2
    if a < _EPS:
        s, t = 0.0, np.clip(f / e, 0.0, 1.0)
    else:
        c = d1 @ r
        if e < _EPS:
            s, t = np.clip(-c / a, 0.0, 1.0), 0.0
        else:
            b = d1 @ d2
            denom = a * e - b * b
            s = np.clip((b * f - c * e) / denom, 0.0, 1.0) if denom > _EPS else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t, s = 0.0, np.clip(-c / a, 0.0, 1.0)
            elif t > 1.0:
                t, s = 1.0, np.clip((b - c) / a, 0.0, 1.0)
    return p1 + s * d1, p2 + t * d2


def capsule_capsule_clearance(a: Capsule, b: Capsule) -> float:
    ca, cb = segment_closest_points(a.p0, a.p1, b.p0, b.p1)
    return float(np.linalg.norm(ca - cb) - a.radius - b.radius)


def points_obb_clearance(points: np.ndarray, obb: Obb) -> float:
    """Smallest signed distance from any of the points to the box surface."""
    local = (np.atleast_2d(points) - obb.center) @ obb.rotation
    excess = np.abs(local) - obb.half_extents
    outside = np.linalg.norm(np.maximum(excess, 0.0), axis=1)
    inside = np.minimum(excess.max(axis=1), 0.0)
    return float(np.min(outside + inside))


def point_obb_clearance(point, obb: Obb) -> float:
    return points_obb_clearance(np.asarray(point, dtype=float)[None, :], obb)


def capsule_obb_clearance(cap: Capsule, obb: Obb, iters: int = 80) -> float:
    """Signed clearance between a capsule and a box.

    The signed distance from a point on the segment to the box is convex
    in the segment parameter (distance to a convex set along a line), so
    a ternary search finds the minimum.
    """
    def sdf(t: float) -> float:
        return point_obb_clearance(cap.p0 + t * (cap.p1 - cap.p0), obb)

    lo, hi = 0.0, 1.0
    for _ in range(iters):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if sdf(m1) <= sdf(m2):
            hi = m2
        else:
            lo = m1
    t = (lo + hi) / 2.0
    return float(min(sdf(t), sdf(0.0), sdf(1.0)) - cap.radius)


def capsule_shapes_clearance(cap: Capsule, capsules=(), obbs=()) -> float:
    """Minimum clearance of one capsule against collections of shapes."""
    best = np.inf
    for other in capsules:
        best = min(best, capsule_capsule_clearance(cap, other))
    for obb in obbs:
        best = min(best, capsule_obb_clearance(cap, obb))
    return float(best)


def capsule_batch(capsules) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack capsules into (n, 3) endpoint arrays and an (n,) radius array."""
    p0 = np.array([c.p0 for c in capsules], dtype=float)
    p1 = np.array([c.p1 for c in capsules], dtype=float)
    radii = np.array([c.radius for c in capsules], dtype=float)
    return p0, p1, radii


def obb_batch(obbs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack boxes into (m, 3) center/half-extent arrays and (m, 3, 3) rotations."""
    centers = np.array([o.center for o in obbs], dtype=float)
    halves = np.array([o.half_extents for o in obbs], dtype=float)
    rots = np.array([o.rotation for o in obbs], dtype=float)
    return centers, halves, rots


def segments_obbs_clearance(p0: np.ndarray, p1: np.ndarray, radii: np.ndarray,
                            centers: np.ndarray, halves: np.ndarray,
                            rots: np.ndarray, iters: int = 80) -> np.ndarray:
    """Pairwise signed clearance matrix between capsules and boxes.

    Runs the same ternary search as capsule_obb_clearance for every
    (capsule, box) pair at once; entry [i, j] matches
    capsule_obb_clearance(capsule_i, box_j).
    """
    n, m = len(p0), len(centers)
    if n == 0 or m == 0:
        return np.empty((n, m))
    # Segment endpoints expressed in each box frame once; the search then
    # only interpolates: R^T (p0 + t d - c) = R^T (p0 - c) + t R^T d.
    base_local = np.einsum("nmj,mjk->nmk", p0[:, None, :] - centers, rots)
    diff_local = np.einsum("nj,mjk->nmk", p1 - p0, rots)

    def sdf(tvals: np.ndarray) -> np.ndarray:
        local = base_local + tvals[..., None] * diff_local
        excess = np.abs(local) - halves
        outside = np.linalg.norm(np.maximum(excess, 0.0), axis=-1)
        inside = np.minimum(np.max(excess, axis=-1), 0.0)
        return outside + inside

    lo = np.zeros((n, m))
    hi = np.ones((n, m))
    for _ in range(iters):
        third = (hi - lo) / 3.0
        probes = np.stack((lo + third, hi - third))
        d = sdf(probes)
        smaller = d[0] <= d[1]
        hi = np.where(smaller, probes[1], hi)
        lo = np.where(smaller, lo, probes[0])
    candidates = np.stack(((lo + hi) / 2.0, np.zeros((n, m)), np.ones((n, m))))
    return sdf(candidates).min(axis=0) - radii[:, None]


def segments_segments_clearance(a0: np.ndarray, a1: np.ndarray,
                                ar: np.ndarray, b0: np.ndarray,
                                b1: np.ndarray, br: np.ndarray) -> np.ndarray:
    """Pairwise signed clearance matrix between two capsule sets.

    Entry [i, j] matches capsule_capsule_clearance(a_i, b_j), including
    the degenerate point-segment cases.
    """
    n, m = len(a0), len(b0)
    if n == 0 or m == 0:
        return np.empty((n, m))
    d1 = (a1 - a0)[:, None, :]
    d2 = (b1 - b0)[None, :, :]
    r = a0[:, None, :] - b0[None, :, :]
    a = (d1 * d1).sum(-1)
    e = (d2 * d2).sum(-1)
    f = (d2 * r).sum(-1)
    c = (d1 * r).sum(-1)
    b = (d1 * d2).sum(-1)
    a_deg = a < _EPS
    e_deg = e < _EPS
    a_safe = np.where(a_deg, 1.0, a)
    e_safe = np.where(e_deg, 1.0, e)

    denom = a * e - b * b
    s = np.where(denom > _EPS,
                 np.clip((b * f - c * e) / np.where(denom > _EPS, denom, 1.0),
                         0.0, 1.0),
                 0.0)
    t = (b * s + f) / e_safe
    s = np.where(t < 0.0, np.clip(-c / a_safe, 0.0, 1.0),
                 np.where(t > 1.0, np.clip((b - c) / a_safe, 0.0, 1.0), s))
    t = np.clip(t, 0.0, 1.0)
    s = np.where(a_deg, 0.0, np.where(e_deg, np.clip(-c / a_safe, 0.0, 1.0), s))
    t = np.where(a_deg & e_deg, 0.0,
                 np.where(a_deg, np.clip(f / e_safe, 0.0, 1.0),
                          np.where(e_deg, 0.0, t)))
    gap = (a0[:, None, :] + s[..., None] * d1) - (b0[None, :, :] + t[..., None] * d2)
    return np.linalg.norm(gap, axis=-1) - ar[:, None] - br[None, :]
