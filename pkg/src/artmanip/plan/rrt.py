"""Joint-space RRT with straight-line shortcutting.

Configurations are joint vectors; edges are validated by sampling at a
fixed per-joint resolution. The planner is deterministic for a given
seed. A direct start-to-goal connection is always tried first, and found
paths are greedily shortcut before being densified to the resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError
from ..rng import generator

DEFAULT_STEP = 0.1
DEFAULT_GOAL_BIAS = 0.1
DEFAULT_MAX_ITERS = 20000
DEFAULT_RESOLUTION = 0.05


@dataclass(frozen=True)
class JointPath:
    """Dense joint-space path; consecutive waypoints differ by at most
    `resolution` in every joint."""

    waypoints: tuple[tuple[float, ...], ...]
    resolution: float

    def __post_init__(self) -> None:
        if not self.waypoints:
            raise InvalidArgumentError("path needs at least one waypoint")
        dof = len(self.waypoints[0])
        if any(len(w) != dof for w in self.waypoints):
            raise InvalidArgumentError("waypoints must share one joint count")
        if self.resolution <= 0:
            raise InvalidArgumentError("resolution must be positive")

    def __len__(self) -> int:
        return len(self.waypoints)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.waypoints, dtype=float)


def _densify(points: list[np.ndarray], resolution: float) -> list[np.ndarray]:
    out = [points[0]]
    for a, b in zip(points[:-1], points[1:]):
        gap = np.max(np.abs(b - a))
        steps = max(1, int(np.ceil(gap / resolution)))
        for k in range(1, steps + 1):
            out.append(a + (b - a) * (k / steps))
    return out


def straight_path(a, b, resolution: float = DEFAULT_RESOLUTION) -> JointPath:
    """Densified straight joint-space segment from a to b (not validated)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return JointPath(tuple(tuple(p) for p in _densify([a, b], resolution)),
                     resolution)


def edge_free(a: np.ndarray, b: np.ndarray, free_fn, resolution: float) -> bool:
    """Whether every sample along [a, b] at the resolution is collision-free."""
    gap = np.max(np.abs(b - a))
    steps = max(1, int(np.ceil(gap / resolution)))
    for k in range(steps + 1):
        if not free_fn(a + (b - a) * (k / steps)):
            return False
    return True


def _shortcut(points: list[np.ndarray], free_fn, resolution: float) -> list[np.ndarray]:
    """Greedy forward shortcutting: from each node, jump to the farthest
    directly reachable later node."""
    out = [points[0]]
    i = 0
    while i < len(points) - 1:
        j = len(points) - 1
        while j > i + 1 and not edge_free(points[i], points[j], free_fn, resolution):
            j -= 1
        out.append(points[j])
        i = j
    return out


def rrt_plan(start, goal, limits, free_fn, step: float = DEFAULT_STEP,
             goal_bias: float = DEFAULT_GOAL_BIAS,
             max_iters: int = DEFAULT_MAX_ITERS,
             resolution: float = DEFAULT_RESOLUTION,
             seed: int = 0) -> JointPath | None:
    """Plan a collision-free joint path from start to goal.

    `free_fn(q) -> bool` is the validity oracle; `limits` is a sequence of
    (lower, upper) per joint. Returns None when no path is found within
    the iteration budget. Start and goal must themselves be free.
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    lo = np.array([l for l, _ in limits])
    hi = np.array([h for _, h in limits])
    if start.shape != lo.shape or goal.shape != lo.shape:
        raise InvalidArgumentError("start/goal dimensionality must match limits")
    if not free_fn(start):
        raise InvalidArgumentError("start configuration is in collision")
    if not free_fn(goal):
        raise InvalidArgumentError("goal configuration is in collision")

    if edge_free(start, goal, free_fn, resolution):
        return JointPath(tuple(tuple(p) for p in _densify([start, goal], resolution)),
                         resolution)

    rng = generator(seed, "rrt")
    nodes = np.empty((256, start.shape[0]))
    nodes[0] = start
    count = 1
    parents = [-1]

    for _ in range(max_iters):
        target = goal if rng.uniform() < goal_bias else rng.uniform(lo, hi)
        dists = np.max(np.abs(nodes[:count] - target), axis=1)
        nearest = int(np.argmin(dists))
        direction = target - nodes[nearest]
        gap = np.max(np.abs(direction))
        if gap < 1e-12:
            continue
        new = nodes[nearest] + direction * min(1.0, step / gap)
        if not edge_free(nodes[nearest], new, free_fn, resolution):
            continue
        if count == len(nodes):
            nodes = np.concatenate((nodes, np.empty_like(nodes)))
        nodes[count] = new
        count += 1
        parents.append(nearest)
        if np.max(np.abs(new - goal)) <= step and edge_free(new, goal, free_fn,
                                                            resolution):
            raw = [goal]
            idx = count - 1
            while idx >= 0:
                raw.append(nodes[idx])
                idx = parents[idx]
            raw.reverse()
            short = _shortcut(raw, free_fn, resolution)
            return JointPath(tuple(tuple(p) for p in _densify(short, resolution)),
                             resolution)
    return None
