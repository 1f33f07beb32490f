"""Episode execution: grasp acquisition, strategy orchestration, scoring.

One episode drives an articulated object from its initial configuration
to a randomized goal. Grippers are acquired per part (contact proposal,
IK, RRT approach, grasp), then the object is moved by exact kinematic
tracking; the strategy decides how grasping and motion interleave.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..articulated import ObservedScene, SceneConfig
from ..errors import InvalidArgumentError
from ..explore import PoolEntry
from ..geometry import Pose
from ..grasp import AffordanceRegion, GripperContact, antipodal_valid
from ..ocao import OcaoCommand, plan_targets
from ..plan.arm import ik_solve, pose_error, standard_arm_ik_seeds
from ..plan.rrt import (
    DEFAULT_RESOLUTION,
    JointPath,
    edge_free,
    rrt_plan,
    straight_path,
)
from ..plan.sim import (
    STAGE_GRASP,
    STAGE_IK,
    STAGE_NONE,
    STAGE_PLAN,
    Simulator,
)
from ..rng import derive_seed, generator
from .env import Environment, sample_goal

STRATEGIES = ("sequential", "parallel", "sequential-parallel")

# 180-degree turn about the approach axis: the two-finger grasp symmetry.
_FLIP = np.diag([-1.0, -1.0, 1.0])

_STAGE_RANK = {STAGE_IK: 0, STAGE_PLAN: 1, STAGE_GRASP: 2}

# Grasp approach: descend onto the grasp frame from this height in short
# legs, so arms reaching between obstacles (or each other) enter the
# pocket vertically. One long joint-space leg would bow sideways; each
# short leg stays close to the vertical line through the grasp.
_APPROACH_LIFT = 0.30
_DESCENT_STEP = 0.06
# The planner is a rescue for approaches the descent ladder cannot
# handle; a failed query must stay cheap, so its budget is small.
_RESCUE_ITERS = 600


@dataclass(frozen=True)
class Episode:
    """One manipulation task: scene, goal configuration, and strategy.

    `grasp_order` is a preferred part-id sequence; parts the goal leaves
    unmoved are skipped. `split` only matters for sequential-parallel:
    that many parts are grasped and moved one at a time, the rest are
    all grasped and then moved together.
    """

    scene: SceneConfig
    command: OcaoCommand
    strategy: str
    seed: int
    pos_tol: float = 0.02
    ang_tol: float = 0.05
    grasp_order: tuple[int, ...] | None = None
    split: int = 1
    trace_path: str | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise InvalidArgumentError(
                f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.pos_tol <= 0 or self.ang_tol <= 0:
            raise InvalidArgumentError("success thresholds must be positive")
        if self.split < 0:
            raise InvalidArgumentError("split must be non-negative")
        obj = self.scene.obj
        for jid, angle in self.command.target_joint_angles.items():
            lo, hi = obj.joint(jid).limits
            if not lo - 1e-9 <= angle <= hi + 1e-9:
                raise InvalidArgumentError(
                    f"goal angle {angle:.4f} for part {jid} outside limits")


@dataclass(frozen=True)
class EpisodeResult:
    """Outcome of one episode, with per-part final pose errors."""

    success: bool
    stage: str
    part_errors: dict[int, tuple[float, float]]
    pos_tol: float
    ang_tol: float
    detail: str = ""
    trace_path: str | None = None

    def __post_init__(self):
        under = all(p <= self.pos_tol and a <= self.ang_tol
                    for p, a in self.part_errors.values())
        if self.success != (self.stage == STAGE_NONE and under):
            raise InvalidArgumentError(
                "success flag contradicts stage and pose errors")


# ---------------------------------------------------------------------------
# Contact-proposal models
# ---------------------------------------------------------------------------


class PoolReplayModel:
    """Replays the stored contacts of one pool entry."""

    needs_observation = False
    deterministic = True
    label = "pool"

    def __init__(self, entry: PoolEntry):
        self.entry = entry

    def propose(self, observed, part_id: int, allowed, rng) -> GripperContact:
        for contact in self.entry.contacts:
            if contact.part_id == part_id:
                return contact
        raise InvalidArgumentError(f"entry has no contact for part {part_id}")


class CvaeSampler:
    """Contact proposals decoded from a trained generative model."""

    needs_observation = True

    def __init__(self, obj, store, config, mode: str = "prior",
                 z_value: float | None = None, label: str | None = None):
        from ..cvae.sampling import MODE_PRIOR, MODE_SWEEP

        if mode == MODE_SWEEP and z_value is None:
            raise InvalidArgumentError("latent-sweep mode needs a z value")
        self.obj = obj
        self.store = store
        self.config = config
        self.mode = mode
        self.z_value = z_value
        self.deterministic = mode != MODE_PRIOR
        self.label = label if label is not None else mode
        self._cache: tuple | None = None

    def _structure(self, observed: ObservedScene):
        from ..cvae.network import build_structure

        if self._cache is None or self._cache[0] is not observed:
            self._cache = (observed,
                           build_structure(observed.cloud.positions, self.config))
        return self._cache[1]

    def propose(self, observed, part_id: int, allowed, rng) -> GripperContact:
        from ..cvae.sampling import sample_contacts

        return sample_contacts(observed, self.obj, self.store, self.config,
                               allowed, self.mode, z_value=self.z_value,
                               rng=rng, structure=self._structure(observed))


def affordance_indices(observed: ObservedScene,
                       region: AffordanceRegion) -> np.ndarray:
    """Observed-cloud indices of one part's affordance points."""
    wanted = np.fromiter(region.indices, dtype=int)
    mask = ((observed.part_ids == region.part_id)
            & np.isin(observed.source_indices, wanted))
    return np.flatnonzero(mask)


# ---------------------------------------------------------------------------
# Grasp acquisition
# ---------------------------------------------------------------------------


def _free_arms_by_distance(sim, target: Pose) -> list[str]:
    free = [name for name in sim.arms if not sim.grasp.holds(name)]
    def distance(name):
        base = sim.arms[name].base_pose.translation
        return float(np.linalg.norm(base[:2] - target.translation[:2]))
    return sorted(free, key=distance)


def _reach_path(sim, episode: Episode, arm_name: str, part_id: int,
                goal_q: np.ndarray, target: Pose, attempt: int) -> JointPath | None:
    """Joint path from the arm's current configuration to the grasp
    configuration.

    Preferred route: plan to a staging pose lifted straight above the
    grasp frame, then descend the vertical line in short joint-space
    legs; grasp pockets between parts and other arms are usually only
    open from above. Falls back to a direct planner query with the same
    small budget.
    """
    arm = sim.arms[arm_name]

    def free_fn(q):
        return sim.arm_collision_free(arm_name, q, (part_id,))

    start = sim.arm_q[arm_name]
    rungs = [np.asarray(goal_q, dtype=float)]
    lift = _DESCENT_STEP
    while lift < _APPROACH_LIFT + 1e-9:
        pose = Pose(target.rotation,
                    target.translation + np.array([0.0, 0.0, lift]))
        ik = ik_solve(arm, pose, q0=rungs[-1],
                      extra_seeds=standard_arm_ik_seeds(arm, pose),
                      seed=derive_seed(episode.seed, "pre", attempt,
                                       len(rungs)))
        if (not ik.success or not free_fn(ik.q)
                or not edge_free(rungs[-1], ik.q, free_fn, DEFAULT_RESOLUTION)):
            rungs = None
            break
        rungs.append(ik.q)
        lift += _DESCENT_STEP

    if rungs is not None:
        approach = rrt_plan(start, rungs[-1], arm.limits, free_fn,
                            max_iters=_RESCUE_ITERS,
                            seed=derive_seed(episode.seed, "rrt", attempt))
        if approach is not None:
            waypoints = approach.waypoints
            for above, below in zip(rungs[:0:-1], rungs[-2::-1]):
                waypoints += straight_path(above, below).waypoints[1:]
            return JointPath(waypoints, approach.resolution)
    return rrt_plan(start, goal_q, arm.limits, free_fn,
                    max_iters=_RESCUE_ITERS,
                    seed=derive_seed(episode.seed, "rrt-direct", attempt))


def _acquire(sim, env: Environment, episode: Episode, model, part_id: int,
             rng) -> str | None:
    """Grasp one part: propose, reach, attach. Returns the failure stage
    (None on success). The sim is mutated: one arm ends attached."""
    observed = (sim.observe(env.sample_size, env.observe_seed)
                if model.needs_observation else None)
    allowed = (affordance_indices(observed, env.region(part_id))
               if observed is not None else None)
    if observed is not None and allowed.size == 0:
        return STAGE_GRASP

    deepest = STAGE_IK
    tried: set[tuple] = set()
    for attempt in range(env.resample_budget):
        contact = model.propose(observed, part_id, allowed, rng)
        key = tuple((f.part_id, f.point_index) for f in contact.fingers)
        if key in tried:
            if model.deterministic:
                break
            continue
        tried.add(key)

        f1, f2 = contact.fingers
        span = float(np.linalg.norm(f2.position_vec() - f1.position_vec()))
        if span > sim.config.max_opening or span < 1e-12 \
                or not antipodal_valid(f1, f2, sim.config.friction):
            deepest = max(deepest, STAGE_GRASP, key=_STAGE_RANK.get)
            continue

        goal = sim.grasp_goal_pose(contact)
        flipped = Pose(goal.rotation @ _FLIP, goal.translation)
        for arm_name in _free_arms_by_distance(sim, goal):
            arm = sim.arms[arm_name]
            for target in (goal, flipped):
                ik = ik_solve(arm, target, q0=sim.arm_q[arm_name],
                              extra_seeds=standard_arm_ik_seeds(arm, target),
                              seed=derive_seed(episode.seed, "ik", attempt))
                if not ik.success:
                    continue
                deepest = max(deepest, STAGE_PLAN, key=_STAGE_RANK.get)
                if not sim.arm_collision_free(arm_name, ik.q,
                                              extra_excluded_parts=(part_id,)):
                    continue
                path = _reach_path(sim, episode, arm_name, part_id, ik.q,
                                   target, attempt)
                if path is None:
                    continue
                report = sim.follow_path(arm_name, path,
                                         extra_excluded_parts=(part_id,))
                if not report.success:
                    continue
                deepest = max(deepest, STAGE_GRASP, key=_STAGE_RANK.get)
                if sim.try_grasp(arm_name, contact).success:
                    return None
    return deepest


# ---------------------------------------------------------------------------
# Episode runner
# ---------------------------------------------------------------------------


def _own_dof_command(obj, part_id: int, root_target: Pose,
                     target_angles: dict[int, float]) -> OcaoCommand:
    if part_id == obj.root_id:
        return OcaoCommand(target_root_pose=root_target)
    return OcaoCommand(target_joint_angles={part_id: target_angles[part_id]})


def _score(sim, plan, episode: Episode, stage: str,
           detail: str) -> EpisodeResult:
    errors = {}
    for pid in sim.obj.part_ids:
        _, pos_err, rot_err = pose_error(sim.part_poses[pid],
                                         plan.part_targets[pid])
        errors[pid] = (pos_err, rot_err)
    under = all(p <= episode.pos_tol and a <= episode.ang_tol
                for p, a in errors.values())
    success = stage == STAGE_NONE and under
    if episode.trace_path:
        sim.save_trace(episode.trace_path)
    return EpisodeResult(success, stage, errors, episode.pos_tol,
                         episode.ang_tol, detail, episode.trace_path)


def run_episode(env: Environment, episode: Episode, model) -> EpisodeResult:
    """Execute one episode under the given contact-proposal model.

    Sequential: grasp part i, move its own degree of freedom, repeat.
    Parallel: grasp every moved part first, then one combined motion.
    Sequential-parallel: the first `split` parts go sequentially, the
    rest are all grasped and then moved together.
    """
    obj = episode.scene.obj
    config = env.sim_config
    if episode.trace_path:
        config = replace(config, keep_trace=True)
    sim = Simulator(episode.scene, arms=env.arms, config=config)

    plan = plan_targets(obj, sim.part_poses, episode.command)
    moved = list(plan.moved_parts)
    if len(moved) > len(env.arms):
        raise InvalidArgumentError(
            f"goal moves {len(moved)} parts but only {len(env.arms)} arms exist")

    if episode.grasp_order is not None:
        order = [p for p in episode.grasp_order if p in moved]
        order += [p for p in moved if p not in order]
    else:
        order = sorted(moved, key=lambda p: (p != obj.root_id, p))

    if not order:
        report = sim.track_object_motion(episode.command)
        return _score(sim, plan, episode, report.stage, report.detail)

    rng = generator(episode.seed, "proposal")
    root_target = plan.part_targets[obj.root_id]

    if episode.strategy == "sequential":
        phases = [([p], _own_dof_command(obj, p, root_target,
                                         plan.target_angles)) for p in order]
    elif episode.strategy == "parallel":
        phases = [(order, episode.command)]
    else:
        split = min(episode.split, len(order))
        phases = [([p], _own_dof_command(obj, p, root_target,
                                         plan.target_angles))
                  for p in order[:split]]
        rest = order[split:]
        if rest:
            angles = {p: plan.target_angles[p] for p in rest
                      if p != obj.root_id}
            root = root_target if obj.root_id in rest else None
            phases.append((rest, OcaoCommand(root, angles)))

    for parts, command in phases:
        for part in parts:
            stage = _acquire(sim, env, episode, model, part, rng)
            if stage is not None:
                return _score(sim, plan, episode, stage,
                              f"no grasp on part {part}")
        report = sim.track_object_motion(command)
        if not report.success:
            return _score(sim, plan, episode, report.stage, report.detail)

    return _score(sim, plan, episode, STAGE_NONE, "")


# ---------------------------------------------------------------------------
# Pool verification episodes
# ---------------------------------------------------------------------------


def verification_episode(env: Environment, entry: PoolEntry) -> Episode:
    """The canonical episode that validates a pool entry.

    Depends only on the entry (goal and planner seeds derive from the
    entry's own seed), so the episode that accepted an entry during
    exploration is the same one any later replay runs.
    """
    gseed = 0 if entry.seed is None else int(entry.seed)
    goal = sample_goal(env, entry.scene, generator(gseed, "verify"))
    order = tuple(entry.contacts[i].part_id for i in entry.grasp_order)
    return Episode(entry.scene, goal, "sequential",
                   seed=derive_seed(gseed, "verify"), grasp_order=order)


def run_entry(env: Environment, entry: PoolEntry) -> EpisodeResult:
    return run_episode(env, verification_episode(env, entry),
                       PoolReplayModel(entry))


def pool_executor(obj, affordances):
    """Default exploration executor: full verification episodes.

    The rng argument of the returned callable is deliberately unused:
    acceptance must be a pure function of the entry so stored pools
    replay bit-identically.
    """
    from .env import env_for_object

    env = env_for_object(obj, tuple(affordances))

    def execute(entry: PoolEntry, rng) -> bool:
        return run_entry(env, entry).success

    return execute
