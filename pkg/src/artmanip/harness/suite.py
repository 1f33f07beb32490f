"""Seeded experiment suites: JSON config in, CSV success table out.

A suite runs K episodes for every (object, strategy, model) cell and
tallies success rates with failure-stage histograms. Every random draw
derives from the master seed, the cell identity, and the episode index,
so reruns of the same config produce byte-identical tables.
"""

from __future__ import annotations

import json

import numpy as np

from ..articulated import SceneConfig, make_block_obstacle, observe_scene
from ..errors import ConfigError
from ..explore import load_pool
from ..plan.sim import FAILURE_STAGES
from ..rng import derive_seed, generator
from .env import GoalRanges, OBJECT_NAMES, make_env, sample_goal, sample_scene
from .episodes import (
    STRATEGIES,
    CvaeSampler,
    Episode,
    affordance_indices,
    run_entry,
    run_episode,
)

CSV_COLUMNS = ("object", "strategy", "model", "episodes", "successes", "rate",
               "fail_ik", "fail_plan", "fail_grasp", "fail_move",
               "fail_collision")

MODEL_KINDS = ("prior", "top1", "latent-sweep", "pool")
OBSTACLE_MODES = ("none", "block_top1")

_BLOCK_HALF = (0.02, 0.02, 0.025)
_BLOCK_HEIGHT = 0.08


def _expect(d: dict, field: str, kind, *, default=None, required=False,
            positive=False, prefix=""):
    name = f"{prefix}{field}"
    if field not in d:
        if required:
            raise ConfigError(name, "required field is missing")
        return default
    value = d[field]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ConfigError(name, f"expected {kind.__name__}, got {value!r}")
    if positive and value <= 0:
        raise ConfigError(name, f"must be positive, got {value!r}")
    return value


def _parse_model(cell: dict, prefix: str) -> dict:
    model = cell.get("model")
    if not isinstance(model, dict):
        raise ConfigError(f"{prefix}model", "expected an object")
    kind = _expect(model, "kind", str, required=True, prefix=f"{prefix}model.")
    if kind not in MODEL_KINDS:
        raise ConfigError(f"{prefix}model.kind",
                          f"unknown kind {kind!r}; choose from {MODEL_KINDS}")
    if kind == "pool":
        _expect(model, "pool", str, required=True, prefix=f"{prefix}model.")
    else:
        _expect(model, "checkpoint", str, required=True,
                prefix=f"{prefix}model.")
    if kind == "latent-sweep":
        _expect(model, "z", float, required=True, prefix=f"{prefix}model.")
    return model


def parse_config(config: dict) -> dict:
    """Validate a suite config, raising ConfigError naming the bad field."""
    if not isinstance(config, dict):
        raise ConfigError("(root)", "config must be a JSON object")
    parsed = {
        "seed": _expect(config, "seed", int, required=True),
        "episodes": _expect(config, "episodes", int, required=True),
        "threshold_pos": _expect(config, "threshold_pos", float,
                                 default=0.02, positive=True),
        "threshold_angle": _expect(config, "threshold_angle", float,
                                   default=0.05, positive=True),
        "sample_size": _expect(config, "sample_size", int, default=512,
                               positive=True),
        "obstacle": _expect(config, "obstacle", str, default="none"),
        "output": _expect(config, "output", str, default=None),
    }
    if parsed["episodes"] < 0:
        raise ConfigError("episodes", "must be non-negative")
    if parsed["obstacle"] not in OBSTACLE_MODES:
        raise ConfigError("obstacle",
                          f"choose from {OBSTACLE_MODES}")
    goal = config.get("goal")
    if goal is not None:
        if not isinstance(goal, dict):
            raise ConfigError("goal", "expected an object")
        known = {"xy", "lift", "yaw", "joint_delta", "joint_margin"}
        for key in goal:
            if key not in known:
                raise ConfigError(f"goal.{key}", "unknown range name")
        try:
            parsed["goal"] = GoalRanges(**{k: float(v)
                                           for k, v in goal.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError("goal", str(exc)) from None
    else:
        parsed["goal"] = GoalRanges()

    cells = config.get("cells")
    if not isinstance(cells, list) or not cells:
        raise ConfigError("cells", "expected a non-empty list")
    parsed_cells = []
    for i, cell in enumerate(cells):
        prefix = f"cells[{i}]."
        if not isinstance(cell, dict):
            raise ConfigError(f"cells[{i}]", "expected an object")
        obj_name = _expect(cell, "object", str, required=True, prefix=prefix)
        if obj_name not in OBJECT_NAMES:
            raise ConfigError(f"{prefix}object",
                              f"choose from {OBJECT_NAMES}")
        strategy = _expect(cell, "strategy", str, required=True, prefix=prefix)
        if strategy not in STRATEGIES:
            raise ConfigError(f"{prefix}strategy",
                              f"choose from {STRATEGIES}")
        model = _parse_model(cell, prefix)
        if parsed["obstacle"] != "none" and model["kind"] == "pool":
            raise ConfigError(f"{prefix}model.kind",
                              "obstacle modes need a checkpoint model")
        label = _expect(cell, "label", str, default=model["kind"],
                        prefix=prefix)
        parsed_cells.append({"object": obj_name, "strategy": strategy,
                             "model": model, "label": label})
    parsed["cells"] = parsed_cells
    return parsed


def _build_model(env, model_spec: dict):
    from ..cvae.params import load_params
    from ..cvae.sampling import MODE_PRIOR, MODE_SWEEP, MODE_TOP1

    kind = model_spec["kind"]
    if kind == "pool":
        pool = load_pool(model_spec["pool"])
        if pool.object() is None \
                or pool.object().content_hash() != env.obj.content_hash():
            raise ConfigError("model.pool",
                              "pool object does not match the cell object")
        return ("pool", pool)
    store, net_config = load_params(model_spec["checkpoint"])
    mode = {"prior": MODE_PRIOR, "top1": MODE_TOP1,
            "latent-sweep": MODE_SWEEP}[kind]
    sampler = CvaeSampler(env.obj, store, net_config, mode=mode,
                          z_value=model_spec.get("z"), label=kind)
    return ("cvae", sampler)


def _top1_sampler(env, model_spec: dict):
    from ..cvae.params import load_params
    from ..cvae.sampling import MODE_TOP1

    store, net_config = load_params(model_spec["checkpoint"])
    return CvaeSampler(env.obj, store, net_config, mode=MODE_TOP1)


def block_top1_statics(env, top1, scene: SceneConfig,
                       rng: np.random.Generator):
    """An obstacle hovering over the top-1 contact of the first grasp.

    The blocked contact depends on the observation, which the block
    itself perturbs, so the placement iterates to a fixpoint: propose,
    place, re-propose until the proposal lands under the block. The
    block floats above the part (the grasp wrist corridor) so object
    motion underneath stays collision-free.
    """
    jitter = rng.uniform(-0.005, 0.005, 2)
    first_part = env.obj.root_id
    poses = scene.part_poses()
    extra: tuple = ()
    center = None
    midpoints = []
    for _ in range(8):
        scene_b = SceneConfig(scene.obj, scene.root_pose,
                              dict(scene.joint_angles),
                              tuple(scene.statics) + extra)
        observed = observe_scene(scene_b, env.sample_size, env.observe_seed)
        allowed = affordance_indices(observed, env.region(first_part))
        contact = top1.propose(observed, first_part, allowed, rng=None)
        mid = poses[first_part].apply(
            (contact.fingers[0].position_vec()
             + contact.fingers[1].position_vec()) / 2.0)
        if center is not None \
                and abs(mid[0] - center[0]) <= _BLOCK_HALF[0] - 0.003 \
                and abs(mid[1] - center[1]) <= _BLOCK_HALF[1] - 0.003:
            return extra
        midpoints.append(mid)
        center = (float(mid[0] + jitter[0]), float(mid[1] + jitter[1]),
                  _BLOCK_HEIGHT)
        extra = (make_block_obstacle("top1-block", center, _BLOCK_HALF),)
    xs = [m[0] for m in midpoints]
    ys = [m[1] for m in midpoints]
    center = ((min(xs) + max(xs)) / 2 + jitter[0],
              (min(ys) + max(ys)) / 2 + jitter[1], _BLOCK_HEIGHT)
    half = ((max(xs) - min(xs)) / 2 + _BLOCK_HALF[0],
            (max(ys) - min(ys)) / 2 + _BLOCK_HALF[1], _BLOCK_HALF[2])
    return (make_block_obstacle("top1-block", center, half),)


def _run_cell(cell: dict, parsed: dict) -> dict:
    env = make_env(cell["object"], sample_size=parsed["sample_size"],
                   goal_ranges=parsed["goal"])
    kind, model = _build_model(env, cell["model"])
    master = parsed["seed"]
    top1 = (_top1_sampler(env, cell["model"])
            if parsed["obstacle"] == "block_top1" else None)

    successes = 0
    stage_counts = {stage: 0 for stage in FAILURE_STAGES}
    for i in range(parsed["episodes"]):
        if kind == "pool":
            entry = model.entries[i % len(model.entries)]
            result = run_entry(env, entry)
        else:
            # Seeded by object and index only: every cell on an object
            # sees the same scene/goal stream, so model and strategy
            # comparisons are paired.
            seed = derive_seed(master, "episode", cell["object"], i)
            scene = sample_scene(env, generator(seed, "scene"))
            if top1 is not None:
                extra = block_top1_statics(env, top1, scene,
                                           generator(master, "obstacle", i))
                scene = SceneConfig(scene.obj, scene.root_pose,
                                    dict(scene.joint_angles),
                                    tuple(scene.statics) + tuple(extra))
            goal = sample_goal(env, scene, generator(seed, "goal"))
            episode = Episode(scene, goal, cell["strategy"], seed=seed,
                              pos_tol=parsed["threshold_pos"],
                              ang_tol=parsed["threshold_angle"])
            result = run_episode(env, episode, model)
        if result.success:
            successes += 1
        else:
            stage_counts[result.stage] += 1

    k = parsed["episodes"]
    return {"object": cell["object"], "strategy": cell["strategy"],
            "model": cell["label"], "episodes": k, "successes": successes,
            "rate": str(successes / k) if k else "0",
            "fail_ik": stage_counts["ik"], "fail_plan": stage_counts["plan"],
            "fail_grasp": stage_counts["grasp"],
            "fail_move": stage_counts["move"],
            "fail_collision": stage_counts["collision"]}


def rows_to_csv(rows: list[dict]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        lines.append(",".join(str(row[c]) for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def run_suite(config) -> tuple[list[dict], str]:
    """Run every cell of a suite config (dict or JSON file path).

    Returns (rows, csv text) and writes the CSV to the configured
    output path when one is given.
    """
    if isinstance(config, str):
        try:
            with open(config) as fh:
                config = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("(file)", f"invalid JSON: {exc}") from None
    parsed = parse_config(config)
    rows = []
    if parsed["episodes"] > 0:
        for cell in parsed["cells"]:
            rows.append(_run_cell(cell, parsed))
    csv_text = rows_to_csv(rows)
    if parsed["output"]:
        with open(parsed["output"], "w") as fh:
            fh.write(csv_text)
    return rows, csv_text
