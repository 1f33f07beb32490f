"""Scene export: an ASCII PLY cloud plus a JSON pose manifest.

The PLY carries the observed scene (full opacity) and, when a goal
configuration is given, the object at its goal poses as a second,
green-tinted semi-transparent point set flagged by the `goal` property.
Coordinates are written with full float precision so a re-import
reproduces positions exactly.
"""

from __future__ import annotations

import json
import os

import numpy as np

from ..articulated import SceneConfig, observe_scene
from ..errors import InvalidArgumentError
from ..ocao import OcaoCommand, plan_targets

FORMAT = "artmanip-scene"
VERSION = 1

_GOAL_TINT = np.array([0.3, 0.85, 0.3])

_HEADER = """ply
format ascii 1.0
comment {comment}
element vertex {count}
property double x
property double y
property double z
property uchar red
property uchar green
property uchar blue
property uchar alpha
property double contact1
property double contact2
property uchar goal
end_header
"""


def _rows(positions, rgb, alpha, contact, goal_flag):
    out = []
    colors = np.clip(np.asarray(rgb, dtype=float) * 255.0, 0, 255)
    for p, c, k in zip(positions, colors.astype(int), contact):
        out.append(f"{p[0]!r} {p[1]!r} {p[2]!r} {c[0]} {c[1]} {c[2]} "
                   f"{alpha} {k[0]!r} {k[1]!r} {goal_flag}")
    return out


def export_scene(scene: SceneConfig, path_prefix: str,
                 sample_size: int = 1024, seed: int = 0,
                 prob_map: np.ndarray | None = None,
                 goal: OcaoCommand | None = None) -> tuple[str, str]:
    """Write `<prefix>.ply` and `<prefix>.json`; returns both paths.

    `prob_map` attaches two contact-probability channels to the observed
    points; `goal` adds the object's goal-configuration cloud and the
    goal part poses to the manifest.
    """
    observed = observe_scene(scene, sample_size, seed)
    n = len(observed)
    if prob_map is None:
        contact = np.zeros((n, 2))
    else:
        contact = np.asarray(prob_map, dtype=float)
        if contact.shape != (n, 2):
            raise InvalidArgumentError(
                f"probability map must be ({n}, 2), got {contact.shape}")

    rows = _rows(observed.cloud.positions, observed.cloud.rgb(), 255,
                 contact, 0)

    goal_targets = None
    if goal is not None:
        plan = plan_targets(scene.obj, scene.part_poses(), goal)
        goal_targets = plan.part_targets
        for part in scene.obj.parts:
            world = part.cloud.transformed(goal_targets[part.part_id])
            tinted = 0.5 * world.rgb() + 0.5 * _GOAL_TINT
            rows.extend(_rows(world.positions, tinted, 128,
                              np.zeros((len(part), 2)), 1))

    ply_path = path_prefix + ".ply"
    json_path = path_prefix + ".json"
    with open(ply_path, "w") as fh:
        fh.write(_HEADER.format(comment=f"{FORMAT} v{VERSION}",
                                count=len(rows)))
        fh.write("\n".join(rows) + "\n")

    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "ply": os.path.basename(ply_path),
        "object": scene.obj.name,
        "observed_points": n,
        "contact_channels": prob_map is not None,
        "parts": {str(pid): pose.to_json()
                  for pid, pose in sorted(scene.part_poses().items())},
        "goal_parts": ({str(pid): pose.to_json()
                        for pid, pose in sorted(goal_targets.items())}
                       if goal_targets is not None else None),
    }
    with open(json_path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return ply_path, json_path


def load_ply(path: str) -> dict:
    """Parse a PLY written by export_scene back into arrays."""
    with open(path) as fh:
        line = fh.readline().strip()
        if line != "ply":
            raise InvalidArgumentError(f"{path} is not a PLY file")
        count = None
        while True:
            line = fh.readline()
            if not line:
                raise InvalidArgumentError("unterminated PLY header")
            line = line.strip()
            if line.startswith("element vertex"):
                count = int(line.split()[-1])
            if line == "end_header":
                break
        if count is None:
            raise InvalidArgumentError("PLY header lacks a vertex count")
        positions, rgb, alpha, contact, goal = [], [], [], [], []
        for _ in range(count):
            parts = fh.readline().split()
            positions.append([float(v) for v in parts[0:3]])
            rgb.append([int(v) for v in parts[3:6]])
            alpha.append(int(parts[6]))
            contact.append([float(parts[7]), float(parts[8])])
            goal.append(int(parts[9]))
    return {"positions": np.array(positions),
            "rgb": np.array(rgb, dtype=int),
            "alpha": np.array(alpha, dtype=int),
            "contact": np.array(contact),
            "goal": np.array(goal, dtype=bool)}
