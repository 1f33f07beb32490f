"""Command-line entry points for the experiment pipeline.

Subcommands: `explore` (grow a label pool from built-in demonstrations),
`train` (fit the contact-map model on a pool), `run` (execute a suite
config into a CSV table), `export` (write a PLY/JSON scene snapshot),
and `sweep` (decode latent-sweep contact proposals).
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from ..explore import DEFAULT_RADIUS, STALL_LIMIT, explore, load_pool, save_pool
from ..grasp import antipodal_valid
from ..rng import generator
from .env import OBJECT_NAMES, make_demonstrations, make_env, sample_goal
from .episodes import affordance_indices
from .export import export_scene
from .suite import run_suite


def _add_explore(sub):
    p = sub.add_parser("explore", help="grow a label pool by exploration")
    p.add_argument("--object", choices=OBJECT_NAMES, default="pliers")
    p.add_argument("--n", type=int, default=50, help="target pool size")
    p.add_argument("--radius", type=float, default=DEFAULT_RADIUS,
                   help="perturbation radius in meters")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stall-limit", type=int, default=STALL_LIMIT)
    p.add_argument("--out", required=True, help="pool output path (JSONL)")


def _add_train(sub):
    p = sub.add_parser("train", help="train the contact-map model on a pool")
    p.add_argument("--pool", required=True)
    p.add_argument("--out", required=True, help="checkpoint path prefix")
    p.add_argument("--arch", choices=("default", "small", "tiny"),
                   default="small")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--learning-rate", type=float, default=3e-3)
    p.add_argument("--kl-warmup", type=int, default=0)
    p.add_argument("--sample-size", type=int, default=512)
    p.add_argument("--kernel", type=float, default=0.005)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--curve", help="loss-curve CSV output path")


def _add_run(sub):
    p = sub.add_parser("run", help="run a suite config into a CSV table")
    p.add_argument("--config", required=True, help="suite config JSON path")
    p.add_argument("--out", help="override the config's output path")


def _add_export(sub):
    p = sub.add_parser("export", help="export a scene as PLY + JSON")
    p.add_argument("--object", choices=OBJECT_NAMES, default="pliers")
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--checkpoint",
                   help="attach this model's z=0 contact map")
    p.add_argument("--sample-size", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--with-goal", action="store_true",
                   help="include a sampled goal configuration")


def _add_sweep(sub):
    p = sub.add_parser("sweep", help="latent-sweep contact proposals")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--object", choices=OBJECT_NAMES, default="pliers")
    p.add_argument("--z", type=float, nargs="+",
                   default=(-1.0, -0.5, 0.5, 1.0))
    p.add_argument("--sample-size", type=int, default=512)
    p.add_argument("--export", help="also export one PLY per z (path prefix)")


def _cmd_explore(args) -> int:
    env = make_env(args.object)
    demos = make_demonstrations(env)
    pool = explore(demos, env.obj, env.regions, args.n, r=args.radius,
                   seed=args.seed, stall_limit=args.stall_limit)
    save_pool(pool, args.out)
    print(f"pool of {len(pool)} entries on {env.obj.name} -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    from ..cvae import TrainConfig, save_params, train
    from ..cvae.config import default_config, small_config, tiny_config

    pool = load_pool(args.pool)
    net = {"default": default_config, "small": small_config,
           "tiny": tiny_config}[args.arch]()
    tc = TrainConfig(steps=args.steps, batch_size=args.batch,
                     learning_rate=args.learning_rate,
                     kl_warmup_steps=args.kl_warmup,
                     sample_size=args.sample_size, kernel=args.kernel,
                     seed=args.seed, curve_path=args.curve)
    store, curve = train(pool, net, tc)
    save_params(store, net, args.out)
    last = curve[-1]
    print(f"trained {args.steps} steps on {len(pool)} entries; final "
          f"recon={last.recon:.4f} latent={last.latent:.4f} -> {args.out}")
    return 0


def _cmd_run(args) -> int:
    import json

    with open(args.config) as fh:
        config = json.load(fh)
    if args.out:
        config["output"] = args.out
    rows, csv_text = run_suite(config)
    sys.stdout.write(csv_text)
    return 0


def _cmd_export(args) -> int:
    env = make_env(args.object)
    scene = env.reference_scene()
    prob_map = None
    if args.checkpoint:
        from ..cvae.network import build_structure
        from ..cvae.params import load_params
        from ..cvae.sampling import decode_map
        from ..articulated import observe_scene

        store, net = load_params(args.checkpoint)
        observed = observe_scene(scene, args.sample_size, env.observe_seed)
        structure = build_structure(observed.cloud.positions, net)
        prob_map = decode_map(store, net, structure, observed.cloud.rgb(),
                              np.zeros(net.latent_dim))
    goal = (sample_goal(env, scene, generator(args.seed, "goal"))
            if args.with_goal else None)
    ply, manifest = export_scene(scene, args.out, args.sample_size,
                                 args.seed, prob_map, goal)
    print(f"wrote {ply} and {manifest}")
    return 0


def _cmd_sweep(args) -> int:
    from ..articulated import observe_scene
    from ..cvae.network import build_structure
    from ..cvae.params import load_params
    from ..cvae.sampling import MODE_SWEEP, decode_map, sample_contacts

    env = make_env(args.object)
    scene = env.reference_scene()
    store, net = load_params(args.checkpoint)
    observed = observe_scene(scene, args.sample_size, env.observe_seed)
    structure = build_structure(observed.cloud.positions, net)
    for z in args.z:
        print(f"z = {z:+.2f}")
        for part in env.obj.parts:
            allowed = affordance_indices(observed, env.region(part.part_id))
            contact = sample_contacts(observed, env.obj, store, net, allowed,
                                      MODE_SWEEP, z_value=z,
                                      structure=structure)
            f1, f2 = contact.fingers
            ok = antipodal_valid(f1, f2)
            print(f"  part {part.part_id} ({part.name}): points "
                  f"({f1.point_index}, {f2.point_index}) "
                  f"antipodal={'yes' if ok else 'no'}")
        if args.export:
            zvec = np.zeros(net.latent_dim)
            zvec[0] = z
            prob = decode_map(store, net, structure, observed.cloud.rgb(), zvec)
            export_scene(scene, f"{args.export}_z{z:+.2f}", args.sample_size,
                         env.observe_seed, prob)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="artmanip",
        description="Multi-arm articulated-object manipulation sandbox")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_explore(sub)
    _add_train(sub)
    _add_run(sub)
    _add_export(sub)
    _add_sweep(sub)
    args = parser.parse_args(argv)
    handlers = {"explore": _cmd_explore, "train": _cmd_train,
                "run": _cmd_run, "export": _cmd_export, "sweep": _cmd_sweep}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
