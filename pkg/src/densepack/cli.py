"""Command-line entry point: ``densepack {eval,fit-box,plan,simulate,synth}``.

Exit status is 0 on success, 1 on invalid input and 2 on internal errors.
Results go to ``--out`` when given, otherwise to standard output.
"""

from __future__ import annotations

import argparse
import io
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .boxes import fit_min_volume_box
from .errors import DensePackError
from .geometry import Pose
from .heightmap import Container, place, read_heightmap, write_heightmap
from .metrics import DEFAULT_POINTS, evaluate_scene
from .planner import DBLF, EXHAUSTIVE, HM, SAMPLED, GraspCandidate, PlannerConfig, plan
from .scene_io import item_mesh, load_scene, read_cloud, save_scene, synth_scene
from .simulator import (
    CompletionProvider,
    Configuration,
    make_item,
    run_trials,
    synthetic_item_pool,
    write_episode_log,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="master random seed (default 0)")
    p.add_argument("--cells", type=float, default=1.0, metavar="MM", help="height-map cell size in mm (default 1)")
    p.add_argument("--samples", type=int, default=4096, metavar="M", help="planner samples per step (default 4096)")
    p.add_argument("--cost", choices=(DBLF, HM), default=DBLF)
    p.add_argument("--mode", choices=(SAMPLED, EXHAUSTIVE), default=SAMPLED)
    p.add_argument("--provider", default="ground_truth", help="completion provider, e.g. inflate:1.3")
    p.add_argument("--out", type=Path, default=None, metavar="DIR", help="output directory")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="densepack", description="Shape-completion metrics and dense packing tools.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ev = sub.add_parser("eval", parents=[common], help="score predicted clouds against a scene bundle")
    ev.add_argument("scene", type=Path)
    ev.add_argument("predictions", type=Path, nargs="+", help="one cloud file per object, in object order")
    ev.add_argument("--points", type=int, default=DEFAULT_POINTS, help="ground-truth surface samples")

    fb = sub.add_parser("fit-box", parents=[common], help="minimum-volume oriented box of a cloud")
    fb.add_argument("cloud", type=Path)
    fb.add_argument("--rotations", type=int, default=4096)

    pl = sub.add_parser("plan", parents=[common], help="best grasp and placement for a height-map")
    pl.add_argument("heightmap", type=Path)
    pl.add_argument("clouds", type=Path, nargs="+", help="one object cloud per grasp candidate (grasp frame)")

    si = sub.add_parser("simulate", parents=[common], help="run packing trials from a JSON config")
    si.add_argument("config", type=Path)

    sy = sub.add_parser("synth", parents=[common], help="render a scene bundle from a JSON spec")
    sy.add_argument("spec", type=Path)
    return parser


def _emit(args, name: str, text: str) -> None:
    if args.out is None:
        sys.stdout.write(text)
        return
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / name).write_text(text, encoding="utf-8")


def _read_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from exc


def _planner_cfg(args, **overrides) -> PlannerConfig:
    kw = dict(samples=args.samples, mode=args.mode, seed=args.seed)
    kw.update(overrides)
    return PlannerConfig(**kw)


def _cell_size(mm: float) -> float:
    if not mm > 0:
        raise ValueError("--cells must be positive")
    return mm / 1000.0


def cmd_eval(args) -> None:
    bundle = load_scene(args.scene)
    n = bundle.n_objects
    preds = [read_cloud(p) for p in args.predictions]
    meshes = [bundle.posed_mesh(i) for i in range(n)]
    boxes = [bundle.gt_box(i) for i in range(n)]
    report = evaluate_scene(preds, meshes, boxes, n_points=args.points, seed=args.seed)
    buf = io.StringIO()
    report.write(buf)
    _emit(args, "metrics.tsv", buf.getvalue())


def cmd_fit_box(args) -> None:
    cloud = read_cloud(args.cloud)
    box = fit_min_volume_box(cloud, args.rotations, np.random.default_rng(args.seed))
    record = {
        "dimensions": [float(d) for d in box.dimensions],
        "pose": box.pose.as_matrix().tolist(),
        "volume": box.volume,
    }
    _emit(args, "box.json", json.dumps(record, indent=2) + "\n")


def cmd_plan(args) -> None:
    # the height-map file carries its own cell size; --cells does not apply here
    with open(args.heightmap, "rb") as f:
        h = read_heightmap(f)
    grasps = [GraspCandidate(p.stem, Pose(), read_cloud(p)) for p in args.clouds]
    p = plan(h, grasps, args.cost, _planner_cfg(args))
    record = {
        "cell": list(p.cell),
        "cost": p.cost,
        "grasp_id": p.grasp_id,
        "grasp_index": p.grasp_index,
        "placement": {
            "rotation": [float(v) for v in p.placement.rotation.as_array()],
            "translation": [float(v) for v in p.placement.translation],
        },
        "rotation_index": p.rotation_index,
        "z": p.z,
    }
    _emit(args, "plan.json", json.dumps(record, indent=2, sort_keys=True) + "\n")
    if args.out is not None:
        with open(args.out / "heightmap_after.dphm", "wb") as f:
            write_heightmap(place(h, p.footprint, p.cell, p.z), f)


def _item_pool(cfg: dict, seed: int, n_points: int):
    items = cfg.get("items", {"synthetic": {}})
    if isinstance(items, dict):
        syn = items.get("synthetic", {})
        return synthetic_item_pool(
            int(syn.get("count", 30)),
            int(syn.get("seed", seed)),
            kinds=syn.get("kinds", ("cuboid", "cylinder", "lshape")),
            size_range=tuple(syn.get("size_range", (0.04, 0.10))),
            n_points=n_points,
        )
    rng = np.random.default_rng(seed)
    pool = []
    for i, spec in enumerate(items):
        for j in range(int(spec.get("count", 1))):
            item_id = f"{spec.get('id', spec.get('kind', 'item'))}-{i:03d}-{j:03d}"
            pool.append(make_item(item_id, item_mesh(spec), rng, n_points))
    return pool


def cmd_simulate(args) -> None:
    cfg = _read_json(args.config)
    if not isinstance(cfg, dict) or "container" not in cfg:
        raise ValueError("simulate config needs a 'container' entry")
    container = Container(tuple(float(v) for v in cfg["container"]))
    n_points = int(cfg.get("points", DEFAULT_POINTS))
    pool = _item_pool(cfg, args.seed, n_points)
    confs_cfg = cfg.get("configurations") or [{"provider": args.provider, "cost": args.cost}]
    confs = [Configuration(CompletionProvider.parse(c["provider"]), c.get("cost", DBLF)) for c in confs_cfg]
    for c in confs:
        if c.cost not in (DBLF, HM):
            raise ValueError(f"unknown cost {c.cost!r}")
    cell = _cell_size(float(cfg.get("cell_mm", args.cells)))
    planner_cfg = _planner_cfg(
        args,
        samples=int(cfg.get("samples", args.samples)),
        mode=cfg.get("mode", args.mode),
        exhaustive_stride=float(cfg.get("exhaustive_stride_mm", 5.0)) / 1000.0,
    )
    lo, hi = cfg.get("items_per_trial", (5, 15))
    report = run_trials(
        pool,
        int(cfg.get("trials", 1)),
        confs,
        args.seed,
        container=container,
        cfg=planner_cfg,
        cell_size=cell,
        items_per_trial=(int(lo), int(hi)),
        any_order=bool(cfg.get("any_order", True)),
    )
    buf = io.StringIO()
    report.write(buf)
    _emit(args, "report.tsv", buf.getvalue())
    if args.out is not None:
        with open(args.out / "episodes.jsonl", "w", encoding="utf-8") as f:
            for conf, eps in zip(confs, report.episodes):
                for t, ep in enumerate(eps):
                    write_episode_log(ep, f, configuration=conf.name, trial=t)
                    f.write(json.dumps({
                        "configuration": conf.name,
                        "trial": t,
                        "termination_reason": ep.termination_reason,
                        "success": ep.success,
                        "packed_volume_fraction": ep.packed_volume_fraction,
                    }) + "\n")


def cmd_synth(args) -> None:
    if args.out is None:
        raise ValueError("synth needs --out DIR")
    bundle, _ = synth_scene(_read_json(args.spec), args.seed)
    save_scene(bundle, args.out)


COMMANDS = {
    "eval": cmd_eval,
    "fit-box": cmd_fit_box,
    "plan": cmd_plan,
    "simulate": cmd_simulate,
    "synth": cmd_synth,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    try:
        COMMANDS[args.command](args)
    except (DensePackError, ValueError, KeyError, OSError) as exc:
        print(f"densepack {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"densepack {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
