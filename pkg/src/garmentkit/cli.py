"""Command line front end.

One executable, ``garmentkit``, with a subcommand per pipeline stage:
``discover`` names keypoints on a flat garment, ``extract`` matches them
into an observation, ``retrieve`` reports the best prototype, ``plan``
produces one verified plan, ``run`` drives a closed-loop episode,
``simulate`` replays a plan file, and ``evaluate`` runs a benchmark suite.

Exit codes: 0 on success, 1 on a domain error (bad scene, failed
verification, unreachable backend), 2 on a usage error.  Configuration
follows ``flags > environment > file > defaults``; ``--set key=value``
overrides any single field.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .config import Config, ConfigError, load_config


def _version_text() -> str:
    from .vlm import template_manifest

    lines = [f"garmentkit {__version__}"]
    for name, digest in sorted(template_manifest().items()):
        lines.append(f"template {name} sha256 {digest}")
    return "\n".join(lines)


def _parse_set(pairs: List[str]) -> dict:
    out = {}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set wants key=value, got {pair!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _config_from(args) -> Config:
    return load_config(args.config, **_parse_set(args.set))


def _write_json(path: Optional[str], payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _load_obs(args, cfg: Config):
    """Observation plus a client able to answer about it.

    A scene file rebuilds the simulator, renders deterministically and
    scripts the region answers from the scene's own anchors.  Raw image
    and depth files need a configured HTTP backend instead, since no
    script can know an arbitrary picture.
    """
    from .perception import Observation
    from .rasters import read_pfm, read_png

    if args.scene:
        from .fixtures import add_region_oracle
        from .sim import Scene, Simulator
        from .vlm import ScriptedClient

        sim = Simulator(Scene.load(args.scene), cfg)
        client = ScriptedClient()
        add_region_oracle(client, sim)
        return sim.render(), client, sim
    if not args.obs:
        raise ConfigError("give either --scene or --obs")
    rgb = read_png(args.obs)
    if args.depth:
        depth = read_pfm(args.depth)
    else:
        depth = np.full(rgb.shape[:2], cfg.camera_height, dtype=np.float32)
    from .geometry import top_down_camera

    camera = top_down_camera(rgb.shape[0], cfg.camera_span, cfg.camera_height)
    obs = Observation(rgb, depth, camera)
    if not cfg.vlm_url:
        raise ConfigError("raw images need an HTTP client; set vlm_url "
                          "(GARMENTKIT_VLM_URL) or use --scene")
    from .vlm import HttpChatClient

    return obs, HttpChatClient(cfg.vlm_url, cfg.vlm_key, cfg=cfg), None


def _library_from(args, sim, cfg: Config):
    from .library import PrototypeLibrary

    if args.library:
        return PrototypeLibrary.load(args.library)
    if sim is not None:
        from .fixtures import sim_prototype_library

        return sim_prototype_library(sim)
    raise ConfigError("give --library (or --scene for its built-in one)")


# ------------------------------------------------------------- subcommands

def cmd_discover(args) -> int:
    from .fixtures import categories, garment_gray, garment_mask, \
        scripted_discovery_client
    from .library import PrototypeEntry, PrototypeLibrary
    from .perception import discover_keypoints

    cfg = _config_from(args)
    if args.category not in categories():
        raise ConfigError(f"unknown fixture category {args.category!r}; "
                          f"have {', '.join(categories())}")
    image = garment_gray(args.category)
    mask = garment_mask(args.category)
    kps = discover_keypoints(image, mask, scripted_discovery_client(),
                             args.category, cfg)
    if args.library:
        path = Path(args.library)
        lib = PrototypeLibrary.load(path) if (path / "index.json").exists() \
            else PrototypeLibrary()
        lib.add(PrototypeEntry(args.category, image, mask, kps))
        lib.save(path)
    _write_json(args.out, {"category": args.category,
                           "keypoints": {k: list(v) for k, v in kps.items()}})
    return 0


def cmd_extract(args) -> int:
    from .perception import extract_semantic_keypoints

    cfg = _config_from(args)
    obs, client, sim = _load_obs(args, cfg)
    library = _library_from(args, sim, cfg)
    found = extract_semantic_keypoints(obs, library, client, cfg)
    payload = {"category": found.category,
               "rotation_deg": found.rotation_deg,
               "score": round(found.score, 6),
               "keypoints": {k: {"pixel": list(v.pixel),
                                 "position": [round(c, 6)
                                              for c in v.position]}
                             for k, v in found.keypoints.items()}}
    _write_json(args.out, payload)
    if args.marked:
        from .rasters import write_png
        from .vlm import annotate_dots

        pixels = np.array([v.pixel for v in found.keypoints.values()])
        write_png(args.marked, annotate_dots(obs.rgb, pixels, cfg=cfg))
    return 0


def cmd_retrieve(args) -> int:
    from .perception import BuiltinSegmenter, retrieve_prototype

    cfg = _config_from(args)
    obs, _, sim = _load_obs(args, cfg)
    library = _library_from(args, sim, cfg)
    mask = BuiltinSegmenter().segment(obs.rgb)
    ret = retrieve_prototype(obs.gray(), mask, library, cfg)
    _write_json(args.out, {"category": ret.category,
                           "rotation_deg": ret.rotation_deg,
                           "score": round(ret.score, 6),
                           "scores": {f"{c}@{int(r)}": round(s, 6)
                                      for (c, r), s in
                                      sorted(ret.scores.items())}})
    return 0


def cmd_plan(args) -> int:
    from .fixtures import build_episode
    from .planner import AnchorResolver, propose_and_verify
    from .skills import Workspace

    cfg = _config_from(args)
    sim, client, task = build_episode(args.kind, args.seed, cfg)
    resolver = AnchorResolver(sim, cfg)
    obs = sim.render()
    resolver.refresh(obs)
    result = propose_and_verify(args.task or task, obs, resolver, client,
                                Workspace().rest_arms(), cfg=cfg)
    payload = {"status": result.status, "attempts": result.attempts,
               "plan": {"completed": result.plan.completed,
                        "subtasks": list(result.plan.subtasks)}
               if result.plan else None}
    if result.report and not result.report.ok:
        payload["reason"] = result.report.reason
    _write_json(args.out, payload)
    return 0 if result.status in ("completed", "verified") else 1


def cmd_run(args) -> int:
    from .fixtures import add_region_oracle, build_episode, \
        sim_prototype_library
    from .planner import run_episode
    from .rasters import write_png

    cfg = _config_from(args)
    sim, client, task = build_episode(args.kind, args.seed, cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    library = None
    if args.perception:
        library = sim_prototype_library(sim)
        add_region_oracle(client, sim)
    write_png(out_dir / "initial.png", sim.render().rgb)
    log = run_episode(args.task or task, sim, client, library=library,
                      cfg=cfg, log_path=out_dir / "episode.jsonl")
    write_png(out_dir / "final.png", sim.render().rgb)
    final = log.records[-1]
    _write_json(None, {"status": final["status"], "rounds": final["rounds"],
                       "checks": final["checks"]})
    return 0 if final["status"] == "completed" else 1


def cmd_simulate(args) -> int:
    from .planner import AnchorResolver, verify_plan
    from .plans import plan_from_wire
    from .sim import Scene, Simulator
    from .skills import Workspace

    cfg = _config_from(args)
    sim = Simulator(Scene.load(args.scene), cfg)
    try:
        wire = json.loads(Path(args.plan).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read plan file: {exc}") from exc
    plan = plan_from_wire(wire)
    resolver = AnchorResolver(sim, cfg)
    resolver.refresh(sim.render())
    arms = Workspace().rest_arms()
    report = verify_plan(plan, resolver, arms, cfg=cfg)
    if not report.ok:
        print(f"error: {report.reason}", file=sys.stderr)
        return 1
    for _, wp in report.bound:
        arms, _ = sim.execute(wp, arms)
    checks = sim.checks()
    _write_json(args.out, {"scene": sim.scene.name,
                           "subtasks": list(plan.subtasks),
                           "checks": checks})
    return 0


def cmd_evaluate(args) -> int:
    from .benchmark import run_benchmark

    cfg = _config_from(args)
    report = run_benchmark(args.suite, out_dir=args.out_dir, cfg=cfg,
                           workers=args.workers)
    _write_json(None, report.aggregates)
    failed = [r for r in report.rows if r["status"] == "error"]
    return 1 if failed else 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="garmentkit",
        description="Semantic keypoints, language plans and a cloth "
                    "simulator for desk-scale garment manipulation.")
    parser.add_argument("--version", action="version",
                        version=_version_text())
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE",
                        help="JSON config file")
    common.add_argument("--set", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="override one config field (repeatable)")
    common.add_argument("--seed", type=int, default=0,
                        help="seed for anything randomized")

    obs_args = argparse.ArgumentParser(add_help=False)
    obs_args.add_argument("--scene", metavar="FILE",
                          help="scene JSON; rendered deterministically")
    obs_args.add_argument("--obs", metavar="PNG",
                          help="observation image (needs an HTTP client)")
    obs_args.add_argument("--depth", metavar="PFM", help="depth map")
    obs_args.add_argument("--library", metavar="DIR",
                          help="prototype library directory")

    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("discover", parents=[common],
                       help="name keypoints on a flat fixture garment")
    p.add_argument("--category", required=True)
    p.add_argument("--library", metavar="DIR",
                   help="append the entry to this library")
    p.add_argument("--out", metavar="JSON", help="keypoints (default stdout)")
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("extract", parents=[common, obs_args],
                       help="match prototype keypoints into an observation")
    p.add_argument("--out", metavar="JSON")
    p.add_argument("--marked", metavar="PNG",
                   help="also write the observation with dots")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("retrieve", parents=[common, obs_args],
                       help="report the best prototype and rotation")
    p.add_argument("--out", metavar="JSON")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("plan", parents=[common],
                       help="one verified plan for a shipped task")
    p.add_argument("--kind", required=True,
                   choices=("fold", "flatten", "hang", "place"))
    p.add_argument("--task", help="override the instruction text")
    p.add_argument("--out", metavar="JSON")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("run", parents=[common],
                       help="closed-loop episode on a shipped task")
    p.add_argument("--kind", required=True,
                   choices=("fold", "flatten", "hang", "place"))
    p.add_argument("--task", help="override the instruction text")
    p.add_argument("--out-dir", default="episode_out")
    p.add_argument("--perception", action="store_true",
                   help="resolve labels by image matching, not scene state")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("simulate", parents=[common],
                       help="verify and execute a plan file on a scene")
    p.add_argument("--scene", required=True, metavar="FILE")
    p.add_argument("--plan", required=True, metavar="JSON")
    p.add_argument("--out", metavar="JSON")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", parents=[common],
                       help="run a benchmark suite and write reports")
    p.add_argument("--suite", metavar="JSON",
                   help="suite file (default: shipped smoke suite)")
    p.add_argument("--out-dir", metavar="DIR")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ConfigError, OSError, KeyError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
