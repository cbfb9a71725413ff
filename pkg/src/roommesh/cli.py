"""Command-line entry point: run, render, select-views, register."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .geometry import ColorMap, look_at, unproject
from .layout import build_condition_scene, parse_layout
from .pipeline import ABLATIONS, PipelineConfig, camera_line, load_camera, run
from .raster import render
from .registration import RegistrationParams, align, register
from .views import select_viewpoints


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "backend", None):
        over["backend"] = args.backend
    if getattr(args, "width", None):
        over["width"] = args.width
    if getattr(args, "height", None):
        over["height"] = args.height
    return dataclasses.replace(cfg, **over) if over else cfg


def cmd_run(args) -> int:
    cfg = _config(args)
    res = run(args.layout, cfg, out_dir=args.out, ablate=args.ablate, figures=not args.no_figures)
    c = res.report["consistency"]
    print(f"frames={len(res.frames)} vertices={res.mesh.n_vertices} triangles={res.mesh.n_triangles}")
    if c["distance_p95"] is not None:
        print(f"foreground p95 distance={c['distance_p95']:.4f} m  color match={c['color_match']:.4f}")
    print(f"wrote {args.out}")
    return 0


def cmd_render(args) -> int:
    cfg = _config(args)
    scene = build_condition_scene(parse_layout(args.layout))
    if args.camera:
        cam = load_camera(args.camera)
    else:
        if args.eye is None or args.at is None:
            raise SystemExit("render: give --camera or both --eye and --at")
        cam = cfg.intrinsics().with_pose(look_at(args.eye, args.at), np.asarray(args.eye, float))
    maps = render(scene.meshes(), cam)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.save_depth(out / "depth.png", maps.depth)
    io.save_semantic(out / "semantic.png", maps.semantic)
    io.save_color(out / "normal.png", ColorMap(np.where(maps.valid[..., None], (maps.normal + 1) / 2, 0.0)))
    io.save_color(out / "color.png", maps.color)
    io.save_prim_ids(out / "prim_id.png", maps.instance, maps.triangle)
    print(f"wrote {out} ({int(maps.valid.sum())} valid pixels)")
    return 0


def cmd_select(args) -> int:
    cfg = _config(args)
    scene = build_condition_scene(parse_layout(args.layout))
    lines = ["# object view px py pz ax ay az fx fy cx cy w h"]
    table = {}
    for i, inst in enumerate(scene.instances):
        sel = select_viewpoints(inst, scene, cfg.weights, cfg.selection, cfg.intrinsics())
        for k, cam in enumerate(sel.cameras):
            lines.append(camera_line(cam, f"{i} {k}"))
        table[str(i)] = {"category": scene.category_name(inst.category_id), "stop": sel.stop_reason,
                         "coverage": sel.coverage,
                         "scores": [[dataclasses.asdict(s) for s in row] for row in sel.score_table]}
        print(f"object {i} ({table[str(i)]['category']}): {len(sel.cameras)} views, "
              f"coverage {sel.coverage[-1]:.3f}, stop={sel.stop_reason}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    if args.scores:
        Path(args.scores).write_text(json.dumps(table, indent=1) + "\n")
    return 0


def cmd_register(args) -> int:
    cam = load_camera(args.camera)
    est = io.load_depth(args.estimate)
    cond = io.load_depth(args.condition)
    if est.resolution != cam.resolution or cond.resolution != cam.resolution:
        raise SystemExit("register: depth maps and camera must share one resolution")
    aligned, p, status = align(est, cond)
    log = [f"# align status={status} gamma={p.gamma:.6f} beta={p.beta:.6f}"]
    out = aligned
    if args.mode != "linear":
        params = dataclasses.replace(RegistrationParams(), levels=args.levels)
        res = register(aligned, cam, [unproject(cond, cam)], args.mode, params, args.seed)
        out = res.depth
        log.append("# level loss_m2 (level 0 = before warping)")
        log += [f"{k} {v:.9e}" for k, v in enumerate(res.level_losses)]
        log.append("# level iteration loss_m2")
        for k, curve in enumerate(res.loss_curves):
            log += [f"{k + 1} {i} {v:.9e}" for i, v in enumerate(curve)]
        if args.plot:
            from .plotting import loss_curve_figure

            loss_curve_figure(args.plot, res.loss_curves, f"{args.mode} registration")
    io.save_depth(args.out, out)
    Path(args.log).write_text("\n".join(log) + "\n")
    both = out.mask & cond.mask
    if both.any():
        rmse = float(np.sqrt(np.mean((out.values[both] - cond.values[both]) ** 2)))
        print(f"{args.mode}: RMSE to condition {rmse:.5f} m")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="roommesh", description="Layout-to-room mesh generation.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML pipeline config")
        p.add_argument("--width", type=int)
        p.add_argument("--height", type=int)

    p = sub.add_parser("run", help="generate a room mesh from a layout")
    p.add_argument("layout")
    common(p)
    p.add_argument("--backend", help="mock | proto:<command>")
    p.add_argument("--ablate", choices=ABLATIONS)
    p.add_argument("--out", default="out")
    p.add_argument("--seed", type=int)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("render", help="write condition maps for one camera")
    p.add_argument("layout")
    common(p)
    p.add_argument("--camera", help="camera JSON or pose-line text file")
    p.add_argument("--eye", type=float, nargs=3)
    p.add_argument("--at", type=float, nargs=3)
    p.add_argument("--out", default="render")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("select-views", help="adaptive viewpoints per object")
    p.add_argument("layout")
    common(p)
    p.add_argument("--out", default="views.txt")
    p.add_argument("--scores", help="also dump every greedy iteration's score table as JSON")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("register", help="align and warp an estimated depth PNG to a condition depth PNG")
    p.add_argument("estimate")
    p.add_argument("condition")
    p.add_argument("--camera", required=True)
    p.add_argument("--mode", choices=("ndr", "ndp", "linear"), default="ndr")
    p.add_argument("--levels", type=int, default=RegistrationParams().levels)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="warped.png")
    p.add_argument("--log", default="loss.txt")
    p.add_argument("--plot", help="optional loss-curve figure path")
    p.set_defaults(func=cmd_register)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"roommesh {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
