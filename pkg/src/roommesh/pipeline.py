"""Two-stage project / inpaint / register / fuse loop and its configuration."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import io
from .backends import SynthesisRequest, build_prompt, estimate_depth, make_backend, synthesize
from .fusion import FusionParams, FusionStats, SceneMesh, fuse, remove_background, render_partial
from .geometry import (Camera, ColorMap, DepthMap, SemanticMap, TriangleMesh, intrinsics_camera, look_at,
                       rotation_from_forward, unproject)
from .layout import ConditionScene, Layout, build_condition_scene, parse_layout
from .metrics import layout_consistency
from .raster import render
from .registration import RegistrationParams, align, register
from .views import ScoreWeights, SelectionParams, coverage_of, select_viewpoints

log = logging.getLogger(__name__)

ABLATIONS = ("no-avs", "no-ndr", "raw-ndp")


class PipelineError(RuntimeError):
    def __init__(self, msg: str, frame: int, stage: int):
        super().__init__(f"stage {stage}, frame {frame}: {msg}")
        self.frame = frame
        self.stage = stage


@dataclass(frozen=True)
class RingParams:
    yaw_steps: int = 18
    yaw_step_deg: float = 20.0
    height: float = 1.5
    pitch_low: float = -15.0
    pitch_high: float = 25.0
    vertical: bool = True
    """Append one straight-down and one straight-up pose."""


@dataclass(frozen=True)
class PipelineConfig:
    width: int = 512
    height: int = 384
    focal_factor: float = 0.9
    weights: ScoreWeights = ScoreWeights()
    selection: SelectionParams = SelectionParams()
    registration: RegistrationParams = RegistrationParams()
    fusion: FusionParams = FusionParams()
    ring: RingParams = RingParams()
    seed: int = 0
    backend: str = "mock"
    timeout: float = 300.0
    prompt: str | None = None
    """Global prompt; None uses the layout's own prompt."""

    def __post_init__(self):
        if self.width % 4 or self.height % 4 or self.width <= 0 or self.height <= 0:
            raise ValueError(f"resolution must be a positive multiple of 4, got {self.width}x{self.height}")
        if self.focal_factor <= 0 or self.timeout <= 0:
            raise ValueError("focal factor and timeout must be positive")

    def intrinsics(self) -> Camera:
        return intrinsics_camera(self.width, self.height, self.focal_factor)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        nested = {"weights": ScoreWeights, "selection": SelectionParams, "registration": RegistrationParams,
                  "fusion": FusionParams, "ring": RingParams}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for k, v in doc.items():
            if k in nested and isinstance(v, dict):
                sub = nested[k]
                bad = set(v) - {f.name for f in dataclasses.fields(sub)}
                if bad:
                    raise ValueError(f"unknown {k} keys: {sorted(bad)}")
                if "heights" in v:
                    v = {**v, "heights": tuple(v["heights"])}
                v = sub(**v)
            kw[k] = v
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        doc = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(doc, dict):
            raise ValueError(f"{path}: config must be a mapping")
        return cls.from_dict(doc)


@dataclass
class FrameRecord:
    index: int
    stage: int
    target: int | None
    camera: Camera
    prompt: str = ""
    mask_pixels: int = 0
    skipped: bool = False
    align_status: str = ""
    gamma: float = 1.0
    beta: float = 0.0
    level_losses: list = field(default_factory=list)
    loss_curves: list = field(default_factory=list)
    stats: FusionStats = FusionStats()
    vertices: int = 0
    triangles: int = 0

    def as_dict(self) -> dict:
        return {"index": self.index, "stage": self.stage, "target": self.target,
                "camera": self.camera.to_dict(), "prompt": self.prompt, "mask_pixels": self.mask_pixels,
                "skipped": self.skipped, "align": {"status": self.align_status, "gamma": self.gamma, "beta": self.beta},
                "level_losses": self.level_losses, "fusion": self.stats.as_dict(),
                "vertices": self.vertices, "triangles": self.triangles}


@dataclass
class RunResult:
    mesh: SceneMesh
    frames: list[FrameRecord]
    report: dict
    scene: ConditionScene


def ring_pose(yaw_deg: float, pitch_deg: float) -> np.ndarray:
    y, p = np.radians(yaw_deg), np.radians(pitch_deg)
    return rotation_from_forward([np.cos(p) * np.cos(y), np.cos(p) * np.sin(y), np.sin(p)])


def background_trajectory(room, cfg: PipelineConfig = PipelineConfig()) -> list[Camera]:
    """Two pitched yaw rings about the room center, then straight down and up."""
    W, D, H = room
    r = cfg.ring
    eye = np.array([W / 2, D / 2, min(r.height, H)])
    base = cfg.intrinsics()
    cams = []
    for pitch in (r.pitch_low, r.pitch_high):
        for k in range(r.yaw_steps):
            cams.append(base.with_pose(ring_pose(k * r.yaw_step_deg, pitch), eye))
    if r.vertical:
        cams.append(base.with_pose(rotation_from_forward([0.0, 0.0, -1.0]), eye))
        cams.append(base.with_pose(rotation_from_forward([0.0, 0.0, 1.0]), eye))
    return cams


def facing_poses(ring: list[Camera], scene: ConditionScene, target: int, limit: int) -> list[Camera]:
    """Ring poses in which the target owns at least one pixel, most head-on first."""
    center = scene.instances[target].center
    scored = []
    for i, cam in enumerate(ring):
        if not (render(scene.meshes(), cam).instance == target).any():
            continue
        d = center - cam.origin
        scored.append((-float(d @ cam.forward) / max(float(np.linalg.norm(d)), 1e-12), i))
    scored.sort()
    return [ring[i] for _, i in scored[:limit]]


def frame_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0] >> np.uint64(1))


def camera_line(cam: Camera, label: str = "") -> str:
    """One-line text pose: label, position, look-at point, intrinsics."""
    at = cam.origin + cam.forward
    vals = " ".join(f"{x:.6f}" for x in [*cam.origin, *at, cam.fx, cam.fy, cam.cx, cam.cy])
    line = f"{vals} {cam.width} {cam.height}"
    return f"{label} {line}" if label else line


def parse_camera_line(line: str) -> Camera:
    """Inverse of `camera_line`; leading label fields are ignored."""
    f = line.split()
    if len(f) < 12:
        raise ValueError(f"camera line needs 12 numeric fields: {line!r}")
    nums = [float(x) for x in f[-12:-2]]
    w, h = int(f[-2]), int(f[-1])
    eye, at = np.array(nums[0:3]), np.array(nums[3:6])
    fx, fy, cx, cy = nums[6:10]
    return Camera(fx, fy, cx, cy, w, h).with_pose(look_at(eye, at), eye)


def load_camera(path) -> Camera:
    """Camera from a JSON dict file or the first pose line of a text file."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        return Camera.from_dict(json.loads(text))
    for line in text.splitlines():
        if line.strip() and not line.lstrip().startswith("#"):
            return parse_camera_line(line)
    raise ValueError(f"{path}: no camera found")


class Engine:
    """Holds one run's evolving mesh and frame log."""

    def __init__(self, scene: ConditionScene, cfg: PipelineConfig, backend, prompt: str, ablate: str | None = None,
                 frames_dir: Path | None = None):
        self.scene, self.cfg, self.backend, self.prompt, self.ablate = scene, cfg, backend, prompt, ablate
        self.frames_dir = frames_dir
        self.mesh = SceneMesh.empty()
        self.frames: list[FrameRecord] = []

    def step(self, cam: Camera, stage: int, target: int | None) -> FrameRecord:
        rec = FrameRecord(len(self.frames), stage, target, cam)
        self.frames.append(rec)
        seed = frame_seed(self.cfg.seed, rec.index)
        cond = render(self.scene.meshes(), cam)
        partial, pdepth, mask, existing = render_partial(self.mesh, cam)
        mask = mask & cond.valid
        rec.mask_pixels = int(mask.sum())
        semantic = cond.semantic
        rec.prompt = build_prompt(semantic, self.scene.registry, self.prompt)
        self._save_inputs(rec.index, semantic, mask)
        if not mask.any():
            rec.skipped = True
            rec.vertices, rec.triangles = self.mesh.n_vertices, self.mesh.n_triangles
            self._save_outputs(rec.index, partial, pdepth)
            return rec

        req = SynthesisRequest(partial, mask, semantic, cond.depth, rec.prompt, seed, camera=cam)
        color = synthesize(req, self.backend)
        est = estimate_depth(color, self.backend, context=cond.depth, seed=seed)
        aligned, params, rec.align_status = align(est, cond.depth)
        rec.gamma, rec.beta = float(params.gamma), float(params.beta)

        warped = aligned
        if self.ablate != "no-ndr":
            mode = "ndp" if self.ablate == "raw-ndp" else "ndr"
            targets = [unproject(cond.depth, cam), unproject(pdepth, cam)]
            res = register(aligned, cam, targets, mode, self.cfg.registration, seed)
            warped = res.depth
            rec.level_losses = [float(x) for x in res.level_losses]
            rec.loss_curves = res.loss_curves
            if mode == "ndp":
                # points carry their pixel's color wherever they land
                idx = res.source_index
                src = np.where(idx >= 0, idx, 0)
                rgb = color.rgb.reshape(-1, 3)[src.reshape(-1)].reshape(color.rgb.shape)
                color = ColorMap(np.where((idx >= 0)[..., None], rgb, color.rgb))

        self._save_outputs(rec.index, color, warped)
        fstage = "auto" if stage == 1 else "background"
        self.mesh, rec.stats = fuse(self.mesh, color, warped, semantic, cam, mask, fstage, self.cfg.fusion, existing)
        rec.vertices, rec.triangles = self.mesh.n_vertices, self.mesh.n_triangles
        return rec

    def _save_inputs(self, i: int, sem: SemanticMap, mask) -> None:
        if self.frames_dir is None:
            return
        io.save_semantic(self.frames_dir / f"{i:03d}_semantic.png", sem)
        io.save_mask(self.frames_dir / f"{i:03d}_mask.png", mask)

    def _save_outputs(self, i: int, color: ColorMap, depth: DepthMap) -> None:
        """Synthesized color and the depth that was fused."""
        if self.frames_dir is not None:
            io.save_color(self.frames_dir / f"{i:03d}_color.png", color)
            io.save_depth(self.frames_dir / f"{i:03d}_depth.png", depth)


def stage_one_cameras(scene: ConditionScene, cfg: PipelineConfig, ablate: str | None) -> tuple[list, dict]:
    """Per-object view lists (layout order) and the coverage each achieves."""
    plans, coverage = [], {}
    ring = background_trajectory(scene.room, cfg) if ablate == "no-avs" else None
    for i, inst in enumerate(scene.instances):
        if ring is not None:
            cams = facing_poses(ring, scene, i, cfg.selection.max_views)
        else:
            cams = select_viewpoints(inst, scene, cfg.weights, cfg.selection, cfg.intrinsics()).cameras
        plans.append(cams)
        coverage[str(i)] = coverage_of(cams, inst, scene) if cams else 0.0
    return plans, coverage


def _totals(frames: list[FrameRecord]) -> dict:
    keys = FusionStats().as_dict().keys()
    return {k: int(sum(f.stats.as_dict()[k] for f in frames)) for k in keys}


def _report(layout: Layout, cfg: PipelineConfig, ablate, frames, coverage, mesh: SceneMesh, scene, error=None) -> dict:
    fg = mesh.foreground
    rep = {
        "config": cfg.to_dict(),
        "ablate": ablate,
        "room": list(layout.room),
        "objects": [{"category": b.category, "primitive": inst.record_id}
                    for b, inst in zip(layout.objects, scene.instances)],
        "coverage": coverage,
        "frames": [f.as_dict() for f in frames],
        "totals": _totals(frames),
        "mesh": {"vertices": mesh.n_vertices, "triangles": mesh.n_triangles,
                 "foreground_vertices": int(fg.sum())},
        "consistency": layout_consistency(_foreground_mesh(mesh), scene),
    }
    if error is not None:
        rep["error"] = error
    return rep


def _foreground_mesh(mesh: SceneMesh) -> TriangleMesh:
    """Foreground-stage vertices only; triangles are irrelevant to the metrics."""
    keep = mesh.foreground
    m = mesh.mesh
    return TriangleMesh(m.vertices[keep], np.zeros((0, 3), np.int64), m.colors[keep], m.labels[keep])


def write_outputs(out: Path, mesh: SceneMesh, frames: list[FrameRecord], report: dict) -> None:
    io.write_ply(out / "mesh.ply", mesh.mesh, {"stage": mesh.foreground.astype(np.int64)})
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    lines = [camera_line(f.camera, f"{f.index:03d} {f.stage} {'-' if f.target is None else f.target}") for f in frames]
    (out / "cameras.txt").write_text("# index stage target px py pz ax ay az fx fy cx cy w h\n" + "\n".join(lines) + "\n")


def run(layout_doc, cfg: PipelineConfig = PipelineConfig(), out_dir=None, db=None, ablate: str | None = None,
        backend=None, figures: bool = True) -> RunResult:
    """Run both stages; writes artifacts to `out_dir` when given."""
    if ablate is not None and ablate not in ABLATIONS:
        raise ValueError(f"unknown ablation {ablate!r}; choose from {ABLATIONS}")
    layout = layout_doc if isinstance(layout_doc, Layout) else parse_layout(layout_doc)
    scene = build_condition_scene(layout, db)
    out = Path(out_dir) if out_dir is not None else None
    frames_dir = None
    if out is not None:
        frames_dir = out / "frames"
        frames_dir.mkdir(parents=True, exist_ok=True)
    own_backend = backend is None
    backend = make_backend(cfg.backend, cfg.timeout) if own_backend else backend
    prompt = cfg.prompt if cfg.prompt is not None else (layout.prompt or "a room")
    eng = Engine(scene, cfg, backend, prompt, ablate, frames_dir)
    coverage: dict = {}
    stage = 1
    try:
        plans, coverage = stage_one_cameras(scene, cfg, ablate)
        for i, cams in enumerate(plans):
            for cam in cams:
                eng.step(cam, 1, i)
        eng.mesh = remove_background(eng.mesh)
        stage = 2
        for cam in background_trajectory(scene.room, cfg):
            eng.step(cam, 2, None)
    except Exception as exc:
        frame = len(eng.frames) - 1 if eng.frames else 0
        if out is not None:
            rep = _report(layout, cfg, ablate, eng.frames, coverage, eng.mesh, scene, error=str(exc))
            write_outputs(out, eng.mesh, eng.frames, rep)
        raise PipelineError(str(exc), frame, stage) from exc
    finally:
        if own_backend:
            backend.close()

    report = _report(layout, cfg, ablate, eng.frames, coverage, eng.mesh, scene)
    if out is not None:
        write_outputs(out, eng.mesh, eng.frames, report)
        if figures:
            from .plotting import write_figures

            write_figures(out / "figures", eng.frames, report)
    return RunResult(eng.mesh, eng.frames, report, scene)
