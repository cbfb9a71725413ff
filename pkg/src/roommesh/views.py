"""Adaptive per-object viewpoint selection.

Candidates on a floor grid look at the target's center; each is scored by
newly visible surface fraction, framing IoU and normal alignment, and the
best is taken greedily until new coverage becomes insignificant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Camera, look_at, project
from .layout import ConditionScene, PrimitiveInstance
from .raster import RenderMaps, render, visible_triangles


class SelectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScoreWeights:
    w_iou: float = 1.0
    w_norm: float = 0.5
    margin: int | None = None
    """Pixels; None means floor(width / 16)."""
    w_area: float = 1.0

    def __post_init__(self):
        if min(self.w_iou, self.w_norm, self.w_area) < 0:
            raise ValueError("score weights must be non-negative")

    def margin_for(self, width: int, height: int) -> int:
        m = width // 16 if self.margin is None else self.margin
        if not 0 <= m < min(width, height) / 2:
            raise ValueError(f"margin {m} out of range for {width}x{height}")
        return m


@dataclass(frozen=True)
class SelectionParams:
    grid_step: float = 0.25
    heights: tuple[float, ...] = (1.2, 1.6, 2.0)
    wall_clearance: float = 0.2
    obstacle_inflation: float = 0.15
    tau_new: float = 0.05
    max_views: int = 6


@dataclass(frozen=True)
class ViewScore:
    s_area: float
    s_iou: float
    s_norm: float
    total: float


@dataclass
class ObservedSet:
    """Per-instance observed triangle ids; only ever grows."""

    seen: dict[int, set] = field(default_factory=dict)

    def add(self, instance: int, ids) -> None:
        self.seen.setdefault(instance, set()).update(int(i) for i in ids)

    def get(self, instance: int) -> set:
        return self.seen.get(instance, set())


def _instance_index(scene: ConditionScene, target: PrimitiveInstance) -> int:
    for i, inst in enumerate(scene.instances):
        if inst is target:
            return i
    raise ValueError("target is not part of the scene")


def sample_candidates(scene: ConditionScene, target: PrimitiveInstance, intrinsics: Camera,
                      params: SelectionParams = SelectionParams()) -> list[Camera]:
    W, D, H = scene.room
    c, step = params.wall_clearance, params.grid_step
    nx = int(np.floor((W - 2 * c) / step + 1e-9)) + 1 if W >= 2 * c else 0
    ny = int(np.floor((D - 2 * c) / step + 1e-9)) + 1 if D >= 2 * c else 0
    boxes = []
    for inst in scene.instances:
        lo, hi = inst.mesh.bounds()
        boxes.append((lo - params.obstacle_inflation, hi + params.obstacle_inflation))
    cams = []
    for z in params.heights:
        if z > H - c:
            continue
        for j in range(ny):
            for i in range(nx):
                p = np.array([c + i * step, c + j * step, z])
                if any(np.all(p >= lo) and np.all(p <= hi) for lo, hi in boxes):
                    continue
                if np.linalg.norm(target.center - p) < 1e-6:
                    continue
                cams.append(intrinsics.with_pose(look_at(p, target.center), p))
    if not cams:
        raise SelectionError("no free camera positions in the room")
    return cams


def _iou_term(target: PrimitiveInstance, cam: Camera, margin: int) -> float:
    uv, _, front = project(target.mesh.vertices, cam)
    if not front.any():
        return 0.0
    uv = uv[front]
    x0, y0 = np.clip(uv.min(axis=0), 0, [cam.width, cam.height])
    x1, y1 = np.clip(uv.max(axis=0), 0, [cam.width, cam.height])
    r0, r1 = (margin, margin), (cam.width - margin, cam.height - margin)
    iw = max(0.0, min(x1, r1[0]) - max(x0, r0[0]))
    ih = max(0.0, min(y1, r1[1]) - max(y0, r0[1]))
    inter = iw * ih
    union = (x1 - x0) * (y1 - y0) + (r1[0] - r0[0]) * (r1[1] - r0[1]) - inter
    return float(inter / union) if union > 0 else 0.0


def _norm_term(maps: RenderMaps, owned: np.ndarray, cam: Camera) -> float:
    if not owned.any():
        return 0.0
    v, u = np.nonzero(owned)
    d = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones(len(u))], axis=1)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    rays = d @ cam.rotation.T
    dots = -(maps.normal[v, u] * rays).sum(axis=1)
    return float(np.clip(dots, 0.0, None).mean())


@dataclass(frozen=True)
class CandidateView:
    """Observation-independent parts of a candidate's score."""

    camera: Camera
    visible: np.ndarray
    s_iou: float
    s_norm: float


def evaluate_candidate(cam: Camera, target: PrimitiveInstance, scene: ConditionScene, weights: ScoreWeights) -> CandidateView:
    idx = _instance_index(scene, target)
    maps = render(scene.meshes(), cam)
    ids, _ = visible_triangles(maps, idx, target.mesh)
    margin = weights.margin_for(cam.width, cam.height)
    return CandidateView(cam, ids, _iou_term(target, cam, margin), _norm_term(maps, maps.instance == idx, cam))


def _combine(view: CandidateView, target: PrimitiveInstance, seen: set, weights: ScoreWeights) -> ViewScore:
    new = [i for i in view.visible.tolist() if i not in seen]
    areas = target.mesh.triangle_areas()
    s_area = float(areas[new].sum() / target.total_area) if new and target.total_area > 0 else 0.0
    s_area = min(s_area, 1.0)
    total = weights.w_area * s_area + weights.w_iou * view.s_iou + weights.w_norm * view.s_norm
    return ViewScore(s_area, view.s_iou, view.s_norm, total)


def score_view(cam: Camera, target: PrimitiveInstance, scene: ConditionScene,
               observed: ObservedSet | None = None, weights: ScoreWeights = ScoreWeights()) -> ViewScore:
    observed = observed or ObservedSet()
    view = evaluate_candidate(cam, target, scene, weights)
    return _combine(view, target, observed.get(_instance_index(scene, target)), weights)


@dataclass
class Selection:
    cameras: list[Camera]
    scores: list[ViewScore]
    coverage: list[float]
    """Cumulative observed area fraction after each selected view."""
    stop_reason: str
    score_table: list[list[ViewScore]] = field(default_factory=list)


def select_viewpoints(target: PrimitiveInstance, scene: ConditionScene, weights: ScoreWeights = ScoreWeights(),
                      params: SelectionParams = SelectionParams(), intrinsics: Camera | None = None,
                      candidates: list[Camera] | None = None) -> Selection:
    if candidates is None:
        if intrinsics is None:
            raise ValueError("need intrinsics or an explicit candidate list")
        candidates = sample_candidates(scene, target, intrinsics, params)
    if not candidates:
        raise SelectionError("empty candidate list")
    views = [evaluate_candidate(c, target, scene, weights) for c in candidates]
    idx = _instance_index(scene, target)
    observed = ObservedSet()
    areas = target.mesh.triangle_areas()
    sel = Selection([], [], [], "max_views")
    while len(sel.cameras) < params.max_views:
        seen = observed.get(idx)
        scores = [_combine(v, target, seen, weights) for v in views]
        sel.score_table.append(scores)
        best = int(np.argmax([s.total for s in scores]))
        if sel.cameras and scores[best].s_area < params.tau_new:
            sel.stop_reason = "coverage"
            break
        sel.cameras.append(views[best].camera)
        sel.scores.append(scores[best])
        observed.add(idx, views[best].visible)
        cov = sorted(observed.get(idx))
        sel.coverage.append(float(areas[cov].sum() / target.total_area) if target.total_area > 0 else 0.0)
    return sel


def coverage_of(cameras, target: PrimitiveInstance, scene: ConditionScene) -> float:
    """Fraction of target area seen by the union of the given cameras."""
    idx = _instance_index(scene, target)
    seen: set = set()
    for cam in cameras:
        ids, _ = visible_triangles(render(scene.meshes(), cam), idx, target.mesh)
        seen.update(ids.tolist())
    if not seen:
        return 0.0
    return float(target.mesh.triangle_areas()[sorted(seen)].sum() / target.total_area)
