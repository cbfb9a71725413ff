"""Synthetic registration benchmark: a tilted plane and its mock depth estimate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backends import MockBackend
from .geometry import Camera, DepthMap, intrinsics_camera


@dataclass(frozen=True)
class PlaneBenchmark:
    camera: Camera
    condition: DepthMap
    estimate: DepthMap
    """Mock-distorted depth: affine in the condition plus a smooth ripple."""


def tilted_plane_depth(cam: Camera, distance: float = 2.0, tilt_deg: float = 45.0) -> DepthMap:
    """Depth of the plane z = distance + tan(tilt) * y (camera frame)."""
    v = np.arange(cam.height, dtype=np.float64)[:, None]
    yn = (v - cam.cy) / cam.fy
    z = distance / (1.0 - np.tan(np.radians(tilt_deg)) * yn)
    return DepthMap.from_array(np.broadcast_to(z, (cam.height, cam.width)).copy())


def plane_ripple(width: int = 256, height: int = 192, distance: float = 2.0, tilt_deg: float = 45.0,
                 seed: int = 0, backend: MockBackend | None = None) -> PlaneBenchmark:
    cam = intrinsics_camera(width, height)
    cond = tilted_plane_depth(cam, distance, tilt_deg)
    est = (backend or MockBackend()).estimate(None, cond, seed)
    return PlaneBenchmark(cam, cond, est)


def rmse(depth: DepthMap, reference: DepthMap) -> float:
    both = depth.mask & reference.mask
    return float(np.sqrt(np.mean((depth.values[both] - reference.values[both]) ** 2)))


def frontal_ripple(width: int = 256, height: int = 192, distance: float = 2.0,
                   amplitude: float = 0.05) -> PlaneBenchmark:
    """Fronto-parallel plane and a copy rippled by amplitude * sin(2 pi u / w) along image columns."""
    cam = intrinsics_camera(width, height)
    u = np.arange(width, dtype=np.float64)[None, :]
    cond = DepthMap.from_array(np.full((height, width), distance))
    est = DepthMap.from_array(np.broadcast_to(distance + amplitude * np.sin(2 * np.pi * u / width),
                                              (height, width)).copy())
    return PlaneBenchmark(cam, cond, est)


def off_ray_distance(points: np.ndarray, origin: np.ndarray, rays: np.ndarray) -> np.ndarray:
    """Perpendicular distance of each point from its own camera ray."""
    return np.linalg.norm(np.cross(points - origin, rays), axis=1)
