"""Camera math and the image/mesh value types shared by every stage.

Conventions: world is right-handed with +Z up and the floor at z=0 (meters).
Cameras look down +z with +x right and +y down in the image. Pixel index
(u, v) sits at continuous image coordinate (u, v).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    """World-from-camera rotation; columns are camera axes in world frame."""
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.origin, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", _frozen(R))
        object.__setattr__(self, "origin", _frozen(t))
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with det +1")

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.width, self.height)

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[:, 2]

    def with_pose(self, rotation, origin) -> "Camera":
        return Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, rotation, origin)

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.origin) @ self.rotation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.origin

    def pixel_rays(self) -> np.ndarray:
        """Unit world-space ray direction for every pixel, shape (h, w, 3)."""
        v, u = np.mgrid[0 : self.height, 0 : self.width].astype(np.float64)
        d = np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return d @ self.rotation.T

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "rotation": self.rotation.tolist(), "origin": self.origin.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
            int(d["width"]), int(d["height"]),
            d.get("rotation", np.eye(3)), d.get("origin", np.zeros(3)),
        )


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-from-camera rotation for a zero-roll camera at `eye` facing `target`."""
    eye = np.asarray(eye, dtype=np.float64)
    f = np.asarray(target, dtype=np.float64) - eye
    n = np.linalg.norm(f)
    if n < 1e-12:
        raise ValueError("eye and target coincide")
    return rotation_from_forward(f / n, up)


def rotation_from_forward(forward, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    f = np.asarray(forward, dtype=np.float64)
    f = f / np.linalg.norm(f)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(f, up)
    if np.linalg.norm(right) < 1e-9:
        # looking straight up or down: keep world +Y as image "up"
        right = np.cross(f, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(f, right)
    return np.stack([right, down, f], axis=1)


def intrinsics_camera(width: int, height: int, focal_factor: float = 0.9) -> Camera:
    f = focal_factor * width
    return Camera(f, f, width / 2.0, height / 2.0, width, height)


# --------------------------------------------------------------------------- images


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel z-depth in meters; `mask` is authoritative, invalid pixels hold 0."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        mask = np.array(self.mask, dtype=bool)
        if vals.shape != mask.shape or vals.ndim != 2:
            raise DimensionError("depth values and mask must be matching 2D arrays")
        mask &= np.isfinite(vals) & (vals > 0)
        vals = np.where(mask, vals, 0.0)
        object.__setattr__(self, "values", _frozen(vals))
        object.__setattr__(self, "mask", _frozen(mask))

    @classmethod
    def from_array(cls, values) -> "DepthMap":
        v = np.asarray(values, dtype=np.float64)
        return cls(v, np.isfinite(v) & (v > 0))

    @classmethod
    def empty(cls, width: int, height: int) -> "DepthMap":
        return cls(np.zeros((height, width)), np.zeros((height, width), bool))

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.values.shape[1], self.values.shape[0])


@dataclass(frozen=True)
class ColorMap:
    rgb: np.ndarray

    def __post_init__(self):
        c = np.array(self.rgb, dtype=np.float64)
        if c.ndim != 3 or c.shape[2] != 3:
            raise DimensionError("color must be (h, w, 3)")
        c = np.clip(np.nan_to_num(c, nan=0.0), 0.0, 1.0)
        object.__setattr__(self, "rgb", _frozen(c))

    @classmethod
    def empty(cls, width: int, height: int) -> "ColorMap":
        return cls(np.zeros((height, width, 3)))

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.rgb.shape[1], self.rgb.shape[0])


@dataclass(frozen=True)
class SemanticMap:
    """Category ids: 0 empty, 1-3 wall/floor/ceiling, >=16 objects."""

    ids: np.ndarray

    def __post_init__(self):
        ids = np.array(self.ids, dtype=np.int32)
        if ids.ndim != 2:
            raise DimensionError("semantic map must be 2D")
        object.__setattr__(self, "ids", _frozen(ids))

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.ids.shape[1], self.ids.shape[0])


# --------------------------------------------------------------------------- geometry


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    colors: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh vertices must be finite")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("triangle index out of range")
        if f.size and np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise ValueError("degenerate triangle with repeated vertex index")
        c = np.full((len(v), 3), 0.5) if self.colors is None else np.array(self.colors, dtype=np.float64).reshape(-1, 3)
        lab = np.zeros(len(v), np.int32) if self.labels is None else np.array(self.labels, dtype=np.int32).reshape(-1)
        if len(c) != len(v) or len(lab) != len(v):
            raise ValueError("per-vertex attributes must match vertex count")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "triangles", _frozen(f))
        object.__setattr__(self, "colors", _frozen(np.clip(c, 0.0, 1.0)))
        object.__setattr__(self, "labels", _frozen(lab))

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), np.int64))

    def __len__(self) -> int:
        return len(self.triangles)

    def with_labels(self, label: int) -> "TriangleMesh":
        return TriangleMesh(self.vertices, self.triangles, self.colors, np.full(len(self.vertices), label))

    def transformed(self, rotation, translation) -> "TriangleMesh":
        v = self.vertices @ np.asarray(rotation).T + np.asarray(translation)
        return TriangleMesh(v, self.triangles, self.colors, self.labels)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def concat_meshes(meshes) -> TriangleMesh:
    meshes = [m for m in meshes if len(m.vertices)]
    if not meshes:
        return TriangleMesh.empty()
    offsets = np.cumsum([0] + [len(m.vertices) for m in meshes[:-1]])
    return TriangleMesh(
        np.concatenate([m.vertices for m in meshes]),
        np.concatenate([m.triangles + o for m, o in zip(meshes, offsets)]),
        np.concatenate([m.colors for m in meshes]),
        np.concatenate([m.labels for m in meshes]),
    )


def mesh_surface_area(mesh: TriangleMesh, triangle_subset=None) -> float:
    areas = mesh.triangle_areas()
    if triangle_subset is None:
        return float(areas.sum())
    idx = np.fromiter(triangle_subset, dtype=np.int64) if not isinstance(triangle_subset, np.ndarray) else triangle_subset
    if idx.size == 0:
        return 0.0
    return float(areas[np.asarray(idx, dtype=np.int64)].sum())


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    rays: np.ndarray
    pixels: np.ndarray
    """(n, 2) integer (u, v) source pixel per point."""
    origin: np.ndarray

    def __len__(self) -> int:
        return len(self.points)

    def point_at(self, u: int, v: int) -> np.ndarray:
        hit = np.nonzero((self.pixels[:, 0] == u) & (self.pixels[:, 1] == v))[0]
        if hit.size == 0:
            raise KeyError((u, v))
        return self.points[hit[0]]

    def subset(self, idx) -> "PointCloud":
        return PointCloud(self.points[idx], self.rays[idx], self.pixels[idx], self.origin)


def unproject(depth: DepthMap, cam: Camera) -> PointCloud:
    if depth.resolution != cam.resolution:
        raise DimensionError(f"depth {depth.resolution} does not match camera {cam.resolution}")
    v, u = np.nonzero(depth.mask)
    z = depth.values[v, u]
    local = np.stack([z * (u - cam.cx) / cam.fx, z * (v - cam.cy) / cam.fy, z], axis=1)
    pts = cam.camera_to_world(local)
    d = pts - cam.origin
    norms = np.linalg.norm(d, axis=1, keepdims=True)
    rays = d / np.where(norms > 0, norms, 1.0)
    return PointCloud(pts, rays, np.stack([u, v], axis=1).astype(np.int64), cam.origin.copy())


def project(points, cam: Camera):
    """Return (uv, depth, in_front). Works on a single point or an (n, 3) array."""
    p = np.asarray(points, dtype=np.float64)
    single = p.ndim == 1
    local = cam.world_to_camera(p.reshape(-1, 3))
    z = local[:, 2]
    in_front = z > 0
    safe = np.where(in_front, z, 1.0)
    uv = np.stack([cam.fx * local[:, 0] / safe + cam.cx, cam.fy * local[:, 1] / safe + cam.cy], axis=1)
    uv[~in_front] = np.nan
    if single:
        return uv[0], float(z[0]), bool(in_front[0])
    return uv, z, in_front


def rodrigues(axis_angle) -> np.ndarray:
    w = np.asarray(axis_angle, dtype=np.float64)
    th = np.linalg.norm(w)
    if th < 1e-12:
        return np.eye(3)
    k = w / th
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(th) * K + (1 - np.cos(th)) * K @ K
