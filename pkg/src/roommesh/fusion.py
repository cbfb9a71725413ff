"""Depth-map triangulation into a growing vertex-colored scene mesh."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .geometry import Camera, ColorMap, DepthMap, SemanticMap, TriangleMesh, concat_meshes
from .layout import BACKGROUND_IDS, FIRST_OBJECT_ID
from .raster import RenderMaps, render


@dataclass(frozen=True)
class FusionParams:
    edge_factor: float = 3.0
    grazing_deg: float = 80.0
    seam_tol: float = 0.02

    def __post_init__(self):
        if min(self.edge_factor, self.grazing_deg, self.seam_tol) <= 0:
            raise ValueError("fusion thresholds must be positive")


@dataclass(frozen=True)
class SceneMesh:
    mesh: TriangleMesh
    foreground: np.ndarray
    """Per-vertex stage tag: True = foreground stage."""

    def __post_init__(self):
        fg = np.array(self.foreground, dtype=bool).reshape(-1)
        if len(fg) != len(self.mesh.vertices):
            raise ValueError("stage tag required on every vertex")
        fg.setflags(write=False)
        object.__setattr__(self, "foreground", fg)

    @classmethod
    def empty(cls) -> "SceneMesh":
        return cls(TriangleMesh.empty(), np.zeros(0, bool))

    @property
    def n_vertices(self) -> int:
        return len(self.mesh.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.mesh.triangles)


@dataclass(frozen=True)
class FusionStats:
    vertices_added: int = 0
    triangles_added: int = 0
    filtered_edge: int = 0
    filtered_grazing: int = 0
    seam_reused: int = 0

    @property
    def triangles_filtered(self) -> int:
        return self.filtered_edge + self.filtered_grazing

    def as_dict(self) -> dict:
        return {"vertices_added": self.vertices_added, "triangles_added": self.triangles_added,
                "triangles_filtered": self.triangles_filtered, "filtered_edge": self.filtered_edge,
                "filtered_grazing": self.filtered_grazing, "seam_reused": self.seam_reused}


def render_partial(mesh: SceneMesh, cam: Camera) -> tuple[ColorMap, DepthMap, np.ndarray, RenderMaps]:
    """Color/depth of the current mesh and the inpaint mask (uncovered pixels)."""
    maps = render([mesh.mesh], cam)
    return maps.color, maps.depth, ~maps.valid, maps


def _grid_points(depth: DepthMap, cam: Camera) -> np.ndarray:
    h, w = depth.values.shape
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    z = depth.values
    local = np.stack([z * (u - cam.cx) / cam.fx, z * (v - cam.cy) / cam.fy, z], axis=-1)
    return local.reshape(-1, 3) @ cam.rotation.T + cam.origin


def _local_edge_median(pos: np.ndarray, ok: np.ndarray) -> np.ndarray:
    """Median horizontal/vertical pixel-neighbor edge length around each quad."""
    h, w, _ = pos.shape
    eh = np.full((h, w), np.nan)
    ev = np.full((h, w), np.nan)
    both = ok[:, :-1] & ok[:, 1:]
    eh[:, :-1] = np.where(both, np.linalg.norm(pos[:, 1:] - pos[:, :-1], axis=-1), np.nan)
    both = ok[:-1] & ok[1:]
    ev[:-1] = np.where(both, np.linalg.norm(pos[1:] - pos[:-1], axis=-1), np.nan)
    stack = np.stack([eh, ev], axis=-1)
    padded = np.pad(stack, ((1, 2), (1, 2), (0, 0)), constant_values=np.nan)
    win = sliding_window_view(padded, (4, 4), axis=(0, 1))  # (h, w, 2, 4, 4)
    flat = win.reshape(h, w, -1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN windows
        return np.nanmedian(flat, axis=-1)


def fuse(mesh: SceneMesh, color: ColorMap, depth: DepthMap, semantic: SemanticMap, cam: Camera,
         mask: np.ndarray, stage="auto", params: FusionParams = FusionParams(),
         existing: RenderMaps | None = None) -> tuple[SceneMesh, FusionStats]:
    """Triangulate masked pixels of a warped depth map into the mesh.

    `stage` is "foreground", "background", or "auto" (object-labelled pixels
    are foreground).
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return mesh, FusionStats()
    h, w = mask.shape
    if existing is None:
        existing = render([mesh.mesh], cam)
    new_pts = _grid_points(depth, cam).reshape(h, w, 3)
    valid = depth.mask

    seam = ~mask & ndimage.binary_dilation(mask, np.ones((3, 3), bool)) & existing.valid & valid
    reuse = seam & (np.abs(existing.depth.values - depth.values) <= params.seam_tol)
    pos = new_pts.copy()
    reuse_vid = np.full((h, w), -1, np.int64)
    if reuse.any():
        rv, ru = np.nonzero(reuse)
        tri = mesh.mesh.triangles[existing.triangle[rv, ru]]
        cand = mesh.mesh.vertices[tri]  # (k, 3, 3)
        dist = np.linalg.norm(cand - new_pts[rv, ru][:, None, :], axis=-1)
        pick = tri[np.arange(len(rv)), dist.argmin(axis=1)]
        reuse_vid[rv, ru] = pick
        pos[rv, ru] = mesh.mesh.vertices[pick]

    usable = valid & (mask | seam)
    quad = usable[:-1, :-1] & usable[:-1, 1:] & usable[1:, :-1] & usable[1:, 1:]
    quad &= mask[:-1, :-1] | mask[:-1, 1:] | mask[1:, :-1] | mask[1:, 1:]
    qv, qu = np.nonzero(quad)
    if qv.size == 0:
        return mesh, FusionStats()

    med = _local_edge_median(pos, usable)[qv, qu]
    p00 = (qv, qu)
    p01 = (qv, qu + 1)
    p10 = (qv + 1, qu)
    p11 = (qv + 1, qu + 1)
    tris_px = [(p00, p10, p11), (p00, p11, p01)]
    cos_limit = np.cos(np.radians(params.grazing_deg))
    keep_tris = []
    n_edge = n_graz = 0
    for a, b, c in tris_px:
        A, B, C = pos[a], pos[b], pos[c]
        longest = np.maximum.reduce([np.linalg.norm(B - A, axis=1), np.linalg.norm(C - B, axis=1),
                                     np.linalg.norm(A - C, axis=1)])
        edge_ok = longest <= params.edge_factor * np.nan_to_num(med, nan=np.inf)
        n = np.cross(B - A, C - A)
        nn = np.linalg.norm(n, axis=1)
        view = (A + B + C) / 3.0 - cam.origin
        cosang = np.abs((n * view).sum(axis=1)) / np.maximum(nn * np.linalg.norm(view, axis=1), 1e-300)
        graze_ok = (cosang >= cos_limit) & (nn > 0)
        n_edge += int((~edge_ok).sum())
        n_graz += int((edge_ok & ~graze_ok).sum())
        ok = edge_ok & graze_ok
        keep_tris.append(np.stack([a[0][ok] * w + a[1][ok], b[0][ok] * w + b[1][ok], c[0][ok] * w + c[1][ok]], axis=1))
    pix_tris = np.concatenate(keep_tris)
    # row-major pixel order keeps the output independent of loop structure
    pix_tris = pix_tris[np.lexsort((pix_tris[:, 2], pix_tris[:, 1], pix_tris[:, 0]))]
    if len(pix_tris) == 0:
        return mesh, FusionStats(filtered_edge=n_edge, filtered_grazing=n_graz)

    flat_reuse = reuse_vid.reshape(-1)
    # a reused seam vertex can collapse a triangle; all-seam triangles would duplicate the surface
    fv = np.where(flat_reuse[pix_tris] >= 0, flat_reuse[pix_tris], -1 - pix_tris)
    distinct = (fv[:, 0] != fv[:, 1]) & (fv[:, 1] != fv[:, 2]) & (fv[:, 0] != fv[:, 2])
    pix_tris = pix_tris[distinct & ~(flat_reuse[pix_tris] >= 0).all(axis=1)]
    if len(pix_tris) == 0:
        return mesh, FusionStats(filtered_edge=n_edge, filtered_grazing=n_graz)
    used = np.unique(pix_tris)
    fresh = used[flat_reuse[used] < 0]
    vid = flat_reuse.copy()
    base = mesh.n_vertices
    vid[fresh] = base + np.arange(len(fresh))
    sem = semantic.ids.reshape(-1)[fresh]
    if stage == "auto":
        fg = sem >= FIRST_OBJECT_ID
    else:
        fg = np.full(len(fresh), stage == "foreground")
    added = TriangleMesh(pos.reshape(-1, 3)[fresh], np.zeros((0, 3), np.int64),
                         color.rgb.reshape(-1, 3)[fresh], sem)
    merged = concat_meshes([mesh.mesh, added])
    faces = vid[pix_tris]
    out = TriangleMesh(merged.vertices, np.concatenate([mesh.mesh.triangles, faces]), merged.colors, merged.labels)
    stats = FusionStats(len(fresh), len(faces), n_edge, n_graz, int((flat_reuse[used] >= 0).sum()))
    return SceneMesh(out, np.concatenate([mesh.foreground, fg])), stats


def remove_background(mesh: SceneMesh) -> SceneMesh:
    """Drop wall/floor/ceiling/empty-labelled vertices and their triangles."""
    keep = ~np.isin(mesh.mesh.labels, BACKGROUND_IDS)
    if keep.all():
        return mesh
    remap = np.full(mesh.n_vertices, -1, np.int64)
    remap[keep] = np.arange(int(keep.sum()))
    tris = mesh.mesh.triangles
    tris = tris[keep[tris].all(axis=1)] if len(tris) else tris
    m = TriangleMesh(mesh.mesh.vertices[keep], remap[tris], mesh.mesh.colors[keep], mesh.mesh.labels[keep])
    return SceneMesh(m, mesh.foreground[keep])
