"""Z-buffer rasterization of labelled triangle meshes.

Triangles are clipped against the near plane in camera space, then scan
converted with pixel-center sampling and perspective-correct interpolation.
The triangle loop is sequential, so the nearest-surface merge is
deterministic (ties keep the earlier triangle).
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .geometry import Camera, ColorMap, DepthMap, SemanticMap, TriangleMesh, mesh_surface_area

NEAR_PLANE = 0.02


@dataclass(frozen=True)
class RenderMaps:
    depth: DepthMap
    semantic: SemanticMap
    normal: np.ndarray
    """(h, w, 3) unit world-space normals facing the camera; zero where invalid."""
    color: ColorMap
    instance: np.ndarray
    """(h, w) index into the rendered mesh list, -1 where empty."""
    triangle: np.ndarray
    """(h, w) triangle index within that mesh, -1 where empty."""

    @property
    def valid(self) -> np.ndarray:
        return self.depth.mask


@numba.njit(cache=True)
def _clip_near(zc, near):
    """Clip a triangle (camera-space z per corner) against z >= near.

    Returns polygon corners as barycentric weights w.r.t. the original
    triangle, shape (k, 3), k in {0, 3, 4}.
    """
    out = np.zeros((4, 3))
    k = 0
    for i in range(3):
        j = (i + 1) % 3
        zi = zc[i]
        zj = zc[j]
        if zi >= near:
            out[k, i] = 1.0
            k += 1
        if (zi >= near) != (zj >= near):
            t = (near - zi) / (zj - zi)
            out[k, i] = 1.0 - t
            out[k, j] = t
            k += 1
    return out[:k]


@numba.njit(cache=True)
def _raster_kernel(vc, tris, colors, labels, tri_inst, tri_local, w, h, fx, fy, cx, cy, near,
                   zbuf, inst, tloc, lab, col, nrm):
    for t in range(tris.shape[0]):
        a = tris[t, 0]
        b = tris[t, 1]
        c = tris[t, 2]
        P = np.empty((3, 3))
        for d in range(3):
            P[0, d] = vc[a, d]
            P[1, d] = vc[b, d]
            P[2, d] = vc[c, d]
        zc = np.array([P[0, 2], P[1, 2], P[2, 2]])
        if zc[0] < near and zc[1] < near and zc[2] < near:
            continue
        e1 = P[1] - P[0]
        e2 = P[2] - P[0]
        n = np.array([e1[1] * e2[2] - e1[2] * e2[1], e1[2] * e2[0] - e1[0] * e2[2], e1[0] * e2[1] - e1[1] * e2[0]])
        nn = np.sqrt(n[0] ** 2 + n[1] ** 2 + n[2] ** 2)
        if nn < 1e-300:
            continue
        n /= nn
        cen = (P[0] + P[1] + P[2]) / 3.0
        if n[0] * cen[0] + n[1] * cen[1] + n[2] * cen[2] > 0:
            n = -n
        poly = _clip_near(zc, near)
        k = poly.shape[0]
        if k < 3:
            continue
        # screen coordinates and depths of polygon corners
        su = np.empty(k)
        sv = np.empty(k)
        sz = np.empty(k)
        for q in range(k):
            x = poly[q, 0] * P[0, 0] + poly[q, 1] * P[1, 0] + poly[q, 2] * P[2, 0]
            y = poly[q, 0] * P[0, 1] + poly[q, 1] * P[1, 1] + poly[q, 2] * P[2, 1]
            z = poly[q, 0] * P[0, 2] + poly[q, 1] * P[1, 2] + poly[q, 2] * P[2, 2]
            su[q] = fx * x / z + cx
            sv[q] = fy * y / z + cy
            sz[q] = z
        for f in range(1, k - 1):
            i0 = 0
            i1 = f
            i2 = f + 1
            area = (su[i1] - su[i0]) * (sv[i2] - sv[i0]) - (sv[i1] - sv[i0]) * (su[i2] - su[i0])
            if abs(area) < 1e-12:
                continue
            umin = min(su[i0], su[i1], su[i2])
            umax = max(su[i0], su[i1], su[i2])
            vmin = min(sv[i0], sv[i1], sv[i2])
            vmax = max(sv[i0], sv[i1], sv[i2])
            u0 = max(int(np.ceil(umin - 1e-9)), 0)
            u1 = min(int(np.floor(umax + 1e-9)), w - 1)
            v0 = max(int(np.ceil(vmin - 1e-9)), 0)
            v1 = min(int(np.floor(vmax + 1e-9)), h - 1)
            tol = 1e-9
            inv = 1.0 / area
            # barycentrics are affine in (u, v): l = a*u + b*v + c
            a0 = -(sv[i2] - sv[i1]) * inv
            b0 = (su[i2] - su[i1]) * inv
            c0 = (su[i1] * sv[i2] - sv[i1] * su[i2]) * inv
            a1 = -(sv[i0] - sv[i2]) * inv
            b1 = (su[i0] - su[i2]) * inv
            c1 = (su[i2] * sv[i0] - sv[i2] * su[i0]) * inv
            for v in range(v0, v1 + 1):
                for u in range(u0, u1 + 1):
                    l0 = a0 * u + b0 * v + c0
                    l1 = a1 * u + b1 * v + c1
                    l2 = 1.0 - l0 - l1
                    if l0 < -tol or l1 < -tol or l2 < -tol:
                        continue
                    iz = l0 / sz[i0] + l1 / sz[i1] + l2 / sz[i2]
                    if iz <= 0:
                        continue
                    z = 1.0 / iz
                    if z >= zbuf[v, u]:
                        continue
                    zbuf[v, u] = z
                    inst[v, u] = tri_inst[t]
                    tloc[v, u] = tri_local[t]
                    # perspective-correct barycentrics w.r.t. the original triangle
                    w0 = (l0 / sz[i0]) * z
                    w1 = (l1 / sz[i1]) * z
                    w2 = (l2 / sz[i2]) * z
                    ba = w0 * poly[i0, 0] + w1 * poly[i1, 0] + w2 * poly[i2, 0]
                    bb = w0 * poly[i0, 1] + w1 * poly[i1, 1] + w2 * poly[i2, 1]
                    bc = w0 * poly[i0, 2] + w1 * poly[i1, 2] + w2 * poly[i2, 2]
                    for d in range(3):
                        col[v, u, d] = ba * colors[a, d] + bb * colors[b, d] + bc * colors[c, d]
                        nrm[v, u, d] = n[d]
                    if ba >= bb and ba >= bc:
                        lab[v, u] = labels[a]
                    elif bb >= bc:
                        lab[v, u] = labels[b]
                    else:
                        lab[v, u] = labels[c]


def render(meshes, cam: Camera, near: float = NEAR_PLANE) -> RenderMaps:
    """Rasterize a list of meshes; `instance` indexes into that list."""
    if isinstance(meshes, TriangleMesh):
        meshes = [meshes]
    w, h = cam.width, cam.height
    verts, tris, cols, labs, inst, loc = [], [], [], [], [], []
    off = 0
    for i, m in enumerate(meshes):
        verts.append(m.vertices)
        tris.append(m.triangles + off)
        cols.append(m.colors)
        labs.append(m.labels)
        inst.append(np.full(len(m.triangles), i, np.int32))
        loc.append(np.arange(len(m.triangles), dtype=np.int64))
        off += len(m.vertices)
    zbuf = np.full((h, w), np.inf)
    inst_map = np.full((h, w), -1, np.int32)
    tri_map = np.full((h, w), -1, np.int64)
    lab_map = np.zeros((h, w), np.int32)
    col_map = np.zeros((h, w, 3))
    nrm_map = np.zeros((h, w, 3))
    if off:
        vc = np.ascontiguousarray(cam.world_to_camera(np.concatenate(verts)))
        _raster_kernel(
            vc, np.ascontiguousarray(np.concatenate(tris)), np.ascontiguousarray(np.concatenate(cols)),
            np.concatenate(labs).astype(np.int32), np.concatenate(inst), np.concatenate(loc),
            w, h, float(cam.fx), float(cam.fy), float(cam.cx), float(cam.cy), float(near),
            zbuf, inst_map, tri_map, lab_map, col_map, nrm_map,
        )
    valid = np.isfinite(zbuf)
    normal = nrm_map @ cam.rotation.T
    return RenderMaps(
        depth=DepthMap(np.where(valid, zbuf, 0.0), valid),
        semantic=SemanticMap(np.where(valid, lab_map, 0)),
        normal=normal,
        color=ColorMap(col_map),
        instance=inst_map,
        triangle=tri_map,
    )


def visible_triangles(maps: RenderMaps, instance_index: int, mesh: TriangleMesh) -> tuple[np.ndarray, float]:
    """Triangle ids of one rendered mesh seen in at least one pixel, and their total area."""
    ids = np.unique(maps.triangle[maps.instance == instance_index])
    return ids, mesh_surface_area(mesh, ids)
