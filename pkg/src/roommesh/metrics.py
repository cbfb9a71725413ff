"""Layout-consistency measurements of a fused mesh against its primitives."""

from __future__ import annotations

import numpy as np

from .backends import palette_match
from .geometry import TriangleMesh
from .layout import FIRST_OBJECT_ID, ConditionScene


def _closest_on_triangles(p, a, b, c):
    """Closest points on triangles (a, b, c) to points p; all arrays (n, 3)."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = (ab * ap).sum(-1)
    d2 = (ac * ap).sum(-1)
    bp = p - b
    d3 = (ab * bp).sum(-1)
    d4 = (ac * bp).sum(-1)
    cp = p - c
    d5 = (ab * cp).sum(-1)
    d6 = (ac * cp).sum(-1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(p)
    done = np.zeros(len(p), bool)

    def put(cond, val):
        nonlocal done
        m = cond & ~done
        out[m] = val[m]
        done |= m

    with np.errstate(divide="ignore", invalid="ignore"):
        put((d1 <= 0) & (d2 <= 0), a)
        put((d3 >= 0) & (d4 <= d3), b)
        put((d6 >= 0) & (d5 <= d6), c)
        t = d1 / (d1 - d3)
        put((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + t[:, None] * ab)
        t = d2 / (d2 - d6)
        put((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + t[:, None] * ac)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        put((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), b + t[:, None] * (c - b))
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        put(np.ones(len(p), bool), a + v[:, None] * ab + w[:, None] * ac)
    return out


def point_to_mesh_distance(points: np.ndarray, mesh: TriangleMesh, chunk: int = 200_000) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        return np.zeros(0)
    if len(mesh.triangles) == 0:
        return np.full(len(points), np.inf)
    tri = mesh.vertices[mesh.triangles]
    m = len(tri)
    best = np.full(len(points), np.inf)
    step = max(1, chunk // m)
    for s in range(0, len(points), step):
        p = points[s : s + step]
        P = np.repeat(p, m, axis=0)
        T = np.tile(tri, (len(p), 1, 1))
        q = _closest_on_triangles(P, T[:, 0], T[:, 1], T[:, 2])
        d = np.linalg.norm(P - q, axis=1).reshape(len(p), m)
        best[s : s + step] = d.min(axis=1)
    return best


def layout_consistency(mesh: TriangleMesh, scene: ConditionScene) -> dict:
    """Distance of object-labelled vertices to the primitives and palette agreement."""
    fg = mesh.labels >= FIRST_OBJECT_ID
    n = int(fg.sum())
    if n == 0 or not scene.instances:
        return {"foreground_vertices": n, "distance_p95": None, "distance_mean": None, "color_match": None}
    from .geometry import concat_meshes

    prims = concat_meshes([i.mesh for i in scene.instances])
    d = point_to_mesh_distance(mesh.vertices[fg], prims)
    match = palette_match(mesh.colors[fg], mesh.labels[fg])
    return {
        "foreground_vertices": n,
        "distance_p95": float(np.percentile(d, 95)),
        "distance_mean": float(d.mean()),
        "color_match": float(match.mean()),
    }
