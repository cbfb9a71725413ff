"""Procedural box-assembly primitives used as the bundled retrieval database."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import TriangleMesh, concat_meshes
from .io import write_ply


def box_mesh(lo, hi) -> TriangleMesh:
    """Closed axis-aligned box with outward-facing triangles."""
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    v = np.array([
        [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
        [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
    ], dtype=np.float64)
    f = np.array([
        [0, 2, 1], [0, 3, 2],  # bottom
        [4, 5, 6], [4, 6, 7],  # top
        [0, 1, 5], [0, 5, 4],  # -y
        [1, 2, 6], [1, 6, 5],  # +x
        [2, 3, 7], [2, 7, 6],  # +y
        [3, 0, 4], [3, 4, 7],  # -x
    ])
    return TriangleMesh(v, f)


def _boxes(*parts) -> TriangleMesh:
    return concat_meshes([box_mesh(lo, hi) for lo, hi in parts])


def _table(w, d, h, top=0.04, leg=0.05):
    parts = [((0, 0, h - top), (w, d, h))]
    for x, y in ((0, 0), (w - leg, 0), (0, d - leg), (w - leg, d - leg)):
        parts.append(((x, y, 0), (x + leg, y + leg, h - top)))
    return _boxes(*parts)


# id -> (category, tags, mesh factory)
CATALOG = {
    "chair_basic": ("chair", ["dining", "wooden", "simple"],
                    lambda: _boxes(((0, 0, 0), (0.45, 0.45, 0.45)), ((0, 0.38, 0.45), (0.45, 0.45, 0.9)))),
    "chair_lounge": ("chair", ["armchair", "lounge", "soft"],
                     lambda: _boxes(((0, 0, 0), (0.8, 0.7, 0.42)), ((0, 0.55, 0.42), (0.8, 0.7, 0.85)))),
    "table_dining": ("table", ["dining", "wooden", "rectangular"], lambda: _table(1.4, 0.8, 0.75)),
    "table_square": ("table", ["coffee", "square", "low"], lambda: _table(0.8, 0.8, 0.45)),
    "sofa_basic": ("sofa", ["fabric", "couch", "three-seat"],
                   lambda: _boxes(((0, 0, 0), (2.0, 0.9, 0.42)), ((0, 0.7, 0.42), (2.0, 0.9, 0.85)))),
    "bed_double": ("bed", ["double", "mattress"], lambda: box_mesh((0, 0, 0), (1.6, 2.0, 0.55))),
    "cabinet_box": ("cabinet", ["storage", "wooden"], lambda: box_mesh((0, 0, 0), (1.0, 0.5, 1.0))),
    "nightstand_box": ("nightstand", ["bedside", "small"], lambda: box_mesh((0, 0, 0), (0.5, 0.4, 0.55))),
    "bookshelf_box": ("bookshelf", ["tall", "books"], lambda: box_mesh((0, 0, 0), (0.9, 0.35, 1.8))),
    "desk_box": ("desk", ["office", "work"], lambda: box_mesh((0, 0, 0), (1.2, 0.6, 0.75))),
    "panel_thin": ("panel", ["divider", "screen", "flat"], lambda: box_mesh((0, 0, 0), (1.2, 0.05, 1.0))),
}

CONVEX_IDS = ("bed_double", "cabinet_box", "nightstand_box", "bookshelf_box", "desk_box")


def write_bundled_db(directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for pid, (cat, tags, make) in CATALOG.items():
        mesh = make()
        write_ply(directory / f"{pid}.ply", mesh)
        lo, hi = mesh.bounds()
        entries.append({"id": pid, "category": cat, "tags": tags, "mesh": f"{pid}.ply",
                        "bbox": [round(float(x), 6) for x in hi - lo]})
    manifest = directory / "manifest.json"
    manifest.write_text(json.dumps(entries, indent=2) + "\n")
    return manifest
