"""PNG image and PLY/OBJ mesh serialization."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import ColorMap, DepthMap, SemanticMap, TriangleMesh

MAX_DEPTH_MM = 65535


def color_to_png_bytes(color: ColorMap) -> bytes:
    arr = np.round(color.rgb * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def color_from_png_bytes(data: bytes) -> ColorMap:
    img = Image.open(io.BytesIO(data)).convert("RGB")
    return ColorMap(np.asarray(img, dtype=np.float64) / 255.0)


def depth_to_png_bytes(depth: DepthMap) -> bytes:
    mm = np.where(depth.mask, np.round(depth.values * 1000.0), 0)
    mm = np.clip(mm, 0, MAX_DEPTH_MM).astype(np.uint16)
    buf = io.BytesIO()
    Image.fromarray(mm).save(buf, format="PNG")
    return buf.getvalue()


def depth_from_png_bytes(data: bytes) -> DepthMap:
    img = Image.open(io.BytesIO(data))
    mm = np.asarray(img).astype(np.float64)
    if mm.ndim != 2:
        raise ValueError("depth PNG must be single-channel")
    return DepthMap(mm / 1000.0, mm > 0)


def mask_to_png_bytes(mask: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def mask_from_png_bytes(data: bytes) -> np.ndarray:
    return np.asarray(Image.open(io.BytesIO(data)).convert("L")) > 127


def semantic_to_png_bytes(sem: SemanticMap) -> bytes:
    if sem.ids.size and (sem.ids.min() < 0 or sem.ids.max() > 255):
        raise ValueError("semantic ids must fit in 8 bits")
    buf = io.BytesIO()
    Image.fromarray(sem.ids.astype(np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def semantic_from_png_bytes(data: bytes) -> SemanticMap:
    return SemanticMap(np.asarray(Image.open(io.BytesIO(data))).astype(np.int32))


def save_color(path, color: ColorMap) -> None:
    Path(path).write_bytes(color_to_png_bytes(color))


def save_depth(path, depth: DepthMap) -> None:
    Path(path).write_bytes(depth_to_png_bytes(depth))


def save_semantic(path, sem: SemanticMap) -> None:
    Path(path).write_bytes(semantic_to_png_bytes(sem))


def save_mask(path, mask) -> None:
    Path(path).write_bytes(mask_to_png_bytes(mask))


def save_prim_ids(path, instance: np.ndarray, triangle: np.ndarray) -> None:
    """RGB PNG: red = instance + 1, green/blue = triangle + 1 (high/low byte); 0 = empty."""
    if instance.max(initial=-1) >= 255 or triangle.max(initial=-1) >= 65535:
        raise ValueError("primitive ids exceed the 8/16-bit PNG encoding")
    t = (triangle + 1).astype(np.uint32)
    arr = np.stack([instance + 1, t >> 8, t & 255], axis=-1).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_depth(path) -> DepthMap:
    return depth_from_png_bytes(Path(path).read_bytes())


def load_color(path) -> ColorMap:
    return color_from_png_bytes(Path(path).read_bytes())


# --------------------------------------------------------------------------- meshes


def write_ply(path, mesh: TriangleMesh, extra_vertex_props: dict[str, np.ndarray] | None = None) -> None:
    """ASCII PLY with per-vertex rgb and an integer `semantic` property."""
    extra = extra_vertex_props or {}
    n, m = len(mesh.vertices), len(mesh.triangles)
    header = ["ply", "format ascii 1.0", f"element vertex {n}",
              "property float x", "property float y", "property float z",
              "property uchar red", "property uchar green", "property uchar blue",
              "property int semantic"]
    header += [f"property int {k}" for k in extra]
    header += [f"element face {m}", "property list uchar int vertex_indices", "end_header"]
    rgb = np.round(mesh.colors * 255).astype(np.int64)
    cols = [np.char.mod("%.6f", mesh.vertices[:, i]) for i in range(3)]
    cols += [rgb[:, i].astype(str) for i in range(3)]
    cols.append(mesh.labels.astype(str))
    cols += [np.asarray(v).astype(np.int64).astype(str) for v in extra.values()]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(header) + "\n")
        if n:
            rows = cols[0]
            for c in cols[1:]:
                rows = np.char.add(np.char.add(rows, " "), c)
            fh.write("\n".join(rows.tolist()) + "\n")
        if m:
            t = mesh.triangles.astype(str)
            rows = np.char.add("3 ", np.char.add(np.char.add(np.char.add(t[:, 0], " "), np.char.add(t[:, 1], " ")), t[:, 2]))
            fh.write("\n".join(rows.tolist()) + "\n")


def read_ply(path) -> TriangleMesh:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    if "ascii" not in lines[1]:
        raise ValueError(f"{path}: only ASCII PLY is supported")
    n_v = n_f = 0
    props: list[str] = []
    element = None
    i = 1
    while lines[i].strip() != "end_header":
        tok = lines[i].split()
        if tok[0] == "element":
            element = tok[1]
            if element == "vertex":
                n_v = int(tok[2])
            elif element == "face":
                n_f = int(tok[2])
        elif tok[0] == "property" and element == "vertex":
            props.append(tok[-1])
        i += 1
    body = lines[i + 1 :]
    vdata = np.array([l.split() for l in body[:n_v]], dtype=np.float64).reshape(n_v, len(props))
    col = {p: vdata[:, j] for j, p in enumerate(props)}
    verts = np.stack([col["x"], col["y"], col["z"]], axis=1)
    colors = None
    if "red" in col:
        colors = np.stack([col["red"], col["green"], col["blue"]], axis=1) / 255.0
    labels = col["semantic"].astype(np.int32) if "semantic" in col else None
    faces = []
    for l in body[n_v : n_v + n_f]:
        tok = [int(x) for x in l.split()]
        idx = tok[1 : 1 + tok[0]]
        faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
    return TriangleMesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3), colors, labels)


def read_obj(path) -> TriangleMesh:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "v":
            verts.append([float(x) for x in tok[1:4]])
        elif tok[0] == "f":
            idx = [int(t.split("/")[0]) for t in tok[1:]]
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
    return TriangleMesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def read_mesh(path) -> TriangleMesh:
    p = Path(path)
    if p.suffix.lower() == ".obj":
        return read_obj(p)
    return read_ply(p)
