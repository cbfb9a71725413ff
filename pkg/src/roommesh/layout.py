"""Layout parsing, primitive retrieval/placement and condition-scene assembly."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .geometry import TriangleMesh, concat_meshes, mesh_surface_area
from .io import read_mesh

EMPTY, WALL, FLOOR, CEILING = 0, 1, 2, 3
FIRST_OBJECT_ID = 16
BACKGROUND_IDS = (EMPTY, WALL, FLOOR, CEILING)
RESERVED_NAMES = {"empty": EMPTY, "wall": WALL, "floor": FLOOR, "ceiling": CEILING}

BUNDLED_MANIFEST = Path(__file__).parent / "data" / "primitives" / "manifest.json"


class LayoutError(ValueError):
    """Schema or validation failure in a layout document."""


class RetrievalError(LookupError):
    pass


@dataclass(frozen=True)
class ObjectBox:
    category: str
    center: tuple[float, float]
    footprint: tuple[float, float]
    rotation: float = 0.0
    height: float | None = None
    tags: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.category:
            raise LayoutError("category: must be nonempty")
        w, d = self.footprint
        if not (w > 0 and d > 0):
            raise LayoutError(f"size: footprint must be positive, got {self.footprint}")
        if self.height is not None and not self.height > 0:
            raise LayoutError(f"height: must be positive, got {self.height}")

    def corners(self) -> np.ndarray:
        w, d = self.footprint
        th = math.radians(self.rotation)
        c, s = math.cos(th), math.sin(th)
        local = np.array([[-w / 2, -d / 2], [w / 2, -d / 2], [w / 2, d / 2], [-w / 2, d / 2]])
        return local @ np.array([[c, s], [-s, c]]) + np.asarray(self.center)


@dataclass(frozen=True)
class Layout:
    room: tuple[float, float, float]
    objects: tuple[ObjectBox, ...] = ()
    seed: int = 0
    prompt: str = ""

    def __post_init__(self):
        if not all(x > 0 for x in self.room):
            raise LayoutError(f"room: dimensions must be positive, got {self.room}")
        W, D, _ = self.room
        for i, box in enumerate(self.objects):
            c = box.corners()
            if c.min() < -1e-9 or c[:, 0].max() > W + 1e-9 or c[:, 1].max() > D + 1e-9:
                raise LayoutError(f"objects[{i}]: footprint of '{box.category}' leaves the room")

    @property
    def center(self) -> np.ndarray:
        W, D, _ = self.room
        return np.array([W / 2, D / 2])


def _require(doc: dict, key: str, where: str):
    if not isinstance(doc, dict) or key not in doc:
        raise LayoutError(f"{where}{key}: missing required field")
    return doc[key]


def _number(x, where: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise LayoutError(f"{where}: expected a number, got {x!r}")
    return float(x)


def _pair(x, where: str) -> tuple[float, float]:
    if not isinstance(x, (list, tuple)) or len(x) != 2:
        raise LayoutError(f"{where}: expected [a, b]")
    return (_number(x[0], where), _number(x[1], where))


def parse_layout(document) -> Layout:
    """Parse a layout from a dict, a JSON/YAML string, or a path."""
    if isinstance(document, Path) or (isinstance(document, str) and "\n" not in document and Path(document).is_file()):
        document = Path(document).read_text()
    if isinstance(document, str):
        try:
            document = yaml.safe_load(document)
        except yaml.YAMLError as exc:
            raise LayoutError(f"document: not valid JSON/YAML ({exc})") from None
    if not isinstance(document, dict):
        raise LayoutError("document: top level must be a mapping")
    room = _require(document, "room", "")
    dims = tuple(_number(_require(room, k, "room."), f"room.{k}") for k in ("width", "depth", "height"))
    seed = document.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise LayoutError("seed: expected an integer")
    prompt = document.get("prompt", "")
    if not isinstance(prompt, str):
        raise LayoutError("prompt: expected a string")
    raw = document.get("objects", []) or []
    if not isinstance(raw, list):
        raise LayoutError("objects: expected a list")
    boxes = []
    for i, o in enumerate(raw):
        where = f"objects[{i}]."
        cat = _require(o, "category", where)
        if not isinstance(cat, str):
            raise LayoutError(f"{where}category: expected a string")
        tags = o.get("tags") or ()
        if isinstance(tags, str):
            tags = tags.split()
        height = o.get("height")
        boxes.append(ObjectBox(
            category=cat,
            center=_pair(_require(o, "center", where), where + "center"),
            footprint=_pair(_require(o, "size", where), where + "size"),
            rotation=_number(o.get("rotation", 0.0), where + "rotation"),
            height=None if height is None else _number(height, where + "height"),
            tags=tuple(str(t).lower() for t in tags),
        ))
    return Layout(room=dims, objects=tuple(boxes), seed=seed, prompt=prompt)


# --------------------------------------------------------------------------- primitive database


@dataclass(frozen=True)
class PrimitiveRecord:
    id: str
    category: str
    tags: tuple[str, ...]
    mesh_path: Path
    bbox: tuple[float, float, float]

    def __post_init__(self):
        if not all(x > 0 for x in self.bbox):
            raise ValueError(f"primitive {self.id}: bbox must be positive")

    def load_mesh(self) -> TriangleMesh:
        return _cached_mesh(str(self.mesh_path))


_MESH_CACHE: dict[str, TriangleMesh] = {}


def _cached_mesh(path: str) -> TriangleMesh:
    if path not in _MESH_CACHE:
        _MESH_CACHE[path] = read_mesh(path)
    return _MESH_CACHE[path]


def load_manifest(path=BUNDLED_MANIFEST) -> list[PrimitiveRecord]:
    path = Path(path)
    entries = json.loads(path.read_text())
    return [
        PrimitiveRecord(
            id=e["id"], category=e["category"], tags=tuple(t.lower() for t in e.get("tags", [])),
            mesh_path=path.parent / e["mesh"], bbox=tuple(float(x) for x in e["bbox"]),
        )
        for e in entries
    ]


def retrieve_primitive(box: ObjectBox, db, seed: int = 0) -> PrimitiveRecord:
    """Best category match by log aspect-ratio distance, optionally biased by tag overlap.

    `seed` is accepted for interface stability; ranking is fully deterministic.
    """
    cands = [r for r in db if r.category == box.category]
    if not cands:
        raise RetrievalError(f"no primitive of category '{box.category}' in the database")
    target = math.log(box.footprint[0] / box.footprint[1])
    wanted = set(box.tags)

    def score(rec: PrimitiveRecord):
        s = abs(target - math.log(rec.bbox[0] / rec.bbox[1]))
        if wanted:
            s -= 0.5 * len(wanted & set(rec.tags)) / len(wanted)
        return (s, rec.id)

    return min(cands, key=score)


@dataclass(frozen=True)
class PrimitiveInstance:
    record_id: str
    mesh: TriangleMesh
    box_index: int
    category_id: int
    center: np.ndarray
    total_area: float


def place_primitive(box: ObjectBox, rec: PrimitiveRecord, box_index: int = 0, category_id: int = 0) -> PrimitiveInstance:
    src = rec.load_mesh()
    lo, hi = src.bounds()
    ext = hi - lo
    sx, sy = box.footprint[0] / ext[0], box.footprint[1] / ext[1]
    sz = box.height / ext[2] if box.height is not None else 0.5 * (sx + sy)
    v = (src.vertices - [(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, lo[2]]) * [sx, sy, sz]
    th = math.radians(box.rotation)
    c, s = math.cos(th), math.sin(th)
    R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    v = v @ R.T + [box.center[0], box.center[1], 0.0]
    mesh = TriangleMesh(v, src.triangles, None, np.full(len(v), category_id))
    lo, hi = mesh.bounds()
    return PrimitiveInstance(rec.id, mesh, box_index, category_id, (lo + hi) / 2, mesh_surface_area(mesh))


@dataclass(frozen=True)
class ConditionScene:
    room: tuple[float, float, float]
    instances: tuple[PrimitiveInstance, ...]
    shell: TriangleMesh
    registry: dict[str, int] = field(default_factory=dict)

    def meshes(self) -> list[TriangleMesh]:
        """Render list: instance meshes in order, shell last."""
        return [inst.mesh for inst in self.instances] + [self.shell]

    @property
    def shell_index(self) -> int:
        return len(self.instances)

    def category_name(self, cid: int) -> str:
        for k, v in self.registry.items():
            if v == cid:
                return k
        return str(cid)


def room_shell(room) -> TriangleMesh:
    W, D, H = room
    quads = [
        ([(0, 0, 0), (W, 0, 0), (W, D, 0), (0, D, 0)], FLOOR),
        ([(0, 0, H), (0, D, H), (W, D, H), (W, 0, H)], CEILING),
        ([(0, 0, 0), (0, 0, H), (W, 0, H), (W, 0, 0)], WALL),
        ([(W, 0, 0), (W, 0, H), (W, D, H), (W, D, 0)], WALL),
        ([(W, D, 0), (W, D, H), (0, D, H), (0, D, 0)], WALL),
        ([(0, D, 0), (0, D, H), (0, 0, H), (0, 0, 0)], WALL),
    ]
    verts, tris, labels = [], [], []
    for q, lab in quads:
        o = len(verts)
        verts.extend(q)
        labels.extend([lab] * 4)
        tris.extend([(o, o + 1, o + 2), (o, o + 2, o + 3)])
    return TriangleMesh(np.array(verts, float), np.array(tris), None, np.array(labels))


def build_registry(layout: Layout) -> dict[str, int]:
    reg = dict(RESERVED_NAMES)
    nxt = FIRST_OBJECT_ID
    for box in layout.objects:
        if box.category not in reg:
            reg[box.category] = nxt
            nxt += 1
    return reg


def assemble_scene(layout: Layout, instances) -> ConditionScene:
    instances = tuple(instances)
    if len(instances) != len(layout.objects):
        raise ValueError("need exactly one instance per layout object")
    return ConditionScene(layout.room, instances, room_shell(layout.room), build_registry(layout))


def build_condition_scene(layout: Layout, db=None) -> ConditionScene:
    db = load_manifest() if db is None else db
    reg = build_registry(layout)
    insts = [
        place_primitive(box, retrieve_primitive(box, db, layout.seed), i, reg[box.category])
        for i, box in enumerate(layout.objects)
    ]
    return assemble_scene(layout, insts)
