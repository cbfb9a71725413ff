import numpy as np
import pytest

from roommesh.backends import palette_color
from roommesh.geometry import TriangleMesh
from roommesh.metrics import layout_consistency, point_to_mesh_distance

TRI = TriangleMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]))


@pytest.mark.parametrize("p, d", [
    ((0.2, 0.2, 0.5), 0.5),            # above the interior
    ((-1.0, -1.0, 0.0), np.sqrt(2)),   # vertex region
    ((0.5, -2.0, 0.0), 2.0),           # edge region
    ((1.0, 1.0, 0.0), np.sqrt(0.5)),   # hypotenuse
])
def test_known_distances(p, d):
    assert point_to_mesh_distance(np.array([p]), TRI)[0] == pytest.approx(d, abs=1e-12)


def test_against_dense_samples():
    rng = np.random.default_rng(0)
    verts = rng.uniform(-1, 1, (9, 3))
    mesh = TriangleMesh(verts, np.arange(9).reshape(3, 3))
    n = 60
    a, b = np.meshgrid(np.linspace(0, 1, n), np.linspace(0, 1, n))
    keep = a + b <= 1
    bary = np.stack([1 - a[keep] - b[keep], a[keep], b[keep]], axis=1)
    samples = np.concatenate([bary @ verts[t] for t in mesh.triangles])
    pts = rng.uniform(-1.5, 1.5, (200, 3))
    d = point_to_mesh_distance(pts, mesh, chunk=50)
    brute = np.linalg.norm(pts[:, None] - samples[None], axis=-1).min(axis=1)
    assert (d <= brute + 1e-12).all()
    assert (brute - d).max() < 0.05


def test_empty_inputs():
    assert point_to_mesh_distance(np.zeros((0, 3)), TRI).shape == (0,)
    assert np.isinf(point_to_mesh_distance(np.zeros((2, 3)), TriangleMesh.empty())).all()


def test_layout_consistency(cabinet_scene):
    inst = cabinet_scene.instances[0]
    v = inst.mesh.vertices
    labels = np.full(len(v), inst.category_id)
    mesh = TriangleMesh(v, np.zeros((0, 3), np.int64), palette_color(labels) * 0.7, labels)
    c = layout_consistency(mesh, cabinet_scene)
    assert c["distance_p95"] < 1e-9 and c["color_match"] == 1.0
    wrong = TriangleMesh(v + [0, 0, 0.5], np.zeros((0, 3), np.int64), palette_color(labels + 1), labels)
    c = layout_consistency(wrong, cabinet_scene)
    assert c["distance_p95"] > 0.1 and c["color_match"] == 0.0
    assert layout_consistency(TriangleMesh.empty(), cabinet_scene)["distance_p95"] is None
