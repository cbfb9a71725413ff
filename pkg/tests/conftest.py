import numpy as np
import pytest

from roommesh.geometry import TriangleMesh, intrinsics_camera
from roommesh.layout import Layout, ObjectBox, build_condition_scene, load_manifest
from roommesh.pipeline import PipelineConfig, RingParams
from roommesh.registration import RegistrationParams

_ACCEPTANCE: list[tuple[str, bool, str]] = []


def record_acceptance(name: str, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} | {detail}"
    print(line)
    _ACCEPTANCE.append((name, ok, detail))


@pytest.fixture
def acceptance():
    return record_acceptance


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture(scope="session")
def db():
    return {r.id: r for r in load_manifest()}


@pytest.fixture
def cam64():
    return intrinsics_camera(64, 48)


@pytest.fixture(scope="session")
def tiny_config():
    """Small enough for a full two-stage run in a few seconds."""
    return PipelineConfig(
        width=64, height=48,
        registration=RegistrationParams(levels=2, max_iters=40, max_points=500),
        ring=RingParams(yaw_steps=4, yaw_step_deg=90.0),
    )


def single_object_layout(rec, center=(2.0, 1.75), room=(4.0, 3.5, 2.5), rotation=0.0) -> Layout:
    return Layout(room, (ObjectBox(rec.category, center, tuple(rec.bbox[:2]), rotation, rec.bbox[2], tuple(rec.tags)),))


@pytest.fixture(scope="session")
def cabinet_scene(db):
    return build_condition_scene(single_object_layout(db["cabinet_box"]))


def quad(z=2.0, half=0.5, label=5):
    v = np.array([[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]], float)
    return TriangleMesh(v, np.array([[0, 1, 2], [0, 2, 3]]), None, np.full(4, label))
