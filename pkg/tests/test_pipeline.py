import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest

from roommesh import io
from roommesh.cli import main
from roommesh.geometry import project
from roommesh.layout import FIRST_OBJECT_ID, build_condition_scene, parse_layout
from roommesh.pipeline import (Engine, PipelineConfig, PipelineError, RingParams, background_trajectory,
                                camera_line, load_camera, parse_camera_line, run)
from roommesh.raster import render
from roommesh.backends import MockBackend

DATA = Path(__file__).resolve().parents[1] / "src" / "roommesh" / "data"
CABINET = DATA / "layouts" / "single_cabinet.yaml"
EMPTY = DATA / "layouts" / "empty.yaml"


def test_trajectory_default():
    cams = background_trajectory((4.0, 3.0, 2.6))
    assert len(cams) == 38
    for c in cams:
        assert np.array_equal(c.origin, [2.0, 1.5, 1.5])
    for ring, pitch in ((cams[:18], -15.0), (cams[18:36], 25.0)):
        for k, c in enumerate(ring):
            f = c.forward
            assert np.degrees(np.arctan2(f[1], f[0])) % 360 == pytest.approx(k * 20.0, abs=1e-9)
            assert np.degrees(np.arcsin(f[2])) == pytest.approx(pitch, abs=1e-9)
    assert cams[36].forward == pytest.approx([0, 0, -1])
    assert cams[37].forward == pytest.approx([0, 0, 1])


def test_config_roundtrip_and_validation(tmp_path):
    cfg = PipelineConfig.load(DATA / "fast.yaml")
    assert (cfg.width, cfg.height) == (256, 192)
    assert PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError):
        PipelineConfig(width=250)
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"widht": 256})
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"fusion": {"edge": 2}})
    p = tmp_path / "c.yaml"
    p.write_text("registration: {levels: 2}\nring: {yaw_steps: 6}\n")
    cfg = PipelineConfig.load(p)
    assert cfg.registration.levels == 2 and cfg.ring.yaw_steps == 6


def test_camera_line_roundtrip(tmp_path):
    cam = background_trajectory((4.0, 3.0, 2.6))[5]
    back = parse_camera_line(camera_line(cam, "7 1 0"))
    assert np.allclose(back.rotation, cam.rotation, atol=1e-5)
    assert np.allclose(back.origin, cam.origin, atol=1e-6)
    assert back.resolution == cam.resolution
    p = tmp_path / "cam.json"
    p.write_text(json.dumps(cam.to_dict()))
    assert np.array_equal(load_camera(p).rotation, cam.rotation)
    with pytest.raises(ValueError):
        parse_camera_line("1 2 3")


@pytest.fixture(scope="module")
def cabinet_run(tmp_path_factory, tiny_config):
    out = tmp_path_factory.mktemp("cabinet")
    return run(CABINET, tiny_config, out_dir=out), out


def test_empty_layout_is_shell_only(tiny_config):
    res = run(EMPTY, tiny_config, figures=False)
    assert all(f.stage == 2 for f in res.frames)
    assert len(res.frames) == len(background_trajectory(res.scene.room, tiny_config))
    assert res.mesh.n_vertices > 0 and not res.mesh.foreground.any()
    assert (res.mesh.mesh.labels < FIRST_OBJECT_ID).all()


def test_counts_monotone_within_stages(cabinet_run):
    res, _ = cabinet_run
    for stage in (1, 2):
        f = [r for r in res.frames if r.stage == stage]
        assert all(b.vertices >= a.vertices and b.triangles >= a.triangles for a, b in zip(f, f[1:]))


def test_report_totals(cabinet_run):
    res, out = cabinet_run
    rep = json.loads((out / "report.json").read_text())
    for k, v in rep["totals"].items():
        assert v == sum(f["fusion"][k] for f in rep["frames"])
        assert v >= 0
    assert rep["mesh"]["vertices"] == res.mesh.n_vertices


def test_vertices_inside_room(cabinet_run):
    res, _ = cabinet_run
    v = res.mesh.mesh.vertices
    room = np.array(res.scene.room)
    assert (v >= -0.1).all() and (v <= room + 0.1).all()


def test_artifacts(cabinet_run):
    res, out = cabinet_run
    n = len(res.frames)
    for i in range(n):
        for kind in ("color", "depth", "semantic", "mask"):
            assert (out / "frames" / f"{i:03d}_{kind}.png").exists()
    mesh = io.read_ply(out / "mesh.ply")
    assert len(mesh.vertices) == res.mesh.n_vertices
    lines = [l for l in (out / "cameras.txt").read_text().splitlines() if not l.startswith("#")]
    assert len(lines) == n
    for name in ("registration_loss.png", "fusion.png", "coverage.png"):
        assert (out / "figures" / name).exists()


def test_foreground_is_near_primitive(cabinet_run):
    c = cabinet_run[0].report["consistency"]
    assert c["foreground_vertices"] > 0 and c["distance_p95"] <= 0.05


def test_step_provenance_and_rerender(tiny_config, tmp_path):
    scene = build_condition_scene(parse_layout(CABINET))
    cfg = tiny_config
    eng = Engine(scene, cfg, MockBackend(), "p", frames_dir=tmp_path)
    cam = background_trajectory(scene.room, cfg)[0]
    cond = render(scene.meshes(), cam)
    rec = eng.step(cam, 1, 0)
    assert not rec.skipped
    m = eng.mesh.mesh
    uv, _, front = project(m.vertices, cam)
    assert front.all()
    px = np.clip(np.rint(uv).astype(int), 0, [cam.width - 1, cam.height - 1])
    assert np.array_equal(m.labels, cond.semantic.ids[px[:, 1], px[:, 0]])
    warped = io.load_depth(tmp_path / f"{rec.index:03d}_depth.png")
    again = render([m], cam)
    # first frame on an empty mesh: every valid warped pixel was fused
    fused = warped.mask
    assert again.valid[fused].mean() >= 0.95
    ok = np.abs(again.depth.values - warped.values)[fused & again.valid] <= cfg.fusion.seam_tol
    assert ok.mean() >= 0.95


def test_error_reports_frame(tiny_config, tmp_path):
    class Broken(MockBackend):
        def estimate(self, color, context=None, seed=0):
            raise RuntimeError("model crashed")

    with pytest.raises(PipelineError) as exc:
        run(CABINET, tiny_config, out_dir=tmp_path, backend=Broken())
    assert exc.value.frame == 0 and exc.value.stage == 1
    rep = json.loads((tmp_path / "report.json").read_text())
    assert "model crashed" in rep["error"]


def test_unknown_ablation(tiny_config):
    with pytest.raises(ValueError):
        run(EMPTY, tiny_config, ablate="no-fusion")


def test_no_avs_uses_ring(tiny_config):
    res = run(CABINET, tiny_config, ablate="no-avs", figures=False)
    ring = {tuple(c.origin) for c in background_trajectory(res.scene.room, tiny_config)}
    assert all(tuple(f.camera.origin) in ring for f in res.frames if f.stage == 1)


def _tiny_yaml(tmp_path, cfg):
    p = tmp_path / "tiny.yaml"
    import yaml

    p.write_text(yaml.safe_dump(json.loads(json.dumps(cfg.to_dict()))))
    return p


def test_cli_run(tiny_config, tmp_path, capsys):
    cfgp = _tiny_yaml(tmp_path, tiny_config)
    assert main(["run", str(CABINET), "--config", str(cfgp), "--out", str(tmp_path / "o"), "--no-figures"]) == 0
    assert (tmp_path / "o" / "mesh.ply").exists()
    assert "vertices=" in capsys.readouterr().out


def test_cli_render_select_register(tiny_config, tmp_path):
    cfgp = _tiny_yaml(tmp_path, tiny_config)
    r = tmp_path / "r"
    assert main(["render", str(CABINET), "--config", str(cfgp), "--eye", "0.5", "0.5", "1.5",
                 "--at", "2", "1.2", "0.5", "--out", str(r)]) == 0
    for name in ("depth", "semantic", "normal", "color", "prim_id"):
        assert (r / f"{name}.png").exists()
    views = tmp_path / "views.txt"
    assert main(["select-views", str(CABINET), "--config", str(cfgp), "--out", str(views),
                 "--scores", str(tmp_path / "s.json")]) == 0
    cam = load_camera(views)
    assert cam.resolution == (64, 48)
    json.loads((tmp_path / "s.json").read_text())

    scene = build_condition_scene(parse_layout(CABINET))
    cond = render(scene.meshes(), cam).depth
    est = MockBackend().estimate(None, cond, 0)
    io.save_depth(tmp_path / "cond.png", cond)
    io.save_depth(tmp_path / "est.png", est)
    log = tmp_path / "loss.txt"
    assert main(["register", str(tmp_path / "est.png"), str(tmp_path / "cond.png"), "--camera", str(views),
                 "--levels", "2", "--out", str(tmp_path / "w.png"), "--log", str(log),
                 "--plot", str(tmp_path / "loss.png")]) == 0
    assert log.read_text().startswith("# align status=ok")
    assert (tmp_path / "w.png").exists() and (tmp_path / "loss.png").exists()


def test_cli_errors(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("room: {width: 4}\n")
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "room" in capsys.readouterr().err
