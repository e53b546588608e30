import json

import numpy as np
import pytest

from mvs_selfsup import cli, io
from mvs_selfsup.synth import plane_scene


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("scene")
    spec = root / "spec.json"
    spec.write_text(json.dumps(plane_scene(n_views=2, size=16, seed=0).to_dict()))
    out = root / "scene"
    assert cli.main(["synth", str(spec), "--out", str(out)]) == 0
    return out


def _optimize(tmp_path, scene_dir, extra=(), **opt):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scene_dir": str(scene_dir), "optimize": {"iterations": 3, "pyramid_levels": 1, **opt}}))
    out = tmp_path / "run"
    assert cli.main(["optimize", "--config", str(cfg), "--out", str(out), *extra]) == 0
    return out


def test_synth_layout(scene_dir):
    top = sorted(p.name for p in scene_dir.iterdir() if p.is_file())
    assert top == ["cam_00.txt", "cam_01.txt", "depth_00.pfm", "depth_01.pfm", "manifest.json", "view_00.png", "view_01.png"]
    manifest = json.loads((scene_dir / "manifest.json").read_text())
    assert manifest["n_views"] == 2
    scene = cli.load_scene(scene_dir)
    assert scene.images[0].shape == (16, 16, 3) and len(scene.depths) == 2


def test_synth_bytes_deterministic(scene_dir, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(plane_scene(n_views=2, size=16, seed=0).to_dict()))
    assert cli.main(["synth", str(spec), "--out", str(tmp_path / "again")]) == 0
    for name in ("depth_00.pfm", "depth_01.pfm", "view_01.png", "lossless/view_01.pfm"):
        assert (scene_dir / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_synth_bad_spec(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["synth", str(bad), "--out", str(tmp_path / "o")]) == 2
    bad.write_text(json.dumps({"primitives": []}))
    assert cli.main(["synth", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["synth", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 2


def test_optimize_outputs(scene_dir, tmp_path):
    out = _optimize(tmp_path, scene_dir)
    lines = (out / "trace.jsonl").read_text().splitlines()
    assert len(lines) == 3
    summary = json.loads((out / "summary.json").read_text())
    assert summary["iterations"] == 3
    assert summary["depth_error"]["mean_abs"] < summary["depth_error"]["mean_abs_init"]
    assert io.read_pfm(out / "depth.pfm").shape == (16, 16)
    pts, _ = io.read_ply(out / "recon.ply")
    assert pts.shape == (256, 3)


def test_optimize_zero_iterations_keeps_init(scene_dir, tmp_path):
    out = _optimize(tmp_path, scene_dir, iterations=0)
    gt = io.read_pfm(scene_dir / "depth_00.pfm")
    m = json.loads((scene_dir / "manifest.json").read_text())
    expect = np.clip(gt * 1.1, m["d_min"], m["d_max"])
    np.testing.assert_array_equal(io.read_pfm(out / "depth.pfm"), expect.astype(np.float32))
    assert (out / "trace.jsonl").read_text() == ""


def test_optimize_disable_flags(scene_dir, tmp_path):
    out = _optimize(tmp_path, scene_dir, extra=("--disable-sc", "--disable-da"))
    for line in (out / "trace.jsonl").read_text().splitlines():
        rec = json.loads(line)
        assert rec["l_sc"] == 0 and rec["l_da"] == 0


def test_optimize_usage_errors(scene_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("[1, 2")
    assert cli.main(["optimize", "--config", str(cfg)]) == 2
    cfg.write_text(json.dumps({"scene_dir": str(scene_dir), "optimize": {"iterations": -3}}))
    assert cli.main(["optimize", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    cfg.write_text(json.dumps({"optimize": {}}))
    assert cli.main(["optimize", "--config", str(cfg)]) == 2
    cfg.write_text(json.dumps({"scene_dir": str(scene_dir), "init": {"mode": "oracle"}}))
    assert cli.main(["optimize", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_coseg(scene_dir, tmp_path):
    out = tmp_path / "seg"
    assert cli.main(["coseg", str(scene_dir), "--k", "4", "--out", str(out), "--iters", "40"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["k"] == 4 and len(report["cluster_fractions"]) == 4
    assert sum(report["cluster_fractions"]) == 2 * 16 * 16
    assert np.all(np.diff(report["error_trace"]) <= 1e-9)
    assert report["simplex_max_deviation"] < 1e-6
    assert io.read_png(out / "labels_01.png").shape == (16, 16, 3)
    assert cli.main(["coseg", str(scene_dir), "--k", "17", "--out", str(out)]) == 2
    assert cli.main(["coseg", str(scene_dir), "--k", "0", "--out", str(out)]) == 2


def test_eval(tmp_path, capsys):
    pts = np.random.default_rng(0).normal(size=(50, 3))
    io.write_ply(tmp_path / "a.ply", pts)
    capsys.readouterr()
    assert cli.main(["eval", str(tmp_path / "a.ply"), str(tmp_path / "a.ply")]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["accuracy"] == res["completeness"] == 0.0 and res["outlier_cap"] == 20.0


def test_eval_bad_input(tmp_path):
    io.write_ply(tmp_path / "a.ply", np.zeros((3, 3)))
    (tmp_path / "bad.ply").write_text("ply\nformat ascii 1.0\nelement vertex 3\n")
    assert cli.main(["eval", str(tmp_path / "bad.ply"), str(tmp_path / "a.ply")]) == 2
    assert cli.main(["eval", str(tmp_path / "nope.ply"), str(tmp_path / "a.ply")]) == 2


def test_argparse_errors():
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 2
