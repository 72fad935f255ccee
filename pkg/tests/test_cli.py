"""Command-line interface tests."""

import json

import numpy as np
import pytest

from groundplanekit import (
    SceneSpec,
    generate_scene,
    load_grid,
    parse_labels,
    write_calib,
    write_labels,
)
from groundplanekit.cli import main, scene_spec_from_json
from groundplanekit.ground_sampler import samples_from_csv
from groundplanekit.inference import detections_from_jsonl


def write_scene_inputs(tmp_path, seed=0):
    scene = generate_scene(SceneSpec(seed=seed))
    calib = tmp_path / "calib.txt"
    labels = tmp_path / "labels.txt"
    calib.write_text(write_calib(scene.calib), encoding="utf-8")
    labels.write_text(write_labels(scene.labels, precision="full"), encoding="utf-8")
    return scene, calib, labels


def test_sample_writes_parseable_csvs(tmp_path):
    scene, calib, labels = write_scene_inputs(tmp_path)
    out = tmp_path / "samples"
    assert main([
        "sample", "--calib", str(calib), "--labels", str(labels),
        "--seed", "0", "--out", str(out),
    ]) == 0
    files = sorted(out.glob("*.csv"))
    assert len(files) == len(scene.objects)
    for path in files:
        sets = samples_from_csv(path.read_text(encoding="utf-8"))
        assert len(sets) == 1
        assert sets[0].n >= 8


def test_fit_constant_depth_artifacts(tmp_path):
    rng = np.random.default_rng(0)
    uv = rng.uniform([0.0, 0.0], [116.0, 76.0], size=(300, 2))
    rows = "\n".join(
        f"{float(u)!r},{float(v)!r},10.0" for u, v in uv
    )
    csv = tmp_path / "samples.csv"
    csv.write_text("u,v,z\n" + rows + "\n", encoding="utf-8")
    out = tmp_path / "fit" / "grid.dgrd"
    assert main([
        "fit", "--samples", str(csv), "--height", "21", "--width", "31",
        "--stride", "4.0", "--iterations", "500", "--init", "0.0",
        "--out", str(out),
    ]) == 0
    grid = load_grid(out)
    assert grid.shape == (21, 31)
    loss_csv = out.parent / "grid_loss.csv"
    loss_png = out.parent / "grid_loss.png"
    assert loss_csv.exists() and loss_png.exists()
    final = float(loss_csv.read_text().strip().splitlines()[-1].split(",")[1])
    assert final < 1e-2


def test_infer_then_eval_zero_noise(tmp_path):
    scene, calib, labels = write_scene_inputs(tmp_path, seed=3)
    sample_dir = tmp_path / "samples"
    main(["sample", "--calib", str(calib), "--labels", str(labels),
          "--seed", "3", "--out", str(sample_dir)])
    grid_path = tmp_path / "grid.dgrd"
    main(["fit", "--samples", str(sample_dir),
          "--height", "91", "--width", "301", "--stride", "4.0",
          "--iterations", "400", "--init", "splat", "--out", str(grid_path)])
    preds = tmp_path / "preds.jsonl"
    main(["infer", "--grid", str(grid_path), "--labels", str(labels),
          "--calib", str(calib), "--noise-kp", "0", "--noise-height", "0",
          "--noise-depth", "0", "--seed", "3", "--out", str(preds)])
    records = detections_from_jsonl(preds.read_text(encoding="utf-8"))
    assert len(records) == len(scene.objects)
    for record, obj in zip(records, scene.objects):
        z = obj.box.location[2]
        assert abs(record.fused - z) / z < 2e-2

    report_path = tmp_path / "report.json"
    assert main(["eval", "--preds", str(preds), "--gt", str(labels),
                 "--out", str(report_path)]) == 0
    report = json.loads(report_path.read_text(encoding="utf-8"))
    assert set(report) == {"mpe", "ap_3d", "ap_bev"}
    assert report["mpe"] < 2e-2
    assert report["ap_3d"] == 1.0


def test_eval_predictions_equal_gt(tmp_path):
    _, _, labels = write_scene_inputs(tmp_path, seed=5)
    report_path = tmp_path / "report.json"
    assert main(["eval", "--preds", str(labels), "--gt", str(labels),
                 "--out", str(report_path)]) == 0
    report = json.loads(report_path.read_text(encoding="utf-8"))
    assert report["mpe"] == 0.0
    assert report["ap_3d"] == 1.0
    assert report["ap_bev"] == 1.0


def test_synth_writes_scene_files(tmp_path):
    out = tmp_path / "scene"
    spec = {"object_count": 3, "seed": 7}
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec), encoding="utf-8")
    assert main(["synth", "--spec", str(spec_path), "--out", str(out)]) == 0
    labels = parse_labels((out / "labels.txt").read_text(encoding="utf-8"))
    assert len(labels) == 3
    truth = json.loads((out / "truth.json").read_text(encoding="utf-8"))
    assert len(truth["objects"]) == 3
    assert (out / "calib.txt").exists()


def test_synth_seed_flag_overrides_spec(tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    main(["synth", "--seed", "9", "--out", str(out_a)])
    main(["synth", "--seed", "9", "--out", str(out_b)])
    assert (out_a / "labels.txt").read_bytes() == (out_b / "labels.txt").read_bytes()


def test_seed_env_fallback(tmp_path, monkeypatch, capsys):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    monkeypatch.setenv("GPK_SEED", "21")
    main(["synth", "--out", str(out_a)])
    monkeypatch.delenv("GPK_SEED")
    main(["synth", "--seed", "21", "--out", str(out_b)])
    assert (out_a / "labels.txt").read_bytes() == (out_b / "labels.txt").read_bytes()


def test_seed_env_invalid(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("GPK_SEED", "twelve")
    code = main(["synth", "--out", str(tmp_path / "x")])
    assert code == 2
    assert "gpk: error" in capsys.readouterr().err


def test_demo_outputs_deterministic(tmp_path, capsys):
    out_a = tmp_path / "demo_a"
    out_b = tmp_path / "demo_b"
    assert main(["demo", "--seed", "1", "--scenes", "1", "--out", str(out_a)]) == 0
    assert main(["demo", "--seed", "1", "--scenes", "1", "--out", str(out_b)]) == 0
    files_a = sorted(p.relative_to(out_a) for p in out_a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(out_b) for p in out_b.rglob("*") if p.is_file())
    assert files_a == files_b
    assert files_a
    for rel in files_a:
        assert (out_a / rel).read_bytes() == (out_b / rel).read_bytes()
    assert any(rel.suffix == ".png" for rel in files_a)
    assert any(rel.suffix == ".csv" for rel in files_a)


def test_missing_input_file_exit_code(tmp_path, capsys):
    code = main(["fit", "--samples", str(tmp_path / "nope.csv"),
                 "--height", "4", "--width", "4",
                 "--out", str(tmp_path / "g.dgrd")])
    assert code == 2
    assert "gpk: error" in capsys.readouterr().err


def test_corrupt_grid_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.dgrd"
    bad.write_bytes(b"JUNKJUNKJUNKJUNKJUNK")
    scene, calib, labels = write_scene_inputs(tmp_path, seed=2)
    code = main(["infer", "--grid", str(bad), "--labels", str(labels),
                 "--calib", str(calib), "--out", str(tmp_path / "p.jsonl")])
    assert code == 2
    assert "gpk: error" in capsys.readouterr().err


def test_unknown_argument_raises_system_exit():
    with pytest.raises(SystemExit):
        main(["fit", "--bogus"])


def snapshot_tree(root):
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in root.rglob("*")
        if p.is_file()
    }


def test_commands_write_only_under_out(tmp_path, monkeypatch):
    in_dir = tmp_path / "inputs"
    in_dir.mkdir()
    scene, calib, labels = write_scene_inputs(in_dir, seed=8)
    work = tmp_path / "cwd"
    work.mkdir()
    monkeypatch.chdir(work)
    out_dir = tmp_path / "only_here"

    before_inputs = snapshot_tree(in_dir)
    main(["sample", "--calib", str(calib), "--labels", str(labels),
          "--seed", "8", "--out", str(out_dir / "samples")])
    main(["fit", "--samples", str(out_dir / "samples"),
          "--height", "91", "--width", "301", "--iterations", "50",
          "--out", str(out_dir / "grid.dgrd")])
    main(["demo", "--seed", "2", "--scenes", "1", "--out", str(out_dir / "demo")])

    assert snapshot_tree(in_dir) == before_inputs
    assert snapshot_tree(work) == {}
    stray = [p for p in tmp_path.rglob("*") if p.is_file()
             and not str(p).startswith(str(out_dir))
             and not str(p).startswith(str(in_dir))]
    assert stray == []


def test_scene_spec_from_json_validation():
    assert scene_spec_from_json({"object_count": 2}).object_count == 2
    spec = scene_spec_from_json(
        {"noise": {"keypoint_px": 0.1}, "depth_range": [10, 20]}
    )
    assert spec.noise.keypoint_px == 0.1
    assert spec.depth_range == (10.0, 20.0)
    with pytest.raises(ValueError, match="unknown scene spec keys"):
        scene_spec_from_json({"bogus": 1})
    with pytest.raises(ValueError):
        scene_spec_from_json({"noise": {"bogus": 1}})
    with pytest.raises(ValueError):
        scene_spec_from_json({"depth_range": [1, 2, 3]})
    with pytest.raises(ValueError):
        scene_spec_from_json({"camera": 5})
