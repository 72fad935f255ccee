"""Command-line pipeline: `gpk` ties sampling, grid fitting, inference,
evaluation, and scene synthesis into reproducible file-to-file steps.

Every subcommand is deterministic given its flags and seed, writes only
under its --out path, and exits nonzero with a message on standard error
when inputs are missing or malformed. GPK_SEED overrides the default seed
for subcommands whose --seed flag is not given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import plots
from .camera_geometry import CameraModel, ObjectBox3D, Plane3D
from .depth_grid import FitConfig, fit_grid, history_to_csv, load_grid, save_grid
from .evaluation import ap_r40, bev_iou, iou_3d, mpe
from .ground_sampler import grounded_samples, samples_from_csv, samples_to_csv
from .inference import DetectionRecord, detections_from_jsonl, detections_to_jsonl
from .kitti_io import (
    load_calib,
    load_labels,
    parse_labels,
    valid_objects,
    write_calib,
    write_labels,
)
from .pipeline import (
    ExperimentResult,
    FUSED_CHANNELS,
    ObjectObservation,
    default_fit_config,
    experiment_csv,
    infer_object,
    mpe_table_text,
    object_sample_seed,
    run_scene,
    scene_rows,
)
from .synth_scene import NoiseSpec, SceneSpec, generate_scene, scene_truth_payload

DEFAULT_SEED = 0


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("GPK_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValueError(f"GPK_SEED must be an integer, got {env!r}")
    return DEFAULT_SEED


def _write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _cmd_sample(args) -> int:
    calib = load_calib(args.calib)
    cam = calib.camera(args.camera)
    labels = valid_objects(load_labels(args.labels))
    if not labels:
        raise ValueError(f"no valid objects in {args.labels}")
    seed = _resolve_seed(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, record in enumerate(labels):
        sample_set = grounded_samples(cam, record.box3d(), object_sample_seed(seed, i))
        _write_text(out / f"samples_{i:03d}.csv", samples_to_csv(sample_set))
    print(f"wrote {len(labels)} grounded-sample files to {out}")
    return 0


def _parse_init(value: str):
    if value in ("mean", "splat"):
        return value
    try:
        return float(value)
    except ValueError:
        raise ValueError(f"--init must be 'mean', 'splat', or a number, got {value!r}")


def _cmd_fit(args) -> int:
    source = Path(args.samples)
    if source.is_dir():
        files = sorted(source.glob("*.csv"))
    elif source.exists():
        files = [source]
    else:
        raise ValueError(f"sample path {source} does not exist")
    if not files:
        raise ValueError(f"no sample CSV files under {source}")
    sample_sets = []
    for path in files:
        sample_sets.extend(samples_from_csv(path.read_text(encoding="utf-8")))
    config = FitConfig(
        iterations=args.iterations,
        step_size=args.step,
        init=_parse_init(args.init),
        smoothness=args.smoothness,
    )
    result = fit_grid(sample_sets, (args.height, args.width, args.stride), config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_grid(result.grid, out)
    loss_csv = out.with_name(out.stem + "_loss.csv")
    loss_csv.write_text(history_to_csv(result.history), encoding="utf-8")
    loss_png = out.with_name(out.stem + "_loss.png")
    plots.save_loss_curve(result.history, loss_png)
    n = sum(s.n for s in sample_sets)
    print(
        f"fit {len(sample_sets)} sample sets ({n} samples); "
        f"final loss {result.final_loss!r}"
    )
    print(f"wrote {out}, {loss_csv.name}, {loss_png.name}")
    return 0


def _cmd_infer(args) -> int:
    grid = load_grid(args.grid)
    cam = load_calib(args.calib).camera(args.camera)
    labels = valid_objects(load_labels(args.labels))
    if not labels:
        raise ValueError(f"no valid objects in {args.labels}")
    noise = NoiseSpec(
        keypoint_px=args.noise_kp,
        height_m=args.noise_height,
        depth_rel=args.noise_depth,
    )
    rng = np.random.Generator(np.random.Philox(_resolve_seed(args.seed)))
    records = []
    for i, record in enumerate(labels):
        obs = ObjectObservation.from_label(cam, record, noise, rng)
        inference = infer_object(
            cam, grid, obs, noise, grid_sigma=args.grid_sigma, object_id=i
        )
        records.append(inference.to_record())
    out = Path(args.out)
    _write_text(out, detections_to_jsonl(records))
    print(f"wrote {len(records)} detection records to {out}")
    return 0


def _fused_score(record: DetectionRecord) -> float:
    fused = [record.estimates[k] for k in FUSED_CHANNELS if k in record.estimates]
    if not fused:
        return 1.0
    sigma = len(fused) / sum(1.0 / e.sigma for e in fused)
    return 1.0 / (1.0 + sigma)


def _rescale_to_depth(box: ObjectBox3D, z: float) -> ObjectBox3D:
    # Slide the box along its camera ray so the pixel footprint is kept.
    scale = z / box.location[2]
    location = tuple(c * scale for c in box.location)
    return ObjectBox3D(location, box.dims, box.yaw)


def _cmd_eval(args) -> int:
    gt_records = valid_objects(load_labels(args.gt))
    if not gt_records:
        raise ValueError(f"no valid objects in {args.gt}")
    gt_boxes = [r.box3d() for r in gt_records]
    preds_path = Path(args.preds)
    text = preds_path.read_text(encoding="utf-8")

    if preds_path.suffix == ".jsonl" or text.lstrip().startswith("{"):
        records = detections_from_jsonl(text)
        if not records:
            raise ValueError(f"no detection records in {preds_path}")
        preds_z, gts_z, scored = [], [], []
        for record in records:
            if not (0 <= record.object_id < len(gt_boxes)):
                raise ValueError(
                    f"object_id {record.object_id} has no ground-truth row"
                )
            gt_box = gt_boxes[record.object_id]
            gt_z = record.gt_depth
            if gt_z is None:
                gt_z = gt_box.location[2]
            preds_z.append(record.fused)
            gts_z.append(gt_z)
            scored.append(
                (_rescale_to_depth(gt_box, record.fused), _fused_score(record))
            )
    else:
        pred_records = valid_objects(parse_labels(text))
        if len(pred_records) != len(gt_records):
            raise ValueError(
                f"prediction/ground-truth count mismatch: "
                f"{len(pred_records)} vs {len(gt_records)}"
            )
        preds_z = [r.location[2] for r in pred_records]
        gts_z = [r.location[2] for r in gt_records]
        scored = [
            (r.box3d(), 1.0 if r.score is None else r.score) for r in pred_records
        ]

    report = {
        "mpe": mpe(preds_z, gts_z),
        "ap_3d": ap_r40([scored], [gt_boxes], iou_3d, args.iou_3d),
        "ap_bev": ap_r40([scored], [gt_boxes], bev_iou, args.iou_bev),
    }
    out = Path(args.out)
    _write_text(out, json.dumps(report, sort_keys=True, indent=2) + "\n")
    for name in ("mpe", "ap_3d", "ap_bev"):
        print(f"{name:7s} {report[name]:.6f}")
    return 0


_SPEC_KEYS = {
    "camera",
    "image_size",
    "ground_y",
    "object_count",
    "depth_range",
    "height_range",
    "width_range",
    "length_range",
    "yaw_range",
    "noise",
    "seed",
    "margin_px",
    "max_attempts",
}


_NOISE_KEYS = {"keypoint_px", "height_m", "depth_rel"}


def scene_spec_from_json(payload: dict) -> SceneSpec:
    """Build a SceneSpec from a JSON mapping; unknown keys are rejected."""
    unknown = set(payload) - _SPEC_KEYS
    if unknown:
        raise ValueError(f"unknown scene spec keys: {sorted(unknown)}")
    try:
        return _scene_spec_from_payload(payload)
    except TypeError as exc:
        raise ValueError(f"bad scene spec: {exc}") from None


def _scene_spec_from_payload(payload: dict) -> SceneSpec:
    kwargs = {}
    cam_payload = payload.get("camera")
    if cam_payload is not None:
        if not isinstance(cam_payload, dict):
            raise ValueError("camera must be an object with 'P' or f/cu/cv")
        if "P" in cam_payload:
            kwargs["camera"] = CameraModel(np.asarray(cam_payload["P"], dtype=float))
        else:
            kwargs["camera"] = CameraModel.from_intrinsics(
                cam_payload.get("f", 700.0),
                cam_payload.get("cu", 600.0),
                cam_payload.get("cv", 180.0),
            )
    if "ground_y" in payload:
        kwargs["ground"] = Plane3D.fixed_height(float(payload["ground_y"]))
    if "noise" in payload:
        noise_payload = payload["noise"]
        if not isinstance(noise_payload, dict):
            raise ValueError("noise must be an object")
        unknown = set(noise_payload) - _NOISE_KEYS
        if unknown:
            raise ValueError(f"unknown noise keys: {sorted(unknown)}")
        kwargs["noise"] = NoiseSpec(**noise_payload)
    for key in ("image_size", "depth_range", "height_range", "width_range",
                "length_range", "yaw_range"):
        if key in payload:
            value = payload[key]
            if not isinstance(value, (list, tuple)) or len(value) != 2:
                raise ValueError(f"{key} must be a 2-element list")
            kwargs[key] = tuple(value)
    for key in ("object_count", "seed", "max_attempts"):
        if key in payload:
            kwargs[key] = int(payload[key])
    if "margin_px" in payload:
        kwargs["margin_px"] = float(payload["margin_px"])
    return SceneSpec(**kwargs)


def _write_scene_files(scene, out: Path):
    _write_text(out / "labels.txt", write_labels(scene.labels, precision="full"))
    _write_text(out / "calib.txt", write_calib(scene.calib))
    _write_text(
        out / "truth.json",
        json.dumps(scene_truth_payload(scene), sort_keys=True, indent=2) + "\n",
    )


def _cmd_synth(args) -> int:
    if args.spec is not None:
        payload = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        if not isinstance(payload, dict):
            raise ValueError("scene spec JSON must be an object")
    else:
        payload = {}
    spec = scene_spec_from_json(payload)
    if args.seed is not None or "seed" not in payload:
        spec = replace(spec, seed=_resolve_seed(args.seed))
    scene = generate_scene(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_scene_files(scene, out)
    print(f"wrote scene with {len(scene.objects)} objects to {out}")
    return 0


def _cmd_demo(args) -> int:
    seed = _resolve_seed(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = default_fit_config()
    runs = []
    rows = []
    for offset in range(args.scenes):
        run = run_scene(
            replace(SceneSpec(), seed=seed + offset), args.stride, config
        )
        runs.append(run)
        rows.extend(scene_rows(run))
    result = ExperimentResult(rows=tuple(rows))
    table = result.mpe_table()

    first = runs[0]
    _write_scene_files(first.scene, out)
    save_grid(first.grid, out / "grid.dgrd")
    _write_text(out / "fit_loss.csv", history_to_csv(first.fit.history))
    _write_text(
        out / "preds.jsonl",
        detections_to_jsonl(inf.to_record() for inf in first.inferences),
    )
    _write_text(out / "comparison.csv", experiment_csv(result))
    _write_text(out / "mpe_table.json", json.dumps(table, sort_keys=True, indent=2) + "\n")
    text_table = mpe_table_text(table)
    _write_text(out / "mpe_table.txt", text_table)
    plots.save_mpe_bars(table, out / "mpe_bars.png")
    plots.save_error_scatter(result, out / "error_scatter.png")
    plots.save_loss_curve(first.fit.history, out / "fit_loss.png")
    plots.save_grid_heatmap(first.grid.values, args.stride, out / "grid_heatmap.png")

    sys.stdout.write(text_table)
    print(f"wrote demo outputs ({args.scenes} scenes, seed {seed}) to {out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpk",
        description=(
            "Ground-plane depth toolkit: bottom-surface sampling, depth-grid "
            "fitting, sub-cell depth inference, fusion, and metrics."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="grounded-sample CSVs for each labeled object")
    p.add_argument("--calib", required=True, help="KITTI calibration file")
    p.add_argument("--labels", required=True, help="KITTI label file")
    p.add_argument("--camera", default="P2", help="calibration matrix name")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("fit", help="fit a depth grid to sample CSVs")
    p.add_argument("--samples", required=True, help="sample CSV file or directory")
    p.add_argument("--height", type=int, required=True, help="grid rows")
    p.add_argument("--width", type=int, required=True, help="grid columns")
    p.add_argument("--stride", type=float, default=4.0, help="pixels per cell")
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--step", type=float, default=0.05, help="initial step (m)")
    p.add_argument("--init", default="mean", help="'mean', 'splat', or a number")
    p.add_argument("--smoothness", type=float, default=0.0)
    p.add_argument("--out", required=True, help="output .dgrd path")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("infer", help="depth estimates for labeled objects")
    p.add_argument("--grid", required=True, help=".dgrd depth grid")
    p.add_argument("--labels", required=True, help="KITTI label file")
    p.add_argument("--calib", required=True, help="KITTI calibration file")
    p.add_argument("--camera", default="P2")
    p.add_argument("--noise-kp", type=float, default=0.0, help="keypoint noise (px)")
    p.add_argument("--noise-height", type=float, default=0.0, help="height noise (m)")
    p.add_argument("--noise-depth", type=float, default=0.0,
                   help="relative direct-depth noise")
    p.add_argument("--grid-sigma", type=float, default=0.1,
                   help="assumed grid residual scale (m)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output .jsonl path")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="MPE and AP metrics for predictions")
    p.add_argument("--preds", required=True,
                   help="detections (.jsonl) or KITTI label file")
    p.add_argument("--gt", required=True, help="ground-truth KITTI label file")
    p.add_argument("--iou-3d", type=float, default=0.7, dest="iou_3d")
    p.add_argument("--iou-bev", type=float, default=0.7, dest="iou_bev")
    p.add_argument("--out", required=True, help="output report JSON path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--spec", default=None, help="scene spec JSON file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("demo", help="full pipeline on synthetic scenes")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--scenes", type=int, default=3, help="number of scenes")
    p.add_argument("--stride", type=float, default=4.0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_demo)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, RuntimeError, OSError) as exc:
        print(f"gpk: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
