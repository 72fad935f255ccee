"""Deterministic synthetic scenes: boxes resting on a ground plane, viewed by
a pinhole camera, with exact keypoint truth and seeded Gaussian observation
noise standing in for prediction error.

Scenes are fully reproducible from their spec (same seed, same bits) and
avoid both bird's-eye-view overlap and image-space overlap of the bottom
footprints, so every object's depth supervision is unambiguous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .camera_geometry import (
    CameraModel,
    ObjectBox3D,
    Plane3D,
    bottom_corners,
    box_corners,
    project_points,
)
from .evaluation import bev_iou
from .inference import KeypointSet2D, project_keypoints
from .kitti_io import CalibRecord, LabelRecord

DEFAULT_GROUND_Y = 1.65


def _default_camera() -> CameraModel:
    return CameraModel.from_intrinsics(700.0, 600.0, 180.0)


def _default_ground() -> Plane3D:
    return Plane3D.fixed_height(DEFAULT_GROUND_Y)


@dataclass(frozen=True)
class NoiseSpec:
    """Observation noise standard deviations (all Gaussian, all >= 0)."""

    keypoint_px: float = 0.5
    height_m: float = 0.05
    depth_rel: float = 0.05

    def __post_init__(self):
        if min(self.keypoint_px, self.height_m, self.depth_rel) < 0:
            raise ValueError("noise standard deviations must be >= 0")

    @classmethod
    def zero(cls) -> "NoiseSpec":
        return cls(keypoint_px=0.0, height_m=0.0, depth_rel=0.0)


@dataclass(frozen=True)
class SceneSpec:
    camera: CameraModel = field(default_factory=_default_camera)
    image_size: tuple[int, int] = (1200, 360)
    ground: Plane3D = field(default_factory=_default_ground)
    object_count: int = 4
    depth_range: tuple[float, float] = (12.0, 45.0)
    height_range: tuple[float, float] = (1.4, 1.8)
    width_range: tuple[float, float] = (1.5, 1.8)
    length_range: tuple[float, float] = (3.4, 4.6)
    yaw_range: tuple[float, float] = (-math.pi, math.pi)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0
    margin_px: float = 12.0
    max_attempts: int = 1000

    def __post_init__(self):
        if self.object_count < 1:
            raise ValueError("object_count must be >= 1")
        ranges = {
            "depth_range": self.depth_range,
            "height_range": self.height_range,
            "width_range": self.width_range,
            "length_range": self.length_range,
        }
        for name, (lo, hi) in ranges.items():
            if not (0 < lo <= hi):
                raise ValueError(f"{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")


@dataclass(frozen=True)
class SceneObject:
    """One placed box with exact truth and its noisy observations."""

    box: ObjectBox3D
    label: LabelRecord
    truth_keypoints: KeypointSet2D
    observed_keypoints: KeypointSet2D
    observed_height: float
    observed_direct_depth: float


@dataclass(frozen=True)
class Scene:
    spec: SceneSpec
    objects: tuple[SceneObject, ...]

    @property
    def camera(self) -> CameraModel:
        return self.spec.camera

    @property
    def labels(self) -> list[LabelRecord]:
        return [obj.label for obj in self.objects]

    @property
    def calib(self) -> CalibRecord:
        return CalibRecord(matrices={"P2": self.spec.camera.P.copy()})


def _wrap_angle(angle: float) -> float:
    return math.atan2(math.sin(angle), math.cos(angle))


def _ground_y(ground: Plane3D, x: float, z: float) -> float:
    nx, ny, nz = ground.normal
    if abs(ny) < 1e-9:
        raise ValueError("ground plane must not be vertical")
    return (ground.offset - nx * x - nz * z) / ny


def _label_for(box: ObjectBox3D, corners_uv: np.ndarray) -> LabelRecord:
    x, _, z = box.location
    alpha = _wrap_angle(box.yaw - math.atan2(x, z))
    u_min, v_min = corners_uv.min(axis=0)
    u_max, v_max = corners_uv.max(axis=0)
    return LabelRecord(
        cls_type="Car",
        truncated=0.0,
        occluded=0,
        alpha=alpha,
        bbox2d=(u_min, v_min, u_max, v_max),
        dims=box.dims,
        location=box.location,
        rotation_y=_wrap_angle(box.yaw),
    )


def _footprint_rect(cam: CameraModel, box: ObjectBox3D, pad: float):
    uv = project_points(cam, bottom_corners(box))[:, :2]
    lo = uv.min(axis=0) - pad
    hi = uv.max(axis=0) + pad
    return lo, hi


def _rects_overlap(a, b) -> bool:
    (alo, ahi), (blo, bhi) = a, b
    return bool(np.all(alo <= bhi) and np.all(blo <= ahi))


def _place_boxes(spec: SceneSpec, rng: np.random.Generator) -> list[ObjectBox3D]:
    cam = spec.camera
    width, height = spec.image_size
    margin = spec.margin_px
    boxes: list[ObjectBox3D] = []
    rects = []
    for index in range(spec.object_count):
        for _ in range(spec.max_attempts):
            z = rng.uniform(*spec.depth_range)
            u_center = rng.uniform(margin, width - 1 - margin)
            x = (u_center - cam.cu) * z / cam.f
            y = _ground_y(spec.ground, x, z)
            dims = (
                rng.uniform(*spec.height_range),
                rng.uniform(*spec.width_range),
                rng.uniform(*spec.length_range),
            )
            yaw = rng.uniform(*spec.yaw_range)
            box = ObjectBox3D((x, y, z), dims, yaw)
            uv = project_points(cam, box_corners(box))[:, :2]
            if not (
                np.all(uv[:, 0] >= margin)
                and np.all(uv[:, 0] <= width - 1 - margin)
                and np.all(uv[:, 1] >= margin)
                and np.all(uv[:, 1] <= height - 1 - margin)
            ):
                continue
            if any(bev_iou(box, other) > 0.0 for other in boxes):
                continue
            rect = _footprint_rect(cam, box, pad=2.0 * margin)
            if any(_rects_overlap(rect, other) for other in rects):
                continue
            boxes.append(box)
            rects.append(rect)
            break
        else:
            raise RuntimeError(
                f"placed only {index} of {spec.object_count} objects within "
                f"{spec.max_attempts} attempts each"
            )
    return boxes


def generate_scene(spec: SceneSpec) -> Scene:
    """Build a scene: place boxes, project truth, draw observation noise."""
    rng = np.random.Generator(np.random.Philox(spec.seed))
    boxes = _place_boxes(spec, rng)
    cam = spec.camera
    objects = []
    for box in boxes:
        truth = project_keypoints(cam, box)
        kp_noise = rng.normal(0.0, 1.0, size=(11, 2)) * spec.noise.keypoint_px
        h_noise = rng.normal(0.0, 1.0) * spec.noise.height_m
        z_noise = rng.normal(0.0, 1.0) * spec.noise.depth_rel
        observed = KeypointSet2D(
            c2d=truth.c2d + kp_noise[0],
            k2d=truth.k2d + kp_noise[1:9],
            b2d=truth.b2d + kp_noise[9],
            t2d=truth.t2d + kp_noise[10],
        )
        corners_uv = project_points(cam, box_corners(box))[:, :2]
        objects.append(
            SceneObject(
                box=box,
                label=_label_for(box, corners_uv),
                truth_keypoints=truth,
                observed_keypoints=observed,
                observed_height=box.h + h_noise,
                observed_direct_depth=box.location[2] * (1.0 + z_noise),
            )
        )
    return Scene(spec=spec, objects=tuple(objects))


def scene_truth_payload(scene: Scene) -> dict:
    """JSON-ready exact truth plus observations, one entry per object."""
    entries = []
    for i, obj in enumerate(scene.objects):
        entries.append(
            {
                "object_id": i,
                "location": list(obj.box.location),
                "dims": list(obj.box.dims),
                "yaw": obj.box.yaw,
                "keypoints": {
                    name: list(map(float, pt))
                    for name, pt in obj.truth_keypoints.points().items()
                },
                "observed_keypoints": {
                    name: list(map(float, pt))
                    for name, pt in obj.observed_keypoints.points().items()
                },
                "observed_height": obj.observed_height,
                "observed_direct_depth": obj.observed_direct_depth,
            }
        )
    return {
        "seed": scene.spec.seed,
        "image_size": list(scene.spec.image_size),
        "objects": entries,
    }
