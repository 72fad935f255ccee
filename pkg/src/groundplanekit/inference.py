"""Depth estimators and their fusion.

Three independent depth families are computed per object: a direct depth
(supplied by the caller), geometry depths from focal length and pixel
height, and grounded depths interpolated from a fitted depth grid at
offset-refined sub-cell locations. An inverse-sigma weighted vote fuses
them into a single value.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .camera_geometry import CameraModel, ObjectBox3D, bottom_corners, project_points, top_corners
from .depth_grid import DepthGrid, interpolate
from .kitti_io import FormatError

H2D_EPS = 1e-3

# Diagonal bottom-corner pairs: (k1, k3) and (k2, k4), zero-based indices.
DIAGONAL_PAIRS = ((0, 2), (1, 3))


@dataclass(frozen=True)
class KeypointSet2D:
    """Projected points of one box: center, eight vertices, bottom/top centers.

    k2d rows 0..3 are the bottom corners, rows 4..7 the top corners directly
    above them (same order).
    """

    c2d: np.ndarray
    k2d: np.ndarray
    b2d: np.ndarray
    t2d: np.ndarray

    def __post_init__(self):
        c2d = np.asarray(self.c2d, dtype=float).reshape(2)
        k2d = np.asarray(self.k2d, dtype=float)
        b2d = np.asarray(self.b2d, dtype=float).reshape(2)
        t2d = np.asarray(self.t2d, dtype=float).reshape(2)
        if k2d.shape != (8, 2):
            raise ValueError(f"k2d must be (8, 2), got {k2d.shape}")
        for arr in (c2d, k2d, b2d, t2d):
            if not np.all(np.isfinite(arr)):
                raise ValueError("keypoints must be finite")
        object.__setattr__(self, "c2d", c2d)
        object.__setattr__(self, "k2d", k2d)
        object.__setattr__(self, "b2d", b2d)
        object.__setattr__(self, "t2d", t2d)

    def points(self) -> dict[str, np.ndarray]:
        named = {"c": self.c2d}
        for i in range(8):
            named[f"k{i + 1}"] = self.k2d[i]
        named["b"] = self.b2d
        named["t"] = self.t2d
        return named


def project_keypoints(cam: CameraModel, box: ObjectBox3D) -> KeypointSet2D:
    """Exact image keypoints of a box: 3D center, 8 vertices, face centers."""
    x, y, z = box.location
    centers = np.array(
        [
            [x, y - box.h / 2.0, z],
            [x, y, z],
            [x, y - box.h, z],
        ]
    )
    corners = np.vstack([bottom_corners(box), top_corners(box)])
    uv_centers = project_points(cam, centers)[:, :2]
    uv_corners = project_points(cam, corners)[:, :2]
    return KeypointSet2D(
        c2d=uv_centers[0], k2d=uv_corners, b2d=uv_centers[1], t2d=uv_centers[2]
    )


@dataclass(frozen=True)
class OffsetSet:
    """Per-point offsets in grid units relative to the shared anchor cell."""

    c: np.ndarray
    k: np.ndarray
    b: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float).reshape(2))
        k = np.asarray(self.k, dtype=float)
        if k.shape != (8, 2):
            raise ValueError(f"k offsets must be (8, 2), got {k.shape}")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).reshape(2))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(2))

    def stacked(self) -> np.ndarray:
        """All 11 offsets as rows: c, k1..k8, b, t."""
        return np.vstack([self.c, self.k, self.b, self.t])


def anchor_cell(c2d, stride: float) -> tuple[int, int]:
    """Integer grid cell containing the projected center: floor(c2d / S)."""
    c2d = np.asarray(c2d, dtype=float)
    return int(math.floor(c2d[0] / stride)), int(math.floor(c2d[1] / stride))


def compute_offsets(kps: KeypointSet2D, stride: float) -> OffsetSet:
    """Offsets p/S - floor(c2d/S) for all 11 keypoints.

    anchor + offset reconstructs p/S exactly (the subtraction of the integer
    anchor from p/S is lossless in binary floating point).
    """
    if not (stride > 0):
        raise ValueError(f"stride must be positive, got {stride}")
    anchor = np.asarray(anchor_cell(kps.c2d, stride), dtype=float)
    delta = lambda p: p / stride - anchor
    return OffsetSet(
        c=delta(kps.c2d),
        k=np.vstack([delta(kps.k2d[i]) for i in range(8)]),
        b=delta(kps.b2d),
        t=delta(kps.t2d),
    )


def offset_loss(pred: OffsetSet, gt: OffsetSet) -> float:
    """Sum of absolute offset errors over all 11 points and both axes."""
    return float(np.sum(np.abs(pred.stacked() - gt.stacked())))


@dataclass(frozen=True)
class DepthEstimate:
    """A depth value with its uncertainty; lower sigma means higher weight."""

    z: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.z) and self.z > 0):
            raise ValueError(f"depth must be finite and positive, got {self.z}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be finite and positive, got {self.sigma}")


def geometry_depth(f: float, h: float, h2d: float) -> float:
    """Similar-triangles depth: z = f*h / h2d (focal px, height m, height px)."""
    if not (f > 0 and h > 0):
        raise ValueError(f"need positive focal and height, got f={f}, h={h}")
    if h2d <= H2D_EPS:
        raise ValueError(f"degenerate pixel height {h2d} (<= {H2D_EPS})")
    return f * h / h2d


def geometry_depth_triplet(kps: KeypointSet2D, f: float, h: float) -> tuple[float, float, float]:
    """Three geometry depths: center pair, then the two diagonal averages.

    The center estimate uses the bottom/top face centers; each diagonal
    estimate averages the per-vertex depths of one bottom-corner diagonal,
    where a vertex's pixel height is the v distance to the top corner
    straight above it.
    """
    center = geometry_depth(f, h, kps.b2d[1] - kps.t2d[1])
    diagonals = []
    for i, j in DIAGONAL_PAIRS:
        zi = geometry_depth(f, h, kps.k2d[i][1] - kps.k2d[i + 4][1])
        zj = geometry_depth(f, h, kps.k2d[j][1] - kps.k2d[j + 4][1])
        diagonals.append((zi + zj) / 2.0)
    return center, diagonals[0], diagonals[1]


def _refined_point(grid: DepthGrid, anchor, offset, name: str) -> float:
    point = np.asarray(anchor, dtype=float) + np.asarray(offset, dtype=float)
    h, w = grid.shape
    if not (0.0 <= point[0] <= w - 1.0 and 0.0 <= point[1] <= h - 1.0):
        raise ValueError(
            f"refined point {name} at {tuple(point)} outside grid {h}x{w}"
        )
    return interpolate(grid, point)


def two_stage_grounded_depths(
    grid: DepthGrid,
    anchor: tuple[int, int],
    offsets: OffsetSet,
    sigmas: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> tuple[DepthEstimate, DepthEstimate, DepthEstimate]:
    """Grounded depths at offset-refined sub-cell locations.

    Returns estimates at the bottom center and at the two bottom-corner
    diagonals (each the mean of its two interpolated corner depths).
    """
    z_b = _refined_point(grid, anchor, offsets.b, "b")
    corner_z = {}
    for i, j in DIAGONAL_PAIRS:
        for idx in (i, j):
            corner_z[idx] = _refined_point(
                grid, anchor, offsets.k[idx], f"k{idx + 1}"
            )
    diag1 = (corner_z[0] + corner_z[2]) / 2.0
    diag2 = (corner_z[1] + corner_z[3]) / 2.0
    return (
        DepthEstimate(z=z_b, sigma=sigmas[0]),
        DepthEstimate(z=diag1, sigma=sigmas[1]),
        DepthEstimate(z=diag2, sigma=sigmas[2]),
    )


def one_stage_grounded_depth(
    grid: DepthGrid, anchor: tuple[int, int], sigma: float = 1.0
) -> DepthEstimate:
    """Grid value at the integer anchor cell, no sub-cell refinement."""
    h, w = grid.shape
    col, row = int(anchor[0]), int(anchor[1])
    if not (0 <= col <= w - 1 and 0 <= row <= h - 1):
        raise ValueError(f"anchor {(col, row)} outside grid {h}x{w}")
    return DepthEstimate(z=float(grid.values[row, col]), sigma=sigma)


def fuse_depths(estimates) -> float:
    """Inverse-sigma weighted vote: (sum z_i/s_i) / (sum 1/s_i)."""
    estimates = list(estimates)
    if not estimates:
        raise ValueError("fuse_depths needs at least one estimate")
    for e in estimates:
        if not (e.sigma > 0):
            raise ValueError(f"non-positive sigma {e.sigma}")
    num = sum(e.z / e.sigma for e in estimates)
    den = sum(1.0 / e.sigma for e in estimates)
    return num / den


def fused_estimate(estimates) -> DepthEstimate:
    """Fused depth plus a combined sigma (harmonic mean of the inputs)."""
    estimates = list(estimates)
    z = fuse_depths(estimates)
    sigma = len(estimates) / sum(1.0 / e.sigma for e in estimates)
    return DepthEstimate(z=z, sigma=sigma)


@dataclass(frozen=True)
class DetectionRecord:
    """One object's depth inference summary for JSON-lines interchange."""

    object_id: int
    anchor: tuple[int, int]
    offsets: OffsetSet
    estimates: dict[str, DepthEstimate]
    fused: float
    gt_depth: float | None = None

    def to_json(self) -> str:
        payload = {
            "object_id": self.object_id,
            "anchor": [int(self.anchor[0]), int(self.anchor[1])],
            "offsets": {
                "c": list(self.offsets.c),
                "k": [list(row) for row in self.offsets.k],
                "b": list(self.offsets.b),
                "t": list(self.offsets.t),
            },
            "estimates": {
                name: {"z": e.z, "sigma": e.sigma}
                for name, e in self.estimates.items()
            },
            "fused": self.fused,
        }
        if self.gt_depth is not None:
            payload["gt_depth"] = self.gt_depth
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "DetectionRecord":
        payload = json.loads(line)
        offsets = OffsetSet(
            c=payload["offsets"]["c"],
            k=payload["offsets"]["k"],
            b=payload["offsets"]["b"],
            t=payload["offsets"]["t"],
        )
        estimates = {
            name: DepthEstimate(z=d["z"], sigma=d["sigma"])
            for name, d in payload["estimates"].items()
        }
        return cls(
            object_id=int(payload["object_id"]),
            anchor=(int(payload["anchor"][0]), int(payload["anchor"][1])),
            offsets=offsets,
            estimates=estimates,
            fused=float(payload["fused"]),
            gt_depth=payload.get("gt_depth"),
        )


def detections_to_jsonl(records) -> str:
    return "".join(r.to_json() + "\n" for r in records)


def detections_from_jsonl(text: str) -> list[DetectionRecord]:
    """Parse JSON-lines detections; malformed lines raise FormatError."""
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(DetectionRecord.from_json(line))
        except (ValueError, KeyError, TypeError, IndexError) as exc:
            raise FormatError(f"bad detection record: {exc}", lineno) from None
    return records
