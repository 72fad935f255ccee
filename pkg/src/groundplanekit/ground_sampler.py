"""Dense random sampling of box bottom surfaces and projection to depth samples.

Points are drawn uniformly over the bottom parallelogram spanned by corners
(k1, k2, k4) and projected through the camera, giving per-pixel depth
observations that are exact by construction (each depth is the z of a point
known to lie on the object's support plane).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .camera_geometry import (
    CameraModel,
    ObjectBox3D,
    bottom_corners,
    polygon_area,
    project_points,
)

SAMPLE_COUNT_MIN = 8
SAMPLE_COUNT_MAX = 5500


def _rng(seed: int) -> np.random.Generator:
    # Philox is counter-based: identical streams on every platform.
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class GroundSampleSet:
    """Projected bottom-surface samples: rows (u, v, z) plus provenance."""

    samples: np.ndarray
    source_box: ObjectBox3D | None = None
    seed: int | None = None

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 2 or samples.shape[1] != 3 or samples.shape[0] < 1:
            raise ValueError(f"samples must be (N>=1, 3), got {samples.shape}")
        object.__setattr__(self, "samples", samples)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def uv(self) -> np.ndarray:
        return self.samples[:, :2]

    @property
    def z(self) -> np.ndarray:
        return self.samples[:, 2]


def sample_count(cam: CameraModel, box: ObjectBox3D) -> int:
    """Number of samples for a box: its projected bottom-face area in px^2.

    The shoelace area of the four projected bottom corners is rounded
    half-up and clamped to [SAMPLE_COUNT_MIN, SAMPLE_COUNT_MAX].
    """
    uvz = project_points(cam, bottom_corners(box))
    area = polygon_area(uvz[:, :2])
    n = int(math.floor(area + 0.5))
    return min(max(n, SAMPLE_COUNT_MIN), SAMPLE_COUNT_MAX)


def unit_square_to_bottom(box: ObjectBox3D, R) -> np.ndarray:
    """Map [0,1]^2 coefficients R (N,2) onto the bottom parallelogram.

    Evaluated as (1-r0-r1)*k1 + r0*k2 + r1*k4, which sends the rows
    [0,0], [1,0], [0,1], [1,1] to k1, k2, k4, k3 exactly (the [1,1] case
    reduces to the same float expression (k2 - k1) + k4 that defines k3).
    The y column is overwritten with the common corner height so planarity
    is exact rather than within round-off.
    """
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[1] != 2:
        raise ValueError(f"R must be (N, 2), got {R.shape}")
    k = bottom_corners(box)
    k1, k2, k4 = k[0], k[1], k[3]
    r0 = R[:, 0:1]
    r1 = R[:, 1:2]
    pts = ((1.0 - r0 - r1) * k1 + r0 * k2) + r1 * k4
    pts[:, 1] = k1[1]
    return pts


def sample_ground_points(box: ObjectBox3D, n: int, seed: int) -> np.ndarray:
    """Draw n i.i.d. uniform points on the bottom parallelogram (N,3)."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    R = _rng(seed).random((n, 2))
    return unit_square_to_bottom(box, R)


def grounded_samples(cam: CameraModel, box: ObjectBox3D, seed: int) -> GroundSampleSet:
    """Sample the bottom face and project: rows (u_i, v_i, z_i)."""
    n = sample_count(cam, box)
    pts = sample_ground_points(box, n, seed)
    uvz = project_points(cam, pts)
    return GroundSampleSet(samples=uvz, source_box=box, seed=seed)


def parallelogram_coords(box: ObjectBox3D, points) -> np.ndarray:
    """Invert the bottom-surface map: (N,3) plane points -> (N,2) coefficients.

    Solves the 2x2 linear system in the (x, z) plane; the box must have a
    non-degenerate footprint (guaranteed by w, l > 0).
    """
    points = np.asarray(points, dtype=float)
    k = bottom_corners(box)
    e1 = k[1] - k[0]
    e2 = k[3] - k[0]
    A = np.array([[e1[0], e2[0]], [e1[2], e2[2]]])
    rhs = np.column_stack([points[:, 0] - k[0][0], points[:, 2] - k[0][2]])
    return np.linalg.solve(A, rhs.T).T


def samples_to_csv(sample_set: GroundSampleSet) -> str:
    """Serialize one sample set as "u,v,z" CSV at full decimal precision."""
    lines = ["u,v,z"]
    for u, v, z in sample_set.samples:
        lines.append(f"{float(u)!r},{float(v)!r},{float(z)!r}")
    return "\n".join(lines) + "\n"


def sample_sets_to_csv(sample_sets) -> str:
    """Concatenate sample sets as "object_id,u,v,z" CSV."""
    lines = ["object_id,u,v,z"]
    for obj_id, sample_set in enumerate(sample_sets):
        for u, v, z in sample_set.samples:
            lines.append(f"{obj_id},{float(u)!r},{float(v)!r},{float(z)!r}")
    return "\n".join(lines) + "\n"


def samples_from_csv(text: str) -> list[GroundSampleSet]:
    """Parse either CSV layout back into sample sets (ordered by object_id)."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty sample CSV")
    header = lines[0].split(",")
    if header == ["u", "v", "z"]:
        rows = np.array([[float(t) for t in ln.split(",")] for ln in lines[1:]])
        return [GroundSampleSet(samples=rows)]
    if header == ["object_id", "u", "v", "z"]:
        groups: dict[int, list[list[float]]] = {}
        for ln in lines[1:]:
            tokens = ln.split(",")
            groups.setdefault(int(tokens[0]), []).append(
                [float(t) for t in tokens[1:4]]
            )
        return [
            GroundSampleSet(samples=np.array(groups[key]))
            for key in sorted(groups)
        ]
    raise ValueError(f"unrecognized sample CSV header {lines[0]!r}")
