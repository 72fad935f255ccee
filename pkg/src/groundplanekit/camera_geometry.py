"""Pinhole camera geometry: projection, 3D box corners, ray-plane depth recovery.

Coordinate conventions follow KITTI: the camera frame has x right, y down,
z forward, and an object's location is the center of its bottom face, so the
box bottom lies in the plane y = location_y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Minimum projective depth for a point to count as "in front of the camera".
DEPTH_EPS = 1e-6
# |unit ray direction . plane normal| below this means no unique intersection.
RAY_PARALLEL_EPS = 1e-9


class CameraModel:
    """Projective camera with a 3x4 matrix P = [M | p4].

    P is normalized on construction so the rotation part of its bottom row has
    unit norm, which makes projection (including the depth channel) invariant
    under positive rescaling of P. A 3x3 intrinsic matrix is accepted and
    treated as [K | 0].
    """

    def __init__(self, P):
        P = np.array(P, dtype=float)
        if P.shape == (3, 3):
            P = np.hstack([P, np.zeros((3, 1))])
        if P.shape != (3, 4):
            raise ValueError(f"camera matrix must be 3x4 or 3x3, got {P.shape}")
        if not np.all(np.isfinite(P)):
            raise ValueError("camera matrix has non-finite entries")
        scale = float(np.linalg.norm(P[2, :3]))
        if scale <= 0.0:
            raise ValueError("camera matrix bottom row is degenerate")
        P = P / scale
        if P[2, 2] <= 0.0:
            raise ValueError("camera must look along +z (P[2,2] > 0)")
        if P[0, 0] <= 0.0:
            raise ValueError("focal length must be positive")
        self.P = P
        self._center = None

    @classmethod
    def from_intrinsics(cls, f: float, cu: float, cv: float) -> "CameraModel":
        """Zero-skew intrinsic camera [K | 0] with equal focal lengths."""
        K = np.array([[f, 0.0, cu, 0.0], [0.0, f, cv, 0.0], [0.0, 0.0, 1.0, 0.0]])
        return cls(K)

    @property
    def f(self) -> float:
        return float(self.P[0, 0])

    @property
    def cu(self) -> float:
        return float(self.P[0, 2])

    @property
    def cv(self) -> float:
        return float(self.P[1, 2])

    @property
    def M(self) -> np.ndarray:
        return self.P[:, :3]

    @property
    def p4(self) -> np.ndarray:
        return self.P[:, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates, -M^-1 p4."""
        if self._center is None:
            self._center = -np.linalg.solve(self.M, self.p4)
        return self._center

    def __repr__(self):
        return f"CameraModel(f={self.f:.6g}, cu={self.cu:.6g}, cv={self.cv:.6g})"


@dataclass(frozen=True)
class ObjectBox3D:
    """3D box: bottom-face center location, (h, w, l) dimensions, yaw about y."""

    location: tuple[float, float, float]
    dims: tuple[float, float, float]
    yaw: float

    def __post_init__(self):
        loc = tuple(float(v) for v in self.location)
        dims = tuple(float(v) for v in self.dims)
        object.__setattr__(self, "location", loc)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "yaw", float(self.yaw))
        if len(loc) != 3 or len(dims) != 3:
            raise ValueError("location and dims must each have 3 entries")
        if not all(math.isfinite(v) for v in (*loc, *dims, self.yaw)):
            raise ValueError("box has non-finite entries")
        if min(dims) <= 0.0:
            raise ValueError(f"dimensions must be positive, got {dims}")

    @property
    def h(self) -> float:
        return self.dims[0]

    @property
    def w(self) -> float:
        return self.dims[1]

    @property
    def l(self) -> float:
        return self.dims[2]


@dataclass(frozen=True)
class Plane3D:
    """Plane {p : normal . p == offset}; normal is normalized on construction."""

    normal: tuple[float, float, float]
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = float(np.linalg.norm(n))
        if not np.isfinite(norm) or norm <= 0.0:
            raise ValueError("plane normal must be a finite nonzero vector")
        object.__setattr__(self, "normal", tuple(n / norm))
        object.__setattr__(self, "offset", float(self.offset) / norm)

    @classmethod
    def fixed_height(cls, y0: float) -> "Plane3D":
        """Horizontal plane y = y0 (y is down, so positive y0 is below the camera)."""
        return cls((0.0, 1.0, 0.0), y0)


def bottom_plane(box: ObjectBox3D) -> Plane3D:
    """The plane containing the box's bottom face."""
    return Plane3D.fixed_height(box.location[1])


def bottom_corners(box: ObjectBox3D) -> np.ndarray:
    """Bottom-face corners k1..k4 as a (4, 3) array.

    Local (length, width) offsets before the yaw rotation are
    (+l/2, +w/2), (-l/2, +w/2), (-l/2, -w/2), (+l/2, -w/2), so (k1, k3) and
    (k2, k4) are the diagonal pairs. k3 is computed as (k2 - k1) + k4, which
    makes the parallelogram identity hold bitwise.
    """
    x, y, z = box.location
    _, w, l = box.dims
    c = math.cos(box.yaw)
    s = math.sin(box.yaw)

    def corner(dx, dz):
        return np.array([x + dx * c + dz * s, y, z - dx * s + dz * c])

    k1 = corner(+l / 2, +w / 2)
    k2 = corner(-l / 2, +w / 2)
    k4 = corner(+l / 2, -w / 2)
    k3 = (k2 - k1) + k4
    return np.vstack([k1, k2, k3, k4])


def top_corners(box: ObjectBox3D) -> np.ndarray:
    """Top-face corners k5..k8, directly above k1..k4 (y is down)."""
    up = np.array([0.0, box.h, 0.0])
    return bottom_corners(box) - up


def box_corners(box: ObjectBox3D) -> np.ndarray:
    """All eight corners, bottom k1..k4 then top k5..k8, as an (8, 3) array."""
    return np.vstack([bottom_corners(box), top_corners(box)])


def project_points(cam: CameraModel, pts) -> np.ndarray:
    """Project (N, 3) camera-frame points to (N, 3) rows (u, v, z).

    z is the projective depth (the third homogeneous coordinate), returned
    undivided. Raises ValueError naming the first offending row if any point
    has depth <= DEPTH_EPS.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got shape {pts.shape}")
    X = pts @ cam.M.T + cam.p4
    z = X[:, 2]
    bad = np.flatnonzero(z <= DEPTH_EPS)
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"point {i} has non-positive projected depth {z[i]:.6g}")
    return np.column_stack([X[:, 0] / z, X[:, 1] / z, z])


def ray_plane_point(cam: CameraModel, pixel, plane: Plane3D) -> np.ndarray:
    """Intersect the back-projected ray through `pixel` with `plane`.

    Returns the 3D intersection point. Raises ValueError if the ray is
    parallel to the plane (no unique solution) or the intersection lies
    behind the camera.
    """
    u, v = float(pixel[0]), float(pixel[1])
    d = np.linalg.solve(cam.M, np.array([u, v, 1.0]))
    n = np.asarray(plane.normal)
    denom = float(n @ d)
    if abs(denom) / float(np.linalg.norm(d)) <= RAY_PARALLEL_EPS:
        raise ValueError(
            f"ray through pixel ({u:.6g}, {v:.6g}) is parallel to the plane: "
            "no unique solution"
        )
    # With d = M^-1 (u, v, 1), the ray parameter equals the projective depth.
    t = (plane.offset - float(n @ cam.center)) / denom
    if t <= DEPTH_EPS:
        raise ValueError(
            f"intersection for pixel ({u:.6g}, {v:.6g}) lies behind the camera"
        )
    return cam.center + t * d


def ray_plane_depth(cam: CameraModel, pixel, plane: Plane3D) -> float:
    """Depth (camera-frame z) of the ray-plane intersection for `pixel`."""
    return float(ray_plane_point(cam, pixel, plane)[2])


def bev_polygon(box: ObjectBox3D) -> np.ndarray:
    """Bottom corners projected to the (x, z) ground plane, counter-clockwise."""
    return bottom_corners(box)[:, [0, 2]]


def polygon_area(vertices, signed: bool = False) -> float:
    """Shoelace area of a simple polygon given as an (N, 2) vertex array."""
    p = np.asarray(vertices, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    a = 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))
    return a if signed else abs(a)
