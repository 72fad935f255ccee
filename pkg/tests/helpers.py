"""Shared test utilities: random geometry, oracles with no production-code overlap."""

import numpy as np

from groundplanekit import CameraModel, ObjectBox3D, depth_align_loss

DEFAULT_CAMERA = CameraModel.from_intrinsics(700.0, 600.0, 180.0)


def random_box(rng, *, depth=(6.0, 80.0), ground_y=(0.5, 3.0)):
    """Draw a box safely in front of the camera with positive corner depths."""
    return ObjectBox3D(
        location=(
            rng.uniform(-20.0, 20.0),
            rng.uniform(*ground_y),
            rng.uniform(*depth),
        ),
        dims=(rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0), rng.uniform(0.8, 6.0)),
        yaw=rng.uniform(-np.pi, np.pi),
    )


def random_boxes(seed, n, **kwargs):
    rng = np.random.default_rng(seed)
    return [random_box(rng, **kwargs) for _ in range(n)]


def points_in_convex_polygon(vertices, points):
    """Boolean membership for a CCW convex polygon, boundary counted inside."""
    verts = np.asarray(vertices, dtype=float)
    pts = np.asarray(points, dtype=float)
    inside = np.ones(len(pts), dtype=bool)
    for i in range(len(verts)):
        a = verts[i]
        b = verts[(i + 1) % len(verts)]
        cross = (b[0] - a[0]) * (pts[:, 1] - a[1]) - (b[1] - a[1]) * (pts[:, 0] - a[0])
        inside &= cross >= 0.0
    return inside


def monte_carlo_bev_iou(box_a, box_b, seed, n_points=1_000_000):
    """Estimate BEV IoU by stratified membership counting over a shared window."""
    from groundplanekit import bev_polygon

    poly_a = bev_polygon(box_a)
    poly_b = bev_polygon(box_b)
    both = np.vstack([poly_a, poly_b])
    lo = both.min(axis=0)
    hi = both.max(axis=0)

    side = int(round(np.sqrt(n_points)))
    rng = np.random.default_rng(seed)
    ii, jj = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    jitter = rng.uniform(0.0, 1.0, size=(side, side, 2))
    u = (ii + jitter[..., 0]).ravel() / side
    v = (jj + jitter[..., 1]).ravel() / side
    pts = lo + np.column_stack([u, v]) * (hi - lo)

    in_a = points_in_convex_polygon(poly_a, pts)
    in_b = points_in_convex_polygon(poly_b, pts)
    inter = np.count_nonzero(in_a & in_b)
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        return 0.0
    return inter / union


def finite_difference_grad(values, stride, samples, step=1e-5):
    """Central finite differences of the alignment loss over every grid node."""
    from groundplanekit import DepthGrid

    values = np.asarray(values, dtype=float)
    grad = np.zeros_like(values)
    for r in range(values.shape[0]):
        for c in range(values.shape[1]):
            bumped = values.copy()
            bumped[r, c] += step
            up = depth_align_loss(DepthGrid(values=bumped, stride=stride), samples).loss
            bumped[r, c] -= 2.0 * step
            down = depth_align_loss(DepthGrid(values=bumped, stride=stride), samples).loss
            grad[r, c] = (up - down) / (2.0 * step)
    return grad


def kink_cell_mask(values, stride, samples, threshold=1e-4):
    """Cells supported by a sample whose residual sits near the L1 kink."""
    from groundplanekit.depth_grid import DepthGrid, _bilinear_terms, interpolate_many

    values = np.asarray(values, dtype=float)
    grid = DepthGrid(values=values, stride=stride)
    mask = np.zeros(values.shape, dtype=bool)
    pred = interpolate_many(grid, samples.uv / stride)
    near = np.abs(pred - samples.z) < threshold
    if np.any(near):
        idx, _ = _bilinear_terms(values.shape, samples.uv[near] / stride)
        mask.ravel()[idx.ravel()] = True
    return mask
