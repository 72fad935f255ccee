"""Dense depth field on a uniform grid: bilinear reads, L1 align loss with
analytic gradient, a deterministic gradient-descent fitter, and a bit-exact
binary file format.

The grid lives at an integer stride S: grid cell (row, col) sits at pixel
(col*S, row*S). Interpolation weights follow the convention that the "ceil"
of an integer coordinate is floor+1, so reads at exact nodes return the node
value (the fractional weight pair is (0, 1), never (0, 0)).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .ground_sampler import GroundSampleSet
from .kitti_io import FormatError

GRID_MAGIC = b"DGRD"
GRID_HEADER = struct.Struct("<4sIIf")


@dataclass(frozen=True)
class DepthGrid:
    """H x W depth values (meters) at a fixed pixel stride."""

    values: np.ndarray
    stride: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 2 or values.shape[1] < 2:
            raise ValueError(f"grid must be at least 2x2, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must be finite")
        if not (math.isfinite(self.stride) and self.stride > 0):
            raise ValueError(f"stride must be positive, got {self.stride}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "stride", float(self.stride))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def grid_shape_for_image(width_px: int, height_px: int, stride: float) -> tuple[int, int]:
    """Smallest (H, W) whose grid spans every pixel of the image."""
    w = math.ceil((width_px - 1) / stride) + 1
    h = math.ceil((height_px - 1) / stride) + 1
    return max(h, 2), max(w, 2)


def _bilinear_terms(shape, uv):
    """Flat cell indices (N,4) and weights (N,4) for in-bounds grid points.

    Column order matches the clockwise-from-upper-left node ordering:
    (r0,c0), (r0,c1), (r1,c1), (r1,c0).
    """
    h, w = shape
    u = uv[:, 0]
    v = uv[:, 1]
    c0 = np.floor(u).astype(np.int64)
    r0 = np.floor(v).astype(np.int64)
    lam1 = u - c0
    lam2 = (c0 + 1.0) - u
    lam3 = v - r0
    lam4 = (r0 + 1.0) - v
    # On the last row/column the fractional weight is zero, so the phantom
    # neighbor is aliased to the base cell to keep indices in range.
    c1 = np.minimum(c0 + 1, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    idx = np.stack([r0 * w + c0, r0 * w + c1, r1 * w + c1, r1 * w + c0], axis=1)
    weights = np.stack([lam2 * lam4, lam1 * lam4, lam1 * lam3, lam2 * lam3], axis=1)
    return idx, weights


def _check_bounds(shape, uv, label: str):
    h, w = shape
    bad = ~(
        (uv[:, 0] >= 0.0)
        & (uv[:, 0] <= w - 1.0)
        & (uv[:, 1] >= 0.0)
        & (uv[:, 1] <= h - 1.0)
    )
    if np.any(bad):
        indices = np.flatnonzero(bad)
        shown = ", ".join(str(i) for i in indices[:10])
        more = "" if indices.size <= 10 else f" (+{indices.size - 10} more)"
        raise ValueError(
            f"{label} outside grid {h}x{w} at indices [{shown}]{more}"
        )


def interpolate(grid: DepthGrid, point) -> float:
    """Bilinear read at (u_g, v_g) in grid units; errors when out of bounds."""
    uv = np.asarray(point, dtype=float).reshape(1, 2)
    _check_bounds(grid.shape, uv, f"point {tuple(uv[0])}")
    idx, weights = _bilinear_terms(grid.shape, uv)
    return float(np.dot(weights[0], grid.values.ravel()[idx[0]]))


def interpolate_many(grid: DepthGrid, points) -> np.ndarray:
    """Vectorized bilinear reads for an (N,2) array of grid-unit points."""
    uv = np.asarray(points, dtype=float).reshape(-1, 2)
    _check_bounds(grid.shape, uv, "points")
    idx, weights = _bilinear_terms(grid.shape, uv)
    return np.sum(weights * grid.values.ravel()[idx], axis=1)


@dataclass(frozen=True)
class AlignLossReport:
    """Mean L1 depth-align loss and its gradient w.r.t. every grid value."""

    loss: float
    grad: np.ndarray


def _sample_terms(grid_shape, stride, samples: GroundSampleSet):
    uv = samples.uv / stride
    _check_bounds(grid_shape, uv, "samples")
    idx, weights = _bilinear_terms(grid_shape, uv)
    return idx, weights, samples.z


def _loss_value(values_flat, idx, weights, z):
    pred = np.sum(weights * values_flat[idx], axis=1)
    return float(np.mean(np.abs(pred - z)))


def _loss_and_grad(values_flat, idx, weights, z, ncells):
    pred = np.sum(weights * values_flat[idx], axis=1)
    residual = pred - z
    loss = float(np.mean(np.abs(residual)))
    scale = np.sign(residual) / residual.size
    grad = np.bincount(
        idx.ravel(), weights=(weights * scale[:, None]).ravel(), minlength=ncells
    )
    return loss, grad


def depth_align_loss(grid: DepthGrid, samples: GroundSampleSet) -> AlignLossReport:
    """Mean |interpolated - observed| depth over the samples, with gradient.

    Each sample scatters sign(pred - z)/N times its four bilinear weights
    into the surrounding cells; exact hits contribute subgradient zero.
    """
    idx, weights, z = _sample_terms(grid.shape, grid.stride, samples)
    loss, grad = _loss_and_grad(grid.values.ravel(), idx, weights, z, grid.values.size)
    return AlignLossReport(loss=loss, grad=grad.reshape(grid.shape))


@dataclass(frozen=True)
class FitConfig:
    """Deterministic fitter settings.

    init is "mean" (constant grid at the mean sample depth), "splat" (each
    cell starts at the weight-averaged depth of the samples touching it,
    mean elsewhere), or a number; smoothness > 0 adds a quadratic neighbor
    penalty to the objective. The step direction is the negative gradient
    sign, and the step size halves whenever a step would increase the
    objective, which makes the recorded loss history non-increasing by
    construction.
    """

    iterations: int = 2000
    step_size: float = 0.05
    init: str | float = "mean"
    smoothness: float = 0.0
    min_step: float = 1e-12


@dataclass(frozen=True)
class FitResult:
    grid: DepthGrid
    history: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.history[-1]


def _splat_init(idx, weights, z, shape):
    """Weight-averaged sample depth per cell; unsupervised cells copy their
    nearest supervised cell so local reads never blend in far-away values."""
    from scipy import ndimage

    h, w = shape
    w_sum = np.bincount(idx.ravel(), weights=weights.ravel(), minlength=h * w)
    wz_sum = np.bincount(
        idx.ravel(), weights=(weights * z[:, None]).ravel(), minlength=h * w
    )
    touched = (w_sum > 1e-12).reshape(h, w)
    values = np.where(
        touched.ravel(), wz_sum / np.maximum(w_sum, 1e-300), 0.0
    ).reshape(h, w)
    if not np.all(touched):
        _, (rows, cols) = ndimage.distance_transform_edt(
            ~touched, return_indices=True
        )
        values = values[rows, cols]
    return values


def _smooth_penalty_and_grad(values):
    dx = values[:, :-1] - values[:, 1:]
    dy = values[:-1, :] - values[1:, :]
    penalty = float(np.sum(dx * dx) + np.sum(dy * dy))
    grad = np.zeros_like(values)
    grad[:, :-1] += 2.0 * dx
    grad[:, 1:] -= 2.0 * dx
    grad[:-1, :] += 2.0 * dy
    grad[1:, :] -= 2.0 * dy
    return penalty, grad


def fit_grid(samples, shape, config: FitConfig = FitConfig()) -> FitResult:
    """Fit a depth grid to sample sets by sign gradient descent.

    samples: a GroundSampleSet or a sequence of them; shape: (H, W, stride).
    The returned history holds the objective before iteration 1 and after
    each accepted step.
    """
    if isinstance(samples, GroundSampleSet):
        samples = [samples]
    samples = list(samples)
    if not samples:
        raise ValueError("fit_grid needs at least one sample set")
    h, w, stride = shape
    merged = GroundSampleSet(
        samples=np.concatenate([s.samples for s in samples], axis=0)
    )
    idx, weights, z = _sample_terms((h, w), stride, merged)

    if config.init == "mean":
        values = np.full((h, w), float(np.mean(z)))
    elif config.init == "splat":
        values = _splat_init(idx, weights, z, (h, w))
    else:
        values = np.full((h, w), float(config.init))

    def objective(vals):
        loss = _loss_value(vals.ravel(), idx, weights, z)
        if config.smoothness > 0.0:
            penalty, _ = _smooth_penalty_and_grad(vals)
            loss += config.smoothness * penalty
        return loss

    step = float(config.step_size)
    current = objective(values)
    history = [current]
    for iteration in range(config.iterations):
        if not math.isfinite(current):
            raise RuntimeError(f"non-finite objective at iteration {iteration}")
        _, grad_flat = _loss_and_grad(values.ravel(), idx, weights, z, h * w)
        grad = grad_flat.reshape(h, w)
        if config.smoothness > 0.0:
            _, smooth_grad = _smooth_penalty_and_grad(values)
            grad = grad + config.smoothness * smooth_grad
        direction = -np.sign(grad)
        accepted = False
        while step >= config.min_step:
            candidate = values + step * direction
            cand_loss = objective(candidate)
            if cand_loss <= current:
                values = candidate
                current = cand_loss
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        history.append(current)
    return FitResult(grid=DepthGrid(values=values, stride=stride), history=history)


def history_to_csv(history) -> str:
    lines = ["iter,loss"]
    for i, loss in enumerate(history):
        lines.append(f"{i},{loss!r}")
    return "\n".join(lines) + "\n"


def write_grid(grid: DepthGrid) -> bytes:
    """Serialize: magic, little-endian u32 H and W, f32 stride, f32 values."""
    h, w = grid.shape
    header = GRID_HEADER.pack(GRID_MAGIC, h, w, grid.stride)
    body = grid.values.astype("<f4").tobytes(order="C")
    return header + body


def read_grid(data: bytes) -> DepthGrid:
    """Inverse of write_grid; rejects bad magic and wrong-length streams."""
    if len(data) < GRID_HEADER.size:
        raise FormatError(
            f"grid stream too short: {len(data)} < {GRID_HEADER.size} header bytes"
        )
    magic, h, w, stride = GRID_HEADER.unpack_from(data, 0)
    if magic != GRID_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {GRID_MAGIC!r}")
    expected = GRID_HEADER.size + 4 * h * w
    if len(data) != expected:
        raise FormatError(
            f"grid stream length {len(data)} != expected {expected} for {h}x{w}"
        )
    if h < 2 or w < 2:
        raise FormatError(f"grid must be at least 2x2, got {h}x{w}")
    raw = np.frombuffer(data, dtype="<f4", offset=GRID_HEADER.size)
    if not np.all(np.isfinite(raw)):
        raise FormatError("grid stream contains non-finite values")
    if not (math.isfinite(stride) and stride > 0):
        raise FormatError(f"grid stride must be positive, got {stride}")
    return DepthGrid(values=raw.reshape(h, w).astype(float), stride=float(stride))


def load_grid(path) -> DepthGrid:
    with open(path, "rb") as fh:
        return read_grid(fh.read())


def save_grid(grid: DepthGrid, path):
    with open(path, "wb") as fh:
        fh.write(write_grid(grid))
