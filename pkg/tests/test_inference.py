"""Keypoint offsets, depth channels, and fusion tests."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from groundplanekit import (
    DepthEstimate,
    DepthGrid,
    DetectionRecord,
    KeypointSet2D,
    ObjectBox3D,
    OffsetSet,
    anchor_cell,
    box_corners,
    compute_offsets,
    fuse_depths,
    fused_estimate,
    geometry_depth,
    geometry_depth_triplet,
    offset_loss,
    one_stage_grounded_depth,
    project_keypoints,
    project_points,
    two_stage_grounded_depths,
)
from groundplanekit.inference import detections_from_jsonl, detections_to_jsonl
from groundplanekit.kitti_io import FormatError
from helpers import DEFAULT_CAMERA, random_box


def keypoints_for(box):
    return project_keypoints(DEFAULT_CAMERA, box)


def linear_grid(h=24, w=32, stride=4.0, base=6.0, du=0.25, dv=-0.05):
    vv, uu = np.mgrid[0:h, 0:w].astype(float)
    values = base + du * uu + dv * vv
    field = lambda u, v: base + du * u + dv * v
    return DepthGrid(values=values, stride=stride), field


def test_project_keypoints_structure():
    box = random_box(np.random.default_rng(0))
    kps = keypoints_for(box)
    corners2d = project_points(DEFAULT_CAMERA, box_corners(box))[:, :2]
    np.testing.assert_array_equal(kps.k2d, corners2d)
    x, y, z = box.location
    centers = project_points(
        DEFAULT_CAMERA, [[x, y - box.h / 2, z], [x, y, z], [x, y - box.h, z]]
    )
    np.testing.assert_array_equal(kps.c2d, centers[0, :2])
    np.testing.assert_array_equal(kps.b2d, centers[1, :2])
    np.testing.assert_array_equal(kps.t2d, centers[2, :2])
    assert kps.b2d[1] > kps.t2d[1]
    names = list(kps.points())
    assert names == ["c", "k1", "k2", "k3", "k4", "k5", "k6", "k7", "k8", "b", "t"]


def test_anchor_cell_floor():
    assert anchor_cell((100.7, 50.2), 4.0) == (25, 12)
    assert anchor_cell((100.0, 48.0), 4.0) == (25, 12)
    assert anchor_cell((3.9, 0.1), 4.0) == (0, 0)


def test_compute_offsets_hand_case():
    kps = KeypointSet2D(
        c2d=(100.7, 50.2),
        k2d=np.tile([100.0, 50.0], (8, 1)),
        b2d=(102.3, 60.6),
        t2d=(100.0, 40.0),
    )
    offsets = compute_offsets(kps, 4.0)
    np.testing.assert_allclose(offsets.c, [0.175, 0.55], atol=1e-12)
    np.testing.assert_allclose(offsets.b, [0.575, 3.15], atol=1e-12)


def test_compute_offsets_exact_multiple_is_zero():
    kps = KeypointSet2D(
        c2d=(100.0, 48.0),
        k2d=np.tile([100.0, 48.0], (8, 1)),
        b2d=(100.0, 48.0),
        t2d=(100.0, 48.0),
    )
    offsets = compute_offsets(kps, 4.0)
    np.testing.assert_array_equal(offsets.stacked(), np.zeros((11, 2)))


@given(st.integers(0, 2**32 - 1), st.sampled_from([2.0, 4.0, 8.0]))
@settings(max_examples=60)
def test_offsets_reconstruct_points(seed, stride):
    box = random_box(np.random.default_rng(seed))
    kps = keypoints_for(box)
    offsets = compute_offsets(kps, stride)
    anchor = np.asarray(anchor_cell(kps.c2d, stride), dtype=float)
    points = np.vstack([kps.c2d, kps.k2d, kps.b2d, kps.t2d]) / stride
    recon = anchor + offsets.stacked()
    np.testing.assert_array_equal(recon[0], points[0])
    np.testing.assert_allclose(recon, points, rtol=0, atol=1e-12)


def test_offset_loss_cases():
    zero = OffsetSet(c=(0, 0), k=np.zeros((8, 2)), b=(0, 0), t=(0, 0))
    assert offset_loss(zero, zero) == 0.0
    shifted = OffsetSet(c=(0.5, 0), k=np.zeros((8, 2)), b=(0, 0), t=(0, 0))
    assert offset_loss(shifted, zero) == 0.5
    all_off = OffsetSet(
        c=(0.1, 0.1), k=np.full((8, 2), 0.1), b=(0.1, 0.1), t=(0.1, 0.1)
    )
    np.testing.assert_allclose(offset_loss(all_off, zero), 2.2, atol=1e-12)


def test_offset_set_shape_validation():
    with pytest.raises(ValueError):
        OffsetSet(c=(0, 0), k=np.zeros((7, 2)), b=(0, 0), t=(0, 0))


def test_geometry_depth_cases():
    assert geometry_depth(700.0, 1.6, 80.0) == 14.0
    assert geometry_depth(700.0, 1.6, 160.0) == 7.0
    with pytest.raises(ValueError):
        geometry_depth(700.0, 1.6, 0.0)
    with pytest.raises(ValueError):
        geometry_depth(700.0, 1.6, -5.0)
    with pytest.raises(ValueError):
        geometry_depth(0.0, 1.6, 80.0)
    with pytest.raises(ValueError):
        geometry_depth(700.0, 0.0, 80.0)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=60)
def test_geometry_triplet_noiseless_identity(seed):
    box = random_box(np.random.default_rng(seed), depth=(8.0, 70.0))
    kps = keypoints_for(box)
    center, diag13, diag24 = geometry_depth_triplet(kps, DEFAULT_CAMERA.f, box.h)
    z = box.location[2]
    assert abs(center - z) <= 1e-6 * z
    assert abs(diag13 - z) <= 1e-6 * z
    assert abs(diag24 - z) <= 1e-6 * z


def test_two_stage_constant_grid():
    grid = DepthGrid(values=np.full((91, 301), 10.0), stride=4.0)
    box = ObjectBox3D((0.0, 1.65, 14.0), (1.5, 1.6, 4.0), 0.3)
    kps = keypoints_for(box)
    offsets = compute_offsets(kps, 4.0)
    anchor = anchor_cell(kps.c2d, 4.0)
    center, diag13, diag24 = two_stage_grounded_depths(grid, anchor, offsets)
    assert center.z == diag13.z == diag24.z == 10.0


def test_two_stage_linear_field_exact():
    grid, field = linear_grid()
    kps = KeypointSet2D(
        c2d=(60.2, 41.0),
        k2d=np.array(
            [
                [48.3, 52.1],
                [71.9, 50.7],
                [73.0, 55.2],
                [50.1, 56.4],
                [48.3, 30.1],
                [71.9, 28.7],
                [73.0, 33.2],
                [50.1, 34.4],
            ]
        ),
        b2d=(61.0, 54.3),
        t2d=(59.4, 29.8),
    )
    offsets = compute_offsets(kps, 4.0)
    anchor = anchor_cell(kps.c2d, 4.0)
    center, diag13, diag24 = two_stage_grounded_depths(grid, anchor, offsets)
    want_center = field(*(np.asarray(kps.b2d) / 4.0))
    k = kps.k2d / 4.0
    want_13 = (field(*k[0]) + field(*k[2])) / 2.0
    want_24 = (field(*k[1]) + field(*k[3])) / 2.0
    np.testing.assert_allclose(center.z, want_center, atol=1e-9)
    np.testing.assert_allclose(diag13.z, want_13, atol=1e-9)
    np.testing.assert_allclose(diag24.z, want_24, atol=1e-9)


def test_one_stage_reads_anchor_node():
    rng = np.random.default_rng(1)
    values = rng.uniform(5.0, 40.0, size=(6, 6))
    grid = DepthGrid(values=values, stride=4.0)
    est = one_stage_grounded_depth(grid, (0, 0))
    assert est.z == values[0, 0]
    est = one_stage_grounded_depth(grid, (4, 2))
    assert est.z == values[2, 4]


def test_one_stage_error_exceeds_two_stage_on_linear_field():
    grid, field = linear_grid()
    b2d = np.array([61.0, 54.3])
    kps = KeypointSet2D(
        c2d=(60.2, 41.0),
        k2d=np.tile([58.0, 47.0], (8, 1)),
        b2d=b2d,
        t2d=(59.4, 29.8),
    )
    offsets = compute_offsets(kps, 4.0)
    truth = field(*(b2d / 4.0))
    two = two_stage_grounded_depths(grid, anchor_cell(kps.c2d, 4.0), offsets)[0]
    one = one_stage_grounded_depth(grid, anchor_cell(b2d, 4.0))
    assert abs(two.z - truth) < 1e-9
    assert abs(one.z - truth) > abs(two.z - truth)


def test_grounded_depth_bounds_errors():
    grid = DepthGrid(values=np.full((3, 3), 8.0), stride=4.0)
    with pytest.raises(ValueError):
        one_stage_grounded_depth(grid, (5, 0))
    kps = KeypointSet2D(
        c2d=(4.0, 4.0),
        k2d=np.tile([400.0, 4.0], (8, 1)),
        b2d=(4.0, 4.0),
        t2d=(4.0, 2.0),
    )
    offsets = compute_offsets(kps, 4.0)
    with pytest.raises(ValueError, match="k1"):
        two_stage_grounded_depths(grid, anchor_cell(kps.c2d, 4.0), offsets)


def test_two_stage_attaches_sigmas():
    grid = DepthGrid(values=np.full((8, 8), 12.0), stride=4.0)
    kps = KeypointSet2D(
        c2d=(12.0, 12.0),
        k2d=np.tile([12.0, 12.0], (8, 1)),
        b2d=(12.0, 12.0),
        t2d=(12.0, 8.0),
    )
    offsets = compute_offsets(kps, 4.0)
    ests = two_stage_grounded_depths(
        grid, anchor_cell(kps.c2d, 4.0), offsets, sigmas=(0.5, 0.7, 0.9)
    )
    assert [e.sigma for e in ests] == [0.5, 0.7, 0.9]


def test_depth_estimate_validation():
    with pytest.raises(ValueError):
        DepthEstimate(z=0.0, sigma=1.0)
    with pytest.raises(ValueError):
        DepthEstimate(z=10.0, sigma=0.0)
    with pytest.raises(ValueError):
        DepthEstimate(z=float("nan"), sigma=1.0)


def test_fuse_hand_cases():
    pair = [DepthEstimate(10.0, 1.0), DepthEstimate(12.0, 1.0)]
    assert fuse_depths(pair) == 11.0
    skewed = [DepthEstimate(10.0, 1.0), DepthEstimate(20.0, 3.0)]
    np.testing.assert_allclose(fuse_depths(skewed), 12.5, atol=1e-12)


def test_fuse_requires_estimates():
    with pytest.raises(ValueError):
        fuse_depths([])


@given(
    st.lists(
        st.tuples(st.floats(1.0, 100.0), st.floats(1e-3, 10.0)),
        min_size=1,
        max_size=7,
    ),
    st.floats(1e-3, 1e3),
)
def test_fuse_sigma_scaling_invariance(pairs, lam):
    base = [DepthEstimate(z, s) for z, s in pairs]
    scaled = [DepthEstimate(z, lam * s) for z, s in pairs]
    np.testing.assert_allclose(
        fuse_depths(scaled), fuse_depths(base), rtol=1e-12
    )


@given(
    st.lists(
        st.tuples(st.floats(1.0, 100.0), st.floats(1e-3, 10.0)),
        min_size=1,
        max_size=7,
    )
)
def test_fuse_bounded_by_extremes(pairs):
    ests = [DepthEstimate(z, s) for z, s in pairs]
    fused = fuse_depths(ests)
    zs = [z for z, _ in pairs]
    assert min(zs) - 1e-9 <= fused <= max(zs) + 1e-9


def test_fused_estimate_harmonic_sigma():
    ests = [DepthEstimate(10.0, 1.0), DepthEstimate(20.0, 3.0)]
    fused = fused_estimate(ests)
    np.testing.assert_allclose(fused.z, 12.5, atol=1e-12)
    np.testing.assert_allclose(fused.sigma, 2.0 / (1.0 + 1.0 / 3.0), atol=1e-12)


def make_record(object_id=3, gt_depth=14.25):
    offsets = OffsetSet(
        c=(0.1, 0.2),
        k=np.arange(16, dtype=float).reshape(8, 2) / 16.0,
        b=(0.3, 0.4),
        t=(0.5, 0.6),
    )
    estimates = {
        "direct": DepthEstimate(14.0, 0.7),
        "gnd_center": DepthEstimate(14.5, 0.2),
    }
    return DetectionRecord(
        object_id=object_id,
        anchor=(25, 12),
        offsets=offsets,
        estimates=estimates,
        fused=14.3,
        gt_depth=gt_depth,
    )


def test_detection_record_json_roundtrip():
    record = make_record()
    back = DetectionRecord.from_json(record.to_json())
    assert back.object_id == record.object_id
    assert back.anchor == record.anchor
    np.testing.assert_array_equal(back.offsets.stacked(), record.offsets.stacked())
    assert back.estimates.keys() == record.estimates.keys()
    for name in record.estimates:
        assert back.estimates[name] == record.estimates[name]
    assert back.fused == record.fused
    assert back.gt_depth == record.gt_depth


def test_detections_jsonl_roundtrip_multi():
    records = [make_record(object_id=i, gt_depth=None) for i in range(3)]
    text = detections_to_jsonl(records)
    back = detections_from_jsonl(text)
    assert [r.object_id for r in back] == [0, 1, 2]
    assert all(r.gt_depth is None for r in back)


def test_detections_jsonl_bad_line_reports_position():
    good = make_record().to_json()
    text = good + "\n{broken\n"
    with pytest.raises(FormatError, match="line 2"):
        detections_from_jsonl(text)
    with pytest.raises(FormatError):
        detections_from_jsonl('{"object_id": 1}\n')
