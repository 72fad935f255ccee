"""Ground-plane depth toolkit for monocular 3D detection geometry.

Objects resting on the ground admit an exact depth recovery: every pixel of
a box's bottom face maps to a unique camera-ray/plane intersection. This
package samples those bottom faces densely, fits a strided depth grid to
the projected samples with an L1 align loss, reads the grid back at
offset-refined sub-cell locations, fuses the result with geometry and
direct depth estimates by inverse-uncertainty voting, and scores everything
with detection metrics. KITTI-format files, deterministic synthetic scenes,
and the `gpk` command line tie the pieces together.
"""

from .camera_geometry import (
    CameraModel,
    ObjectBox3D,
    Plane3D,
    bev_polygon,
    bottom_corners,
    bottom_plane,
    box_corners,
    polygon_area,
    project_points,
    ray_plane_depth,
    ray_plane_point,
    top_corners,
)
from .depth_grid import (
    AlignLossReport,
    DepthGrid,
    FitConfig,
    FitResult,
    depth_align_loss,
    fit_grid,
    grid_shape_for_image,
    interpolate,
    interpolate_many,
    load_grid,
    read_grid,
    save_grid,
    write_grid,
)
from .evaluation import ap_r40, bev_iou, iou_3d, mpe, pr_curve
from .ground_sampler import (
    GroundSampleSet,
    grounded_samples,
    parallelogram_coords,
    sample_count,
    sample_ground_points,
    unit_square_to_bottom,
)
from .inference import (
    DepthEstimate,
    DetectionRecord,
    KeypointSet2D,
    OffsetSet,
    anchor_cell,
    compute_offsets,
    fuse_depths,
    fused_estimate,
    geometry_depth,
    geometry_depth_triplet,
    offset_loss,
    one_stage_grounded_depth,
    project_keypoints,
    two_stage_grounded_depths,
)
from .kitti_io import (
    CalibRecord,
    FormatError,
    LabelRecord,
    load_calib,
    load_labels,
    parse_calib,
    parse_labels,
    valid_objects,
    write_calib,
    write_labels,
)
from .pipeline import (
    ExperimentResult,
    ObjectObservation,
    SceneRun,
    infer_object,
    run_experiment,
    run_scene,
)
from .synth_scene import NoiseSpec, Scene, SceneSpec, generate_scene

__version__ = "0.1.0"

__all__ = [
    "AlignLossReport",
    "CalibRecord",
    "CameraModel",
    "DepthEstimate",
    "DepthGrid",
    "DetectionRecord",
    "ExperimentResult",
    "FitConfig",
    "FitResult",
    "FormatError",
    "GroundSampleSet",
    "KeypointSet2D",
    "LabelRecord",
    "NoiseSpec",
    "ObjectBox3D",
    "ObjectObservation",
    "OffsetSet",
    "Plane3D",
    "Scene",
    "SceneRun",
    "SceneSpec",
    "anchor_cell",
    "ap_r40",
    "bev_iou",
    "bev_polygon",
    "bottom_corners",
    "bottom_plane",
    "box_corners",
    "compute_offsets",
    "depth_align_loss",
    "fit_grid",
    "fuse_depths",
    "fused_estimate",
    "generate_scene",
    "geometry_depth",
    "geometry_depth_triplet",
    "grid_shape_for_image",
    "grounded_samples",
    "infer_object",
    "interpolate",
    "interpolate_many",
    "iou_3d",
    "load_calib",
    "load_grid",
    "load_labels",
    "mpe",
    "offset_loss",
    "one_stage_grounded_depth",
    "parallelogram_coords",
    "parse_calib",
    "parse_labels",
    "polygon_area",
    "pr_curve",
    "project_keypoints",
    "project_points",
    "ray_plane_depth",
    "ray_plane_point",
    "read_grid",
    "run_experiment",
    "run_scene",
    "sample_count",
    "sample_ground_points",
    "save_grid",
    "top_corners",
    "two_stage_grounded_depths",
    "unit_square_to_bottom",
    "valid_objects",
    "write_calib",
    "write_grid",
    "write_labels",
]
