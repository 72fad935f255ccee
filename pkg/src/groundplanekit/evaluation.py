"""Detection metrics: depth MPE, rotated-box IoU in bird's-eye view and 3D,
and average precision over 40 recall levels.

BEV intersection uses Sutherland-Hodgman clipping of the two (convex,
counter-clockwise) footprint polygons; 3D IoU multiplies the footprint
intersection by the vertical overlap of the bottom-anchored height spans.
"""

from __future__ import annotations

import numpy as np

from .camera_geometry import ObjectBox3D, bev_polygon, polygon_area

R40_LEVELS = np.arange(1, 41) / 40.0


def mpe(preds, gts) -> float:
    """Mean absolute percentage depth error: mean of |pred - gt| / |gt|."""
    preds = np.asarray(preds, dtype=float)
    gts = np.asarray(gts, dtype=float)
    if preds.shape != gts.shape or preds.ndim != 1 or preds.size < 1:
        raise ValueError(
            f"need equal-length nonempty vectors, got {preds.shape} vs {gts.shape}"
        )
    if np.any(gts == 0.0):
        raise ValueError("ground-truth depths must be nonzero")
    return float(np.mean(np.abs((preds - gts) / gts)))


def _edge_inside(a, b, p) -> bool:
    # Left-of-or-on test for the directed edge a->b of a CCW clip polygon.
    return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0


def _edge_intersection(a, b, p, q):
    d1 = (b[0] - a[0], b[1] - a[1])
    d2 = (q[0] - p[0], q[1] - p[1])
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    t = ((p[0] - a[0]) * d2[1] - (p[1] - a[1]) * d2[0]) / denom
    return (a[0] + t * d1[0], a[1] + t * d1[1])


def clip_convex_polygon(subject, clipper) -> list[tuple[float, float]]:
    """Sutherland-Hodgman clip of a convex subject by a convex CCW clipper."""
    output = [tuple(map(float, p)) for p in subject]
    clipper = [tuple(map(float, p)) for p in clipper]
    n = len(clipper)
    for i in range(n):
        a = clipper[i]
        b = clipper[(i + 1) % n]
        polygon = output
        output = []
        if not polygon:
            break
        for j, p in enumerate(polygon):
            q = polygon[(j + 1) % len(polygon)]
            p_in = _edge_inside(a, b, p)
            q_in = _edge_inside(a, b, q)
            if p_in:
                output.append(p)
                if not q_in:
                    output.append(_edge_intersection(a, b, p, q))
            elif q_in:
                output.append(_edge_intersection(a, b, p, q))
    return output


def intersection_area(poly_a, poly_b) -> float:
    clipped = clip_convex_polygon(poly_a, poly_b)
    if len(clipped) < 3:
        return 0.0
    return polygon_area(np.asarray(clipped))


def bev_iou(a: ObjectBox3D, b: ObjectBox3D) -> float:
    """Rotated-footprint IoU in the ground (x, z) plane."""
    poly_a = bev_polygon(a)
    poly_b = bev_polygon(b)
    inter = intersection_area(poly_a, poly_b)
    union = polygon_area(poly_a) + polygon_area(poly_b) - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def iou_3d(a: ObjectBox3D, b: ObjectBox3D) -> float:
    """Volume IoU; each box occupies the y-down span [y - h, y] vertically."""
    inter_area = intersection_area(bev_polygon(a), bev_polygon(b))
    if inter_area <= 0.0:
        return 0.0
    y_lo = max(a.location[1] - a.h, b.location[1] - b.h)
    y_hi = min(a.location[1], b.location[1])
    overlap = max(0.0, y_hi - y_lo)
    inter = inter_area * overlap
    vol_a = a.h * a.w * a.l
    vol_b = b.h * b.w * b.l
    union = vol_a + vol_b - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def _match_frame(detections, gts, iou_fn, threshold):
    """TP/FP flags for one frame's detections, greedily in score order."""
    order = sorted(
        range(len(detections)), key=lambda i: -float(detections[i][1])
    )
    matched = [False] * len(gts)
    flags = [False] * len(detections)
    for i in order:
        box = detections[i][0]
        best_iou = 0.0
        best_j = -1
        for j, gt in enumerate(gts):
            if matched[j]:
                continue
            value = iou_fn(box, gt)
            if value > best_iou:
                best_iou = value
                best_j = j
        if best_j >= 0 and best_iou >= threshold:
            matched[best_j] = True
            flags[i] = True
    return flags


def pr_curve(detections, gts, iou_fn=iou_3d, threshold: float = 0.7):
    """Pooled precision/recall points over per-frame greedy matching.

    detections: per frame, a list of (ObjectBox3D, score); gts: per frame,
    a list of ObjectBox3D. Frames correspond by index. Returns (recall,
    precision) arrays ordered by descending score.
    """
    if len(detections) != len(gts):
        raise ValueError(
            f"frame count mismatch: {len(detections)} vs {len(gts)}"
        )
    n_gt = sum(len(frame) for frame in gts)
    pooled = []
    for frame_idx, (dets, frame_gts) in enumerate(zip(detections, gts)):
        flags = _match_frame(dets, frame_gts, iou_fn, threshold)
        for det_idx, ((_, score), is_tp) in enumerate(zip(dets, flags)):
            if not np.isfinite(score):
                raise ValueError(f"non-finite score in frame {frame_idx}")
            pooled.append((-float(score), frame_idx, det_idx, is_tp))
    pooled.sort()
    if not pooled or n_gt == 0:
        return np.zeros(0), np.zeros(0)
    tp_cum = np.cumsum([1.0 if is_tp else 0.0 for *_, is_tp in pooled])
    ranks = np.arange(1, len(pooled) + 1)
    return tp_cum / n_gt, tp_cum / ranks


def ap_r40(detections, gts, iou_fn=iou_3d, threshold: float = 0.7) -> float:
    """Average precision over recall levels 1/40 .. 40/40.

    Interpolated precision at level r is the maximum precision among
    operating points with recall >= r, or 0 when r is unreachable.
    """
    if not (0.0 < threshold < 1.0):
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    recall, precision = pr_curve(detections, gts, iou_fn, threshold)
    if recall.size == 0:
        return 0.0
    total = 0.0
    for level in R40_LEVELS:
        reachable = recall >= level
        if np.any(reachable):
            total += float(np.max(precision[reachable]))
    return total / R40_LEVELS.size


def metric_report(preds_z, gts_z, detections, gts_boxes,
                  iou_3d_threshold: float = 0.7,
                  iou_bev_threshold: float = 0.7) -> dict:
    """Bundle the three headline metrics into one JSON-ready mapping."""
    return {
        "mpe": mpe(preds_z, gts_z),
        "ap_3d": ap_r40(detections, gts_boxes, iou_3d, iou_3d_threshold),
        "ap_bev": ap_r40(detections, gts_boxes, bev_iou, iou_bev_threshold),
    }
