"""Target keypoint sequence construction from a tracked reference sequence.

Global motion of a keypoint set is summarized by an ellipse pose (centroid
plus second-moment orientation). Per frame, the pose delta between the
reference start frame and the current frame rotates and shifts the target
start set; a polar refinement then transfers each point's residual radial
scale and angular shift about the set centroid. Deltas are anchored to
frame 0 rather than chained, so no drift accumulates and self-transfer is
an exact identity.

A normalized cross-correlation patch tracker is included so the pipeline
can run without an external tracker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericalError, ValidationError
from .tensorio import Tracks

RADIAL_EPS = 1e-6
MIN_TRACK_CORRELATION = 0.3


@dataclass(frozen=True)
class EllipsePose:
    """Centroid and orientation of a keypoint set; theta in (-pi/2, pi/2]."""

    center: np.ndarray
    theta: float


@dataclass(frozen=True)
class GlobalDelta:
    """Pose change between two keypoint sets; rotation is defined mod pi."""

    d_theta: float
    d_center: np.ndarray


def wrap_half_pi(angle: float) -> float:
    """Wrap an orientation difference into (-pi/2, pi/2] (mod pi)."""
    a = math.fmod(angle, math.pi)
    if a > math.pi / 2:
        a -= math.pi
    elif a <= -math.pi / 2:
        a += math.pi
    return a


def wrap_pi(angle: np.ndarray) -> np.ndarray:
    """Wrap angles into (-pi, pi]."""
    a = np.remainder(angle, 2.0 * math.pi)
    return np.where(a > math.pi, a - 2.0 * math.pi, a)


def fit_ellipse_pose(points: np.ndarray, visible: np.ndarray | None = None) -> EllipsePose:
    """Fit center and orientation from first and central second moments.

    Orientation is 0.5 * atan2(2*mu11, mu20 - mu02); the isotropic case
    (mu11 = 0, mu20 = mu02) lands on theta = 0 via the atan2(0, 0) = 0
    convention. Invisible points are excluded when a visibility row is
    given and at least 3 points remain.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if visible is not None:
        vis = np.asarray(visible, dtype=bool).reshape(-1)
        if vis.sum() >= 3:
            pts = pts[vis]
    if pts.shape[0] < 3:
        raise ValidationError(f"ellipse fit needs at least 3 points, got {pts.shape[0]}")
    center = pts.mean(axis=0)
    d = pts - center
    mu20 = float(np.mean(d[:, 0] ** 2))
    mu02 = float(np.mean(d[:, 1] ** 2))
    mu11 = float(np.mean(d[:, 0] * d[:, 1]))
    if mu20 == 0.0 and mu02 == 0.0:
        raise NumericalError("all points coincide; orientation is undefined")
    theta = wrap_half_pi(0.5 * math.atan2(2.0 * mu11, mu20 - mu02))
    return EllipsePose(center=center, theta=theta)


def global_delta(pose0: EllipsePose, pose1: EllipsePose) -> GlobalDelta:
    """Rotation and center shift between two poses (rotation wrapped mod pi)."""
    return GlobalDelta(
        d_theta=wrap_half_pi(pose1.theta - pose0.theta),
        d_center=pose1.center - pose0.center,
    )


def apply_global(points: np.ndarray, delta: GlobalDelta) -> np.ndarray:
    """Rotate a keypoint set about its own centroid, then translate."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    center = pts.mean(axis=0)
    c, s = math.cos(delta.d_theta), math.sin(delta.d_theta)
    rot = np.array([[c, -s], [s, c]])
    return (pts - center) @ rot.T + center + delta.d_center


def local_polar_refine(
    ref0: np.ndarray,
    ref_t: np.ndarray,
    moved: np.ndarray,
    delta: GlobalDelta,
    center_subset: np.ndarray | None = None,
) -> np.ndarray:
    """Transfer per-point radial scale and angular shift about the centroid.

    For point i, the scale is |ref_t[i] - O_t| / |ref0[i] - O_0| (1 when the
    denominator vanishes) and the angular shift is the polar-angle change
    minus the already-applied global rotation; both are applied to ``moved``
    about its centroid. ``center_subset`` optionally selects which points
    define the centroids (matching the pose fit's visibility subset).
    """
    ref0 = np.asarray(ref0, dtype=np.float64).reshape(-1, 2)
    ref_t = np.asarray(ref_t, dtype=np.float64).reshape(-1, 2)
    moved = np.asarray(moved, dtype=np.float64).reshape(-1, 2)
    if not ref0.shape == ref_t.shape == moved.shape:
        raise ValidationError("keypoint sets must share the same point count")
    sel = slice(None) if center_subset is None else np.asarray(center_subset, dtype=bool)
    o0 = ref0[sel].mean(axis=0)
    ot = ref_t[sel].mean(axis=0)
    oh = moved[sel].mean(axis=0)

    v0 = ref0 - o0
    vt = ref_t - ot
    r0 = np.hypot(v0[:, 0], v0[:, 1])
    rt = np.hypot(vt[:, 0], vt[:, 1])
    scale = np.where(r0 < RADIAL_EPS, 1.0, rt / np.where(r0 < RADIAL_EPS, 1.0, r0))
    dphi = wrap_pi(
        np.arctan2(vt[:, 1], vt[:, 0]) - np.arctan2(v0[:, 1], v0[:, 0]) - delta.d_theta
    )

    vh = moved - oh
    rh = np.hypot(vh[:, 0], vh[:, 1])
    ph = np.arctan2(vh[:, 1], vh[:, 0])
    out_r = scale * rh
    out_p = ph + dphi
    return oh + np.stack([out_r * np.cos(out_p), out_r * np.sin(out_p)], axis=1)


def build_target_sequence(ref_seq: Tracks, target0: np.ndarray) -> Tracks:
    """Build the full target keypoint sequence from the reference sequence.

    Frame 0 is the matched target set; frame t applies the frame-0-to-frame-t
    global pose delta to the target set, then the polar local refinement.
    Points invisible in the reference are excluded from the pose moments but
    still transformed; target visibility mirrors the reference's.
    """
    target0 = np.asarray(target0, dtype=np.float64).reshape(-1, 2)
    if target0.shape[0] != ref_seq.num_points:
        raise ValidationError(
            f"target set has {target0.shape[0]} points, reference sequence has "
            f"{ref_seq.num_points}"
        )
    num_frames = ref_seq.num_frames
    out = np.empty((num_frames, target0.shape[0], 2), dtype=np.float64)
    out[0] = target0
    ref0 = ref_seq.points[0]
    for t in range(1, num_frames):
        ref_t = ref_seq.points[t]
        usable = ref_seq.visible[0] & ref_seq.visible[t]
        subset = usable if usable.sum() >= 3 else np.ones_like(usable)
        pose0 = fit_ellipse_pose(ref0[subset])
        pose_t = fit_ellipse_pose(ref_t[subset])
        delta = global_delta(pose0, pose_t)
        moved = _apply_global_about(target0, delta, target0[subset].mean(axis=0))
        out[t] = local_polar_refine(ref0, ref_t, moved, delta, center_subset=subset)
    return Tracks(out, ref_seq.visible.copy())


def _apply_global_about(points: np.ndarray, delta: GlobalDelta, center: np.ndarray) -> np.ndarray:
    c, s = math.cos(delta.d_theta), math.sin(delta.d_theta)
    rot = np.array([[c, -s], [s, c]])
    return (points - center) @ rot.T + center + delta.d_center


def track_keypoints_ncc(
    frames: np.ndarray,
    keypoints: np.ndarray,
    patch: int = 11,
    search: int = 15,
    min_correlation: float = MIN_TRACK_CORRELATION,
) -> Tracks:
    """Frame-to-frame patch tracking by normalized cross-correlation.

    Each point's patch from frame t-1 is matched within +-search pixels in
    frame t; the best integer displacement is accumulated onto the
    (possibly sub-pixel) position. A point goes invisible, holding its
    position, when its patch leaves the frame, the patch is textureless, or
    the best correlation falls below ``min_correlation``.
    """
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[3] != 3:
        raise ValidationError(f"frames must be F x H x W x 3, got {frames.shape}")
    if patch % 2 != 1 or patch < 3:
        raise ValidationError(f"patch size must be odd and >= 3, got {patch}")
    if search < 1:
        raise ValidationError(f"search radius must be >= 1, got {search}")
    gray = frames.mean(axis=3).astype(np.float64)
    num_frames, height, width = gray.shape
    pts = np.asarray(keypoints, dtype=np.float64).reshape(-1, 2)
    m = pts.shape[0]
    half = patch // 2

    positions = np.empty((num_frames, m, 2), dtype=np.float64)
    visible = np.ones((num_frames, m), dtype=bool)
    positions[0] = pts
    cur = pts.copy()
    for t in range(1, num_frames):
        prev_img, img = gray[t - 1], gray[t]
        for i in range(m):
            cx = int(round(cur[i, 0]))
            cy = int(round(cur[i, 1]))
            if cx - half < 0 or cx + half >= width or cy - half < 0 or cy + half >= height:
                visible[t, i] = False
                positions[t, i] = cur[i]
                continue
            template = prev_img[cy - half : cy + half + 1, cx - half : cx + half + 1]
            y0 = max(0, cy - half - search)
            y1 = min(height, cy + half + search + 1)
            x0 = max(0, cx - half - search)
            x1 = min(width, cx + half + search + 1)
            region = img[y0:y1, x0:x1]
            if region.shape[0] < patch or region.shape[1] < patch:
                visible[t, i] = False
                positions[t, i] = cur[i]
                continue
            corr = _ncc_map(template, region)
            if corr is None:
                visible[t, i] = False
                positions[t, i] = cur[i]
                continue
            best = corr.max()
            if best < min_correlation:
                visible[t, i] = False
                positions[t, i] = cur[i]
                continue
            # among exact ties (e.g. periodic texture) keep the point still
            ties_y, ties_x = np.nonzero(corr == best)
            ddx = x0 + ties_x + half - cx
            ddy = y0 + ties_y + half - cy
            pick = int(np.lexsort((ddx, ddy, ddx * ddx + ddy * ddy))[0])
            by, bx = int(ties_y[pick]), int(ties_x[pick])
            new_cx = x0 + bx + half
            new_cy = y0 + by + half
            cur[i, 0] += new_cx - cx
            cur[i, 1] += new_cy - cy
            positions[t, i] = cur[i]
        cur = positions[t].copy()
    return Tracks(positions, visible)


def _ncc_map(template: np.ndarray, region: np.ndarray) -> np.ndarray | None:
    """Correlation surface of a template over a region; None if textureless."""
    tz = template - template.mean()
    t_norm = math.sqrt(float((tz * tz).sum()))
    if t_norm == 0.0:
        return None
    windows = sliding_window_view(region, template.shape)
    n = template.size
    wsum = windows.sum(axis=(2, 3))
    wsq = (windows.astype(np.float64) ** 2).sum(axis=(2, 3))
    var = np.maximum(wsq - wsum * wsum / n, 0.0)
    num = np.einsum("abij,ij->ab", windows, tz)
    denom = np.sqrt(var) * t_norm
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.where(denom > 0, num / denom, -np.inf)
    if not np.isfinite(corr).any():
        return None
    return corr
