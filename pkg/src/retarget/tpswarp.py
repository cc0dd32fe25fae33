"""Thin plate spline fitting and dense backward warping of frames.

The spline interpolating control points c_i -> t_i is T(p) = A [p; 1] +
sum_i w_i * U(|c_i - p|) with U(r) = r^2 log r^2 (and U(0) = 0), the
interpolant minimizing the integrated squared-Hessian bending energy. The
coefficients solve the standard (m+3) x (m+3) system [[K + lam*I, P],
[P^T, 0]] [w; a] = [t; 0], one right-hand side per output coordinate.

Warping is backward: the spline is fitted with centers at the target
keypoints mapping to the reference keypoints, then evaluated at every
output pixel to find where to sample the source frame, so every output
pixel gets filled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError
from .tensorio import Tracks

DUPLICATE_TOL = 1e-9
RELATIVE_LAMBDA = 1e-8


@dataclass(frozen=True)
class TpsTransform:
    """Fitted spline: 2x3 affine block, per-center 2-D kernel weights.

    Side conditions sum(w) = 0 and sum(w * c) = 0 hold for every fit; with
    lam = 0 evaluation at a center reproduces its paired target point.
    """

    affine: np.ndarray
    weights: np.ndarray
    centers: np.ndarray
    lam: float


def tps_kernel(r: np.ndarray) -> np.ndarray:
    """Radial basis U(r) = r^2 log r^2, continuously extended with U(0) = 0."""
    r = np.asarray(r, dtype=np.float64)
    out = np.zeros_like(r)
    np.log(r, out=out, where=r > 0)
    return 2.0 * r * r * out


def _kernel_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a[:, None, :] - b[None, :, :]
    return tps_kernel(np.hypot(d[..., 0], d[..., 1]))


def tps_fit(centers: np.ndarray, targets: np.ndarray, lam: float | None = 0.0) -> TpsTransform:
    """Fit the spline mapping centers onto targets.

    ``lam`` regularizes the kernel block; 0 interpolates exactly, None uses
    the conditioning default RELATIVE_LAMBDA times the mean squared
    center distance. Raises NumericalError for duplicate or collinear
    centers (the system is singular there).
    """
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    m = centers.shape[0]
    if targets.shape[0] != m:
        raise ValidationError(f"{m} centers but {targets.shape[0]} targets")
    if m < 3:
        raise NumericalError(f"spline fit needs at least 3 control points, got {m}")

    diff = centers[:, None, :] - centers[None, :, :]
    dist_sq = diff[..., 0] ** 2 + diff[..., 1] ** 2
    close = np.argwhere(np.triu(dist_sq < DUPLICATE_TOL**2, k=1))
    if close.size:
        i, j = close[0]
        raise NumericalError(
            f"control points {i} and {j} coincide at {tuple(centers[i])}"
        )
    if lam is None:
        lam = RELATIVE_LAMBDA * float(dist_sq.mean())
    if lam < 0:
        raise ValidationError(f"lambda must be >= 0, got {lam}")

    p = np.hstack([centers, np.ones((m, 1))])
    if np.linalg.matrix_rank(p) < 3:
        raise NumericalError("control points are collinear; spline system is singular")

    k = tps_kernel(np.sqrt(dist_sq)) + lam * np.eye(m)
    system = np.zeros((m + 3, m + 3))
    system[:m, :m] = k
    system[:m, m:] = p
    system[m:, :m] = p.T
    rhs = np.zeros((m + 3, 2))
    rhs[:m] = targets
    try:
        sol = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular spline system: {exc}") from exc
    weights = sol[:m]
    affine = sol[m : m + 3].T.copy()  # rows give output = affine @ [x, y, 1]
    return TpsTransform(affine=affine, weights=weights, centers=centers.copy(), lam=float(lam))


def tps_eval(transform: TpsTransform, points: np.ndarray) -> np.ndarray:
    """Evaluate the spline at one or many (x, y) points."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 2)
    k = _kernel_matrix(pts, transform.centers)
    out = (
        pts @ transform.affine[:, :2].T
        + transform.affine[:, 2]
        + k @ transform.weights
    )
    return out[0] if single else out


def bending_energy(transform: TpsTransform) -> float:
    """Quadratic-form bending energy w^T K w summed over both coordinates."""
    k = _kernel_matrix(transform.centers, transform.centers)
    return float(np.einsum("ic,ij,jc->", transform.weights, k, transform.weights))


def build_backward_field(
    target_points: np.ndarray,
    ref_points: np.ndarray,
    out_height: int,
    out_width: int,
    lam: float | None = 0.0,
) -> np.ndarray:
    """Dense backward map: for each output pixel, the source coordinate.

    Fits the spline with centers at the target keypoints mapping to the
    reference keypoints and evaluates it at every output pixel center.
    Returns (H, W, 2) float64 of (x, y) source coordinates.
    """
    transform = tps_fit(target_points, ref_points, lam)
    xs, ys = np.meshgrid(np.arange(out_width), np.arange(out_height))
    grid = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    return tps_eval(transform, grid).reshape(out_height, out_width, 2)


def warp_frame(
    frame: np.ndarray,
    field: np.ndarray,
    mode: str = "full",
    ref_mask: np.ndarray | None = None,
    fill: tuple[int, int, int] = (0, 0, 0),
) -> np.ndarray:
    """Backward-warp a frame: bilinear-sample the source at each field coord.

    Source coordinates outside the frame produce the fill color. In
    "masked" mode, output pixels whose source lands outside ``ref_mask``
    are also filled, isolating the subject.
    """
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValidationError(f"frame must be H x W x 3, got {frame.shape}")
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 3 or field.shape[2] != 2:
        raise ValidationError(f"field must be H x W x 2, got {field.shape}")
    if mode not in ("full", "masked"):
        raise ValidationError(f"unknown warp mode {mode!r}")
    if mode == "masked" and ref_mask is None:
        raise ValidationError("masked mode requires a reference mask")

    h_src, w_src = frame.shape[:2]
    sx = field[..., 0]
    sy = field[..., 1]
    # tolerance so a numerically fitted identity map keeps edge pixels inside
    eps = 1e-6
    inside = (sx >= -eps) & (sx <= w_src - 1 + eps) & (sy >= -eps) & (sy <= h_src - 1 + eps)

    cx = np.clip(sx, 0, w_src - 1)
    cy = np.clip(sy, 0, h_src - 1)
    x0 = np.floor(cx).astype(int)
    y0 = np.floor(cy).astype(int)
    x1 = np.minimum(x0 + 1, w_src - 1)
    y1 = np.minimum(y0 + 1, h_src - 1)
    fx = (cx - x0)[..., None]
    fy = (cy - y0)[..., None]
    img = frame.astype(np.float64)
    top = img[y0, x0] + fx * (img[y0, x1] - img[y0, x0])
    bot = img[y1, x0] + fx * (img[y1, x1] - img[y1, x0])
    out = top + fy * (bot - top)

    if mode == "masked":
        mask = np.asarray(ref_mask, dtype=bool)
        if mask.shape != (h_src, w_src):
            raise ValidationError(
                f"reference mask {mask.shape} does not match frame {(h_src, w_src)}"
            )
        nx = np.clip(np.rint(sx).astype(int), 0, w_src - 1)
        ny = np.clip(np.rint(sy).astype(int), 0, h_src - 1)
        inside = inside & mask[ny, nx]

    out = np.where(inside[..., None], out, np.asarray(fill, dtype=np.float64))
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def usable_control_pairs(
    ref_seq: Tracks, tar_seq: Tracks, frame: int
) -> tuple[np.ndarray, np.ndarray]:
    """Control pairs for one frame: visible in both, duplicates dropped.

    Matching is many-to-one, so distinct reference points can share a
    target point; the spline needs distinct centers, so later duplicates
    (on the target side) are dropped.
    """
    vis = ref_seq.visible[frame] & tar_seq.visible[frame]
    tar = tar_seq.points[frame][vis]
    ref = ref_seq.points[frame][vis]
    keep = np.ones(len(tar), dtype=bool)
    for i in range(1, len(tar)):
        d = tar[:i][keep[:i]] - tar[i]
        if np.any((d**2).sum(axis=1) < DUPLICATE_TOL**2):
            keep[i] = False
    return tar[keep], ref[keep]


def warp_sequence(
    frames: np.ndarray,
    ref_seq: Tracks,
    tar_seq: Tracks,
    lam: float | None = None,
    mode: str = "full",
    ref_mask: np.ndarray | None = None,
    fill: tuple[int, int, int] = (0, 0, 0),
) -> np.ndarray:
    """Warp every frame so the reference keypoints land on the target ones."""
    frames = np.asarray(frames)
    if frames.ndim != 4:
        raise ValidationError(f"frames must be F x H x W x 3, got {frames.shape}")
    if not (len(frames) == ref_seq.num_frames == tar_seq.num_frames):
        raise ValidationError(
            f"frame counts differ: {len(frames)} frames, {ref_seq.num_frames} "
            f"reference rows, {tar_seq.num_frames} target rows"
        )
    if ref_seq.num_points != tar_seq.num_points:
        raise ValidationError("reference and target sequences differ in point count")
    height, width = frames.shape[1:3]
    out = np.empty_like(frames)
    for t in range(len(frames)):
        tar, ref = usable_control_pairs(ref_seq, tar_seq, t)
        if len(tar) < 3:
            raise NumericalError(
                f"frame {t}: only {len(tar)} usable control points, need at least 3"
            )
        field = build_backward_field(tar, ref, height, width, lam)
        out[t] = warp_frame(frames[t], field, mode=mode, ref_mask=ref_mask, fill=fill)
    return out
