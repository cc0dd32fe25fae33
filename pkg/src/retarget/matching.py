"""Semantic feature fusion and keypoint correspondence.

Low-level diffusion-style features from both images are reduced together by
a joint PCA (pixels of both images stacked so they land in one subspace),
upsampled to a common resolution, L2-normalized per pixel, and concatenated
with L2-normalized high-level token features. Each reference keypoint is
then matched to the target pixel with the highest similarity, defined as
the negative L2 distance between fused feature vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .tensorio import FeatureGrid


@dataclass(frozen=True)
class FusedFeatureGrid:
    """Fused per-pixel features: a low-level slice then a high-level slice.

    Each pixel's slices are unit L2 norm (or all-zero when the raw vector
    was zero). ``low_channels`` + ``high_channels`` = total channels.
    """

    grid: FeatureGrid
    low_channels: int
    high_channels: int

    def __post_init__(self):
        if self.low_channels + self.high_channels != self.grid.channels:
            raise ValidationError(
                f"slice tags {self.low_channels}+{self.high_channels} do not "
                f"cover {self.grid.channels} channels"
            )

    @property
    def data(self) -> np.ndarray:
        return self.grid.data


@dataclass(frozen=True)
class Correspondence:
    """Per reference keypoint: matched target pixel and its similarity.

    ``indices`` are row-major pixel indices into the target image,
    ``points`` the same as (x, y), ``similarity`` the negative L2 feature
    distance (always <= 0). Matching is independent per keypoint, so
    several keypoints may share a target pixel.
    """

    indices: np.ndarray
    points: np.ndarray
    similarity: np.ndarray
    target_shape: tuple[int, int]


def pca_joint_reduce(
    f_ref: FeatureGrid, f_tar: FeatureGrid, n_components: int
) -> tuple[FeatureGrid, FeatureGrid]:
    """Project both grids onto the top principal directions of their joint pixels.

    Pixels of both grids are stacked into one matrix, mean-centered, and
    projected onto the leading ``n_components`` right singular vectors.
    Component signs are fixed so the projected value of largest magnitude
    is positive, which makes the output invariant to any common rotation
    of the input channel space.
    """
    if f_ref.channels != f_tar.channels:
        raise ValidationError(
            f"channel mismatch: {f_ref.channels} vs {f_tar.channels}"
        )
    n_ref = f_ref.height * f_ref.width
    n_tar = f_tar.height * f_tar.width
    if not 1 <= n_components <= min(f_ref.channels, n_ref + n_tar):
        raise ValidationError(
            f"n_components={n_components} invalid for {f_ref.channels} channels "
            f"and {n_ref + n_tar} pixels"
        )
    stacked = np.vstack(
        [
            f_ref.data.reshape(n_ref, -1).astype(np.float64),
            f_tar.data.reshape(n_tar, -1).astype(np.float64),
        ]
    )
    centered = stacked - stacked.mean(axis=0)
    if not np.any(centered):
        raise ValidationError("degenerate input: joint pixel set has zero variance")
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    scores = centered @ vt[:n_components].T
    for k in range(n_components):
        i = int(np.argmax(np.abs(scores[:, k])))
        if scores[i, k] < 0:
            scores[:, k] = -scores[:, k]
    out_ref = scores[:n_ref].reshape(f_ref.height, f_ref.width, n_components)
    out_tar = scores[n_ref:].reshape(f_tar.height, f_tar.width, n_components)
    return FeatureGrid(out_ref.astype(np.float32)), FeatureGrid(out_tar.astype(np.float32))


def upsample_bilinear(grid: FeatureGrid, out_height: int, out_width: int) -> FeatureGrid:
    """Resample per channel with the align-corners-false pixel-center convention."""
    if out_height < 1 or out_width < 1:
        raise ValidationError(f"bad output size {out_height}x{out_width}")
    h, w = grid.height, grid.width
    if (out_height, out_width) == (h, w):
        return FeatureGrid(grid.data.copy())
    src_y = np.clip((np.arange(out_height) + 0.5) * (h / out_height) - 0.5, 0, h - 1)
    src_x = np.clip((np.arange(out_width) + 0.5) * (w / out_width) - 0.5, 0, w - 1)
    y0 = np.floor(src_y).astype(int)
    x0 = np.floor(src_x).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (src_y - y0).astype(np.float32)[:, None, None]
    fx = (src_x - x0).astype(np.float32)[None, :, None]
    d = grid.data
    # nested lerp keeps constant inputs bit-exact
    top = d[np.ix_(y0, x0)] + fx * (d[np.ix_(y0, x1)] - d[np.ix_(y0, x0)])
    bot = d[np.ix_(y1, x0)] + fx * (d[np.ix_(y1, x1)] - d[np.ix_(y1, x0)])
    return FeatureGrid(top + fy * (bot - top))


def _normalize_rows(flat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(flat, axis=1, keepdims=True)
    return np.divide(flat, norms, out=np.zeros_like(flat), where=norms > 0)


def fuse_features(low: FeatureGrid, high: FeatureGrid) -> FusedFeatureGrid:
    """Concatenate per-pixel L2-normalized low- and high-level vectors.

    Zero vectors pass through as zeros. Grids must already share a
    resolution (upsample first).
    """
    if (low.height, low.width) != (high.height, high.width):
        raise ValidationError(
            f"resolution mismatch: {low.height}x{low.width} vs {high.height}x{high.width}"
        )
    n = low.height * low.width
    a = _normalize_rows(low.data.reshape(n, -1).astype(np.float64))
    b = _normalize_rows(high.data.reshape(n, -1).astype(np.float64))
    fused = np.concatenate([a, b], axis=1).reshape(
        low.height, low.width, low.channels + high.channels
    )
    return FusedFeatureGrid(
        grid=FeatureGrid(fused.astype(np.float32)),
        low_channels=low.channels,
        high_channels=high.channels,
    )


def match_keypoints(
    f_ref: FusedFeatureGrid,
    f_tar: FusedFeatureGrid,
    keypoints: np.ndarray,
    tar_mask: np.ndarray,
) -> Correspondence:
    """Nearest-neighbor match of each keypoint into the masked target image.

    The reference feature is read at the pixel nearest each (sub-pixel)
    keypoint; the match is the masked target pixel minimizing the L2
    feature distance, ties broken toward the lowest row-major index.
    """
    tar_mask = np.asarray(tar_mask, dtype=bool)
    if (f_tar.grid.height, f_tar.grid.width) != tar_mask.shape:
        raise ValidationError(
            f"target grid {f_tar.grid.height}x{f_tar.grid.width} does not match "
            f"mask {tar_mask.shape[0]}x{tar_mask.shape[1]}"
        )
    if f_ref.grid.channels != f_tar.grid.channels:
        raise ValidationError("fused grids have different channel counts")
    if not tar_mask.any():
        raise ValidationError("target mask has no foreground")
    keypoints = np.asarray(keypoints, dtype=np.float64).reshape(-1, 2)

    h_ref, w_ref = f_ref.grid.height, f_ref.grid.width
    cols = np.clip(np.rint(keypoints[:, 0]).astype(int), 0, w_ref - 1)
    rows = np.clip(np.rint(keypoints[:, 1]).astype(int), 0, h_ref - 1)
    ref_vecs = f_ref.data[rows, cols].astype(np.float64)

    height, width = tar_mask.shape
    cand = np.flatnonzero(tar_mask.ravel())  # row-major, so argmin tie-breaks low
    cand_vecs = f_tar.data.reshape(height * width, -1)[cand].astype(np.float64)

    diff = cand_vecs[None, :, :] - ref_vecs[:, None, :]
    dist = np.sqrt(np.einsum("mkc,mkc->mk", diff, diff))
    best = np.argmin(dist, axis=1)
    idx = cand[best]
    points = np.stack([idx % width, idx // width], axis=1).astype(np.float64)
    sim = -dist[np.arange(len(best)), best]
    return Correspondence(
        indices=idx.astype(np.int64),
        points=points,
        similarity=sim,
        target_shape=(height, width),
    )


def reduce_and_fuse(
    ref_low_layers: list[FeatureGrid],
    tar_low_layers: list[FeatureGrid],
    ref_high: FeatureGrid | None,
    tar_high: FeatureGrid | None,
    n_components: int,
    out_height: int,
    out_width: int,
    fusion: str = "both",
) -> tuple[FusedFeatureGrid, FusedFeatureGrid]:
    """Full feature-preparation path for a reference/target image pair.

    Each low-level layer pair is PCA-reduced jointly, upsampled to the
    output resolution and concatenated channel-wise; the high-level pair is
    upsampled; both slices are normalized and fused. ``fusion`` selects the
    ablation variant: "both", "low" (skip high-level), or "high".
    """
    if fusion not in ("both", "low", "high"):
        raise ValidationError(f"unknown fusion mode {fusion!r}")
    if len(ref_low_layers) != len(tar_low_layers):
        raise ValidationError("reference/target layer lists differ in length")

    def _low(pair_lists) -> list[np.ndarray]:
        out = []
        for ref_l, tar_l in pair_lists:
            n = min(n_components, ref_l.channels)
            red_ref, red_tar = pca_joint_reduce(ref_l, tar_l, n)
            out.append(
                (
                    upsample_bilinear(red_ref, out_height, out_width).data,
                    upsample_bilinear(red_tar, out_height, out_width).data,
                )
            )
        return out

    empty = FeatureGrid(np.zeros((out_height, out_width, 0), np.float32))
    low_ref, low_tar = empty, empty
    if fusion in ("both", "low"):
        if not ref_low_layers:
            raise ValidationError("fusion mode needs at least one low-level layer")
        reduced = _low(list(zip(ref_low_layers, tar_low_layers)))
        low_ref = FeatureGrid(np.concatenate([r for r, _ in reduced], axis=2))
        low_tar = FeatureGrid(np.concatenate([t for _, t in reduced], axis=2))

    high_ref, high_tar = empty, empty
    if fusion in ("both", "high"):
        if ref_high is None or tar_high is None:
            raise ValidationError("fusion mode needs high-level feature grids")
        high_ref = upsample_bilinear(ref_high, out_height, out_width)
        high_tar = upsample_bilinear(tar_high, out_height, out_width)

    return fuse_features(low_ref, high_ref), fuse_features(low_tar, high_tar)
