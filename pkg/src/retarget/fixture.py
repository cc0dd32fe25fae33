"""Synthetic end-to-end fixture: a textured disk translating over 16 frames.

Generates, fully deterministically, everything the pipeline needs: the
frame sequence, reference mask (disk at frame 0), a target mask with a
different shape (an ellipse elsewhere in the frame), low- and high-level
feature grids whose vectors encode normalized object coordinates (so
feature matching lands contour on contour and interior on interior), and a
ready-to-run config file.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from . import tensorio

FRAME_SIZE = 64
NUM_FRAMES = 16
DISK_CENTER = (20.0, 24.0)
DISK_RADIUS = 13.0
VELOCITY = (1.25, 0.75)
ELLIPSE_CENTER = (38.0, 32.0)
ELLIPSE_AXES = (10.0, 13.0)
BRIGHT_THRESHOLD = 75


def disk_center(frame_index: int) -> tuple[float, float]:
    return (
        DISK_CENTER[0] + VELOCITY[0] * frame_index,
        DISK_CENTER[1] + VELOCITY[1] * frame_index,
    )


def render_frames(num_frames: int = NUM_FRAMES, size: int = FRAME_SIZE) -> np.ndarray:
    """Textured disk (values >= 110) over a dim static background (<= 40)."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    background = 15.0 + 12.0 * np.sin(0.9 * xs) * np.sin(0.7 * ys) + 8.0 * ((xs + ys) % 7 > 3)
    frames = np.empty((num_frames, size, size, 3), dtype=np.uint8)
    for t in range(num_frames):
        cx, cy = disk_center(t)
        dx, dy = xs - cx, ys - cy
        inside = dx * dx + dy * dy <= DISK_RADIUS * DISK_RADIUS
        texture = 170.0 + 60.0 * np.sin(0.55 * dx) * np.cos(0.45 * dy)
        value = np.where(inside, texture, background)
        frames[t, :, :, 0] = np.clip(value, 0, 255)
        frames[t, :, :, 1] = np.clip(value * 0.92, 0, 255)
        frames[t, :, :, 2] = np.clip(value * 0.82, 0, 255)
    return frames


def reference_mask(size: int = FRAME_SIZE) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    cx, cy = DISK_CENTER
    return (xs - cx) ** 2 + (ys - cy) ** 2 <= DISK_RADIUS**2


def target_mask(size: int = FRAME_SIZE) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    cx, cy = ELLIPSE_CENTER
    a, b = ELLIPSE_AXES
    return ((xs - cx) / a) ** 2 + ((ys - cy) / b) ** 2 <= 1.0


def _shape_features(size: int, cx: float, cy: float, ax: float, ay: float) -> np.ndarray:
    """Per-pixel vectors encoding normalized in-object coordinates.

    Inside the object: (u, v, 1 - radius, 0) with u, v the axis-normalized
    offsets, so after L2 normalization both polar angle and radius stay
    distinguishable. Outside: (0, 0, 0, 4), far from every object vector.
    """
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    u = (xs - cx) / ax
    v = (ys - cy) / ay
    r = np.sqrt(u * u + v * v)
    inside = r <= 1.0
    feats = np.zeros((size, size, 4), dtype=np.float32)
    feats[..., 0] = np.where(inside, u, 0.0)
    feats[..., 1] = np.where(inside, v, 0.0)
    feats[..., 2] = np.where(inside, 1.0 - r, 0.0)
    feats[..., 3] = np.where(inside, 0.0, 4.0)
    return feats


def low_level_features(size: int = FRAME_SIZE) -> tuple[np.ndarray, np.ndarray]:
    ref = _shape_features(size, *DISK_CENTER, DISK_RADIUS, DISK_RADIUS)
    tar = _shape_features(size, *ELLIPSE_CENTER, *ELLIPSE_AXES)
    return ref, tar


def high_level_features(coarse: int = 16, size: int = FRAME_SIZE) -> tuple[np.ndarray, np.ndarray]:
    """Coarse-grid token-style features with the same semantics."""
    scale = size / coarse

    def sample(cx, cy, ax, ay):
        feats = np.zeros((coarse, coarse, 3), dtype=np.float32)
        for row in range(coarse):
            for col in range(coarse):
                x = (col + 0.5) * scale - 0.5
                y = (row + 0.5) * scale - 0.5
                u, v = (x - cx) / ax, (y - cy) / ay
                r = math.hypot(u, v)
                if r <= 1.0:
                    feats[row, col] = (u, v, 1.0 - r)
                else:
                    feats[row, col] = (0.0, 0.0, -2.0)
        return feats

    return sample(*DISK_CENTER, DISK_RADIUS, DISK_RADIUS), sample(*ELLIPSE_CENTER, *ELLIPSE_AXES)


def write_fixture(root, seed: int = 0) -> dict:
    """Materialize the fixture under ``root``; returns the path map."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    frames_dir = root / "frames"
    tensorio.write_frames_ppm(render_frames(), frames_dir)
    paths = {
        "frames": str(frames_dir),
        "ref_mask": str(root / "ref_mask.pgm"),
        "tar_mask": str(root / "tar_mask.pgm"),
        "ref_low": str(root / "ref_low.fgrid"),
        "tar_low": str(root / "tar_low.fgrid"),
        "ref_high": str(root / "ref_high.fgrid"),
        "tar_high": str(root / "tar_high.fgrid"),
        "out": str(root / "out"),
    }
    tensorio.write_mask_pgm(reference_mask(), paths["ref_mask"])
    tensorio.write_mask_pgm(target_mask(), paths["tar_mask"])
    ref_low, tar_low = low_level_features()
    tensorio.write_fgrid(tensorio.FeatureGrid(ref_low), paths["ref_low"])
    tensorio.write_fgrid(tensorio.FeatureGrid(tar_low), paths["tar_low"])
    ref_high, tar_high = high_level_features()
    tensorio.write_fgrid(tensorio.FeatureGrid(ref_high), paths["ref_high"])
    tensorio.write_fgrid(tensorio.FeatureGrid(tar_high), paths["tar_high"])

    config_lines = [
        "# synthetic moving-disk fixture",
        f"seed={seed}",
        "n_pca=3",
        "track_patch=9",
        "track_search=3",
        "attn_size=8",
        # matched and tracked points are integer-quantized; smooth the spline
        # instead of interpolating that jitter exactly
        "tps_lambda=10.0",
    ] + [f"{key}={value}" for key, value in paths.items()]
    cfg_path = root / "fixture.cfg"
    cfg_path.write_text("\n".join(config_lines) + "\n")
    paths["config"] = str(cfg_path)
    return paths
