"""Writers (and the input readers) for the pipeline's wire formats.

Deliberately self-contained: the contract with the primary package is the
byte layout, not shared code. FGRID is magic ``FGRD`` + u32 H, W, C
(little-endian) + float32 payload, row-major, channel-fastest; masks are
P5 PGM with maxval 255 (>= 128 foreground); frames are P6 PPM; tracks are
text ``TRACKS F m`` plus F lines of ``x y v`` triples.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np


class AdapterError(Exception):
    pass


def write_fgrid(data: np.ndarray, path) -> None:
    arr = np.asarray(data, dtype="<f4")
    if arr.ndim != 3:
        raise AdapterError(f"feature grid must be H x W x C, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise AdapterError("refusing to export non-finite feature values")
    h, w, c = arr.shape
    header = b"FGRD" + np.asarray([h, w, c], dtype="<u4").tobytes()
    Path(path).write_bytes(header + np.ascontiguousarray(arr).tobytes())


def write_mask_pgm(mask: np.ndarray, path) -> None:
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    Path(path).write_bytes(
        f"P5\n{w} {h}\n255\n".encode() + (mask.astype(np.uint8) * 255).tobytes()
    )


def write_tracks(points: np.ndarray, visible: np.ndarray, path) -> None:
    points = np.asarray(points, dtype=np.float64)
    visible = np.asarray(visible, dtype=bool)
    num_frames, num_points = points.shape[:2]
    lines = [f"TRACKS {num_frames} {num_points}"]
    for t in range(num_frames):
        parts = []
        for j in range(num_points):
            x, y = points[t, j]
            parts.append(f"{float(x)!r} {float(y)!r} {1 if visible[t, j] else 0}")
        lines.append(" ".join(parts))
    Path(path).write_text("\n".join(lines) + "\n")


def _read_netpbm(path, magic: bytes):
    raw = Path(path).read_bytes()
    if raw[:2] != magic:
        raise AdapterError(f"{path}: expected {magic.decode()} file")
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1
    width, height, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise AdapterError(f"{path}: maxval must be 255")
    return raw, width, height, pos


def read_ppm(path) -> np.ndarray:
    raw, width, height, pos = _read_netpbm(path, b"P6")
    pixels = np.frombuffer(raw, np.uint8, count=3 * width * height, offset=pos)
    return pixels.reshape(height, width, 3).copy()


def read_image(path) -> np.ndarray:
    """Load an image as (H, W, 3) uint8; PPM natively, anything else via PIL."""
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return read_ppm(path)
    try:
        from PIL import Image
    except ImportError as exc:
        raise AdapterError(f"{path}: non-PPM input needs pillow installed") from exc
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def read_frames(dirpath) -> np.ndarray:
    dirpath = Path(dirpath)
    indexed = []
    for p in sorted(dirpath.glob("*.ppm")):
        m = re.search(r"(\d+)$", p.stem)
        if m:
            indexed.append((int(m.group(1)), p))
    if not indexed:
        raise AdapterError(f"{dirpath}: no numbered .ppm frames")
    indexed.sort()
    return np.stack([read_ppm(p) for _, p in indexed])


def read_keypoints(path) -> np.ndarray:
    """First frame of a TRACKS file as (m, 2) float64."""
    lines = Path(path).read_text().splitlines()
    header = lines[0].split()
    if len(header) != 3 or header[0] != "TRACKS":
        raise AdapterError(f"{path}: not a TRACKS file")
    m = int(header[2])
    values = lines[1].split()
    pts = np.array(
        [[float(values[3 * j]), float(values[3 * j + 1])] for j in range(m)], dtype=np.float64
    )
    return pts
