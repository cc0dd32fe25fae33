"""Readers and writers for every cross-stage artifact.

Formats (all little-endian, documented in README):

* FGRID   magic ``FGRD`` + u32 H, W, C + H*W*C float32, row-major with the
          channel axis fastest (one pixel's feature vector is contiguous).
* FGR4    magic ``FGR4`` + four u32 dims + float32 payload, row-major.
          Used for 4-D attention tensors.
* PGM P5  binary masks, maxval 255; a pixel >= 128 is foreground.
* PPM P6  8-bit RGB frames; sequences are zero-padded numbered files.
* TRACKS  text: header ``TRACKS F m`` then F lines of m ``x y v`` triples.

Every reader/writer pair is a lossless round trip on valid data, and
readers reject payloads whose declared and actual sizes disagree.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FileFormatError, ValidationError

_FGRID_MAGIC = b"FGRD"
_FGR4_MAGIC = b"FGR4"


@dataclass(frozen=True)
class FeatureGrid:
    """Dense per-pixel feature tensor, shape (H, W, C) float32."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ValidationError(f"feature grid must be H x W x C, got shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass
class Tracks:
    """F-frame trajectory of m points with per-point visibility.

    ``points`` is (F, m, 2) float64 in (x, y) pixel coordinates; ``visible``
    is (F, m) bool. An invisible point carries its last visible coordinates;
    consumers decide how to treat it.
    """

    points: np.ndarray
    visible: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        vis = np.asarray(self.visible, dtype=bool)
        if pts.ndim != 3 or pts.shape[2] != 2:
            raise ValidationError(f"track points must be F x m x 2, got shape {pts.shape}")
        if vis.shape != pts.shape[:2]:
            raise ValidationError(
                f"visibility shape {vis.shape} does not match points {pts.shape[:2]}"
            )
        self.points = pts
        self.visible = vis

    @property
    def num_frames(self) -> int:
        return self.points.shape[0]

    @property
    def num_points(self) -> int:
        return self.points.shape[1]


# --------------------------------------------------------------------------
# FGRID / FGR4


def write_fgrid(grid: FeatureGrid, path) -> None:
    arr = grid.data
    if not np.all(np.isfinite(arr)):
        raise ValidationError("refusing to write non-finite feature values")
    h, w, c = arr.shape
    header = _FGRID_MAGIC + np.asarray([h, w, c], dtype="<u4").tobytes()
    Path(path).write_bytes(header + np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_fgrid(path) -> FeatureGrid:
    raw = Path(path).read_bytes()
    dims = _read_tensor_header(raw, _FGRID_MAGIC, 3, path)
    data = _read_tensor_payload(raw, dims, 4 + 4 * 3, path)
    return FeatureGrid(data)


def write_fgr4(tensor: np.ndarray, path) -> None:
    arr = np.asarray(tensor, dtype=np.float32)
    if arr.ndim != 4:
        raise ValidationError(f"FGR4 payload must be 4-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("refusing to write non-finite tensor values")
    header = _FGR4_MAGIC + np.asarray(arr.shape, dtype="<u4").tobytes()
    Path(path).write_bytes(header + np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_fgr4(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    dims = _read_tensor_header(raw, _FGR4_MAGIC, 4, path)
    return _read_tensor_payload(raw, dims, 4 + 4 * 4, path)


def _read_tensor_header(raw: bytes, magic: bytes, ndim: int, path) -> tuple[int, ...]:
    if len(raw) < 4 or raw[:4] != magic:
        raise FileFormatError(
            f"{path}: bad magic at byte 0, expected {magic!r} got {raw[:4]!r}"
        )
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise FileFormatError(
            f"{path}: truncated header, need {header_end} bytes, file has {len(raw)}"
        )
    return tuple(int(v) for v in np.frombuffer(raw[4:header_end], dtype="<u4"))


def _read_tensor_payload(raw: bytes, dims: tuple[int, ...], offset: int, path) -> np.ndarray:
    count = 1
    for d in dims:
        count *= d
    expected = offset + 4 * count
    if len(raw) != expected:
        raise FileFormatError(
            f"{path}: payload size mismatch at byte {min(len(raw), expected)}: "
            f"declared dims {dims} need {expected} bytes, file has {len(raw)}"
        )
    flat = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        raise FileFormatError(
            f"{path}: non-finite value at byte {offset + 4 * int(bad[0])}"
        )
    return flat.reshape(dims).astype(np.float32)


# --------------------------------------------------------------------------
# PGM / PPM


def _parse_netpbm_header(raw: bytes, magic: bytes, path) -> tuple[int, int, int]:
    """Return (width, height, data offset). Skips whitespace and # comments."""
    if raw[:2] != magic:
        raise FileFormatError(f"{path}: expected {magic.decode()} header, got {raw[:2]!r}")
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FileFormatError(f"{path}: truncated header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte separates header from raster
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FileFormatError(f"{path}: non-numeric header token") from None
    if maxval != 255:
        raise FileFormatError(f"{path}: maxval must be 255, got {maxval}")
    if width < 1 or height < 1:
        raise FileFormatError(f"{path}: bad dimensions {width}x{height}")
    return width, height, pos


def read_mask_pgm(path) -> np.ndarray:
    """Load a P5 mask as (H, W) bool; pixel >= 128 is foreground."""
    raw = Path(path).read_bytes()
    width, height, offset = _parse_netpbm_header(raw, b"P5", path)
    if len(raw) - offset != width * height:
        raise FileFormatError(
            f"{path}: raster size mismatch, declared {width * height} bytes, "
            f"got {len(raw) - offset}"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=offset)
    return (pixels >= 128).reshape(height, width)


def write_mask_pgm(mask: np.ndarray, path) -> None:
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValidationError(f"mask must be 2-D, got shape {mask.shape}")
    h, w = mask.shape
    header = f"P5\n{w} {h}\n255\n".encode()
    Path(path).write_bytes(header + (mask.astype(np.uint8) * 255).tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    width, height, offset = _parse_netpbm_header(raw, b"P6", path)
    if len(raw) - offset != 3 * width * height:
        raise FileFormatError(
            f"{path}: raster size mismatch, declared {3 * width * height} bytes, "
            f"got {len(raw) - offset}"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, count=3 * width * height, offset=offset)
    return pixels.reshape(height, width, 3).copy()


def write_ppm(frame: np.ndarray, path) -> None:
    frame = np.asarray(frame, dtype=np.uint8)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValidationError(f"frame must be H x W x 3, got shape {frame.shape}")
    h, w, _ = frame.shape
    header = f"P6\n{w} {h}\n255\n".encode()
    Path(path).write_bytes(header + np.ascontiguousarray(frame).tobytes())


def read_frames_ppm(dirpath) -> np.ndarray:
    """Load a numbered PPM directory as (F, H, W, 3) uint8, ordered by index."""
    dirpath = Path(dirpath)
    indexed = []
    for p in sorted(dirpath.glob("*.ppm")):
        m = re.search(r"(\d+)$", p.stem)
        if m is None:
            raise FileFormatError(f"{p}: frame file name carries no numeric index")
        indexed.append((int(m.group(1)), p))
    if not indexed:
        raise FileFormatError(f"{dirpath}: no .ppm frames found")
    indexed.sort()
    indices = [i for i, _ in indexed]
    for prev, cur in zip(indices, indices[1:]):
        if cur == prev:
            raise FileFormatError(f"{dirpath}: duplicate frame index {cur}")
        if cur != prev + 1:
            raise FileFormatError(
                f"{dirpath}: gap in frame numbering between {prev} and {cur}"
            )
    frames = [read_ppm(p) for _, p in indexed]
    first = frames[0].shape
    for (idx, p), f in zip(indexed, frames):
        if f.shape != first:
            raise FileFormatError(
                f"{p}: frame size {f.shape[1]}x{f.shape[0]} differs from "
                f"first frame {first[1]}x{first[0]}"
            )
    return np.stack(frames)


def write_frames_ppm(frames: np.ndarray, dirpath, prefix: str = "frame_") -> list[Path]:
    frames = np.asarray(frames, dtype=np.uint8)
    if frames.ndim != 4 or frames.shape[3] != 3:
        raise ValidationError(f"frames must be F x H x W x 3, got shape {frames.shape}")
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(frames):
        p = dirpath / f"{prefix}{i:04d}.ppm"
        write_ppm(frame, p)
        paths.append(p)
    return paths


# --------------------------------------------------------------------------
# TRACKS


def read_tracks(path) -> Tracks:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise FileFormatError(f"{path}: empty file")
    header = lines[0].split()
    if len(header) != 3 or header[0] != "TRACKS":
        raise FileFormatError(f"{path}: line 1: expected header 'TRACKS F m'")
    try:
        num_frames, num_points = int(header[1]), int(header[2])
    except ValueError:
        raise FileFormatError(f"{path}: line 1: non-numeric frame/point count") from None
    if num_frames < 1 or num_points < 1:
        raise FileFormatError(f"{path}: line 1: counts must be positive")
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != num_frames:
        raise FileFormatError(
            f"{path}: header declares {num_frames} frames, found {len(body)} data lines"
        )
    points = np.zeros((num_frames, num_points, 2), dtype=np.float64)
    visible = np.zeros((num_frames, num_points), dtype=bool)
    for row, line in enumerate(body):
        tokens = list(re.finditer(r"\S+", line))
        if len(tokens) != 3 * num_points:
            raise FileFormatError(
                f"{path}: line {row + 2}: expected {3 * num_points} values "
                f"({num_points} 'x y v' triples), found {len(tokens)}"
            )
        for j in range(num_points):
            tx, ty, tv = tokens[3 * j], tokens[3 * j + 1], tokens[3 * j + 2]
            try:
                x = float(tx.group())
                y = float(ty.group())
            except ValueError:
                bad = tx if _not_float(tx.group()) else ty
                raise FileFormatError(
                    f"{path}: line {row + 2}, column {bad.start() + 1}: "
                    f"non-numeric token {bad.group()!r}"
                ) from None
            if tv.group() not in ("0", "1"):
                raise FileFormatError(
                    f"{path}: line {row + 2}, column {tv.start() + 1}: "
                    f"visibility flag must be 0 or 1, got {tv.group()!r}"
                )
            points[row, j] = (x, y)
            visible[row, j] = tv.group() == "1"
    return Tracks(points, visible)


def _not_float(token: str) -> bool:
    try:
        float(token)
        return False
    except ValueError:
        return True


def write_tracks(tracks: Tracks, path) -> None:
    lines = [f"TRACKS {tracks.num_frames} {tracks.num_points}"]
    for row in range(tracks.num_frames):
        parts = []
        for j in range(tracks.num_points):
            x, y = tracks.points[row, j]
            parts.append(f"{float(x)!r} {float(y)!r} {1 if tracks.visible[row, j] else 0}")
        lines.append(" ".join(parts))
    Path(path).write_text("\n".join(lines) + "\n")


def keypoints_to_tracks(points: np.ndarray, visible: np.ndarray | None = None) -> Tracks:
    """Wrap one frame of keypoints as a single-frame track file."""
    pts = np.asarray(points, dtype=np.float64).reshape(1, -1, 2)
    if visible is None:
        vis = np.ones(pts.shape[:2], dtype=bool)
    else:
        vis = np.asarray(visible, dtype=bool).reshape(1, -1)
    return Tracks(pts, vis)
