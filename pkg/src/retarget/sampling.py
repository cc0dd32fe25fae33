"""Structure-aware keypoint sampling on a binary mask.

Keypoints are drawn from two populations: points spaced uniformly by arc
length along the traced outer contour of the subject, and interior points
placed by Poisson disk sampling so they spread over the subject's body.

Coordinates are (x, y) with x = column and y = row; integer coordinates sit
on pixel centers.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError

# Moore neighborhood in clockwise image order, as (dy, dx): E SE S SW W NW N NE.
_MOORE = ((0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1))

POISSON_PACKING = 0.7
POISSON_ATTEMPTS = 30


@dataclass(frozen=True)
class Contour:
    """Closed boundary polyline of pixel centers, counter-clockwise.

    Counter-clockwise means positive shoelace area over raw (x, y) values.
    ``points`` is (N, 2) float64; consecutive points are 8-adjacent and the
    last point closes back to the first.
    """

    points: np.ndarray
    perimeter: float

    @property
    def num_points(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class KeypointSet:
    """m keypoints laid out as n_contour boundary points then n_interior."""

    points: np.ndarray
    n_contour: int
    n_interior: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "points", pts)
        if self.n_contour + self.n_interior != pts.shape[0]:
            raise ValidationError(
                f"layout {self.n_contour}+{self.n_interior} does not cover "
                f"{pts.shape[0]} points"
            )

    @property
    def m(self) -> int:
        return self.points.shape[0]


def _largest_component(mask: np.ndarray) -> np.ndarray:
    """Boolean mask of the largest 8-connected foreground component."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    best: list[tuple[int, int]] = []
    for sy, sx in zip(*np.nonzero(mask)):
        if seen[sy, sx]:
            continue
        comp = []
        queue = deque([(int(sy), int(sx))])
        seen[sy, sx] = True
        while queue:
            y, x = queue.popleft()
            comp.append((y, x))
            for dy, dx in _MOORE:
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                    seen[ny, nx] = True
                    queue.append((ny, nx))
        if len(comp) > len(best):
            best = comp
    out = np.zeros_like(mask, dtype=bool)
    ys, xs = zip(*best)
    out[list(ys), list(xs)] = True
    return out


def trace_contour(mask: np.ndarray) -> Contour:
    """Trace the ordered outer boundary of the largest foreground component.

    Moore-neighbor tracing, stopping when the walk state repeats (a strict
    superset of Jacob's same-entry-direction criterion that also terminates
    on one-pixel-thin shapes). Holes are ignored: only the outer boundary
    is traced. Raises on an empty mask.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValidationError(f"mask must be 2-D, got shape {mask.shape}")
    if not mask.any():
        raise ValidationError("cannot trace contour of an empty mask")
    comp = _largest_component(mask)
    h, w = comp.shape

    ys, xs = np.nonzero(comp)
    order = np.lexsort((xs, ys))  # topmost then leftmost
    sy, sx = int(ys[order[0]]), int(xs[order[0]])

    def fg(y: int, x: int) -> bool:
        return 0 <= y < h and 0 <= x < w and comp[y, x]

    # The raster scan enters the start pixel from its west neighbor, which is
    # guaranteed background for the topmost-leftmost foreground pixel. The
    # walk stops when its state (pixel, backtrack direction) repeats; this
    # subsumes Jacob's same-entry-direction criterion and also terminates on
    # one-pixel-thin shapes where that criterion alone never fires.
    start = (sy, sx)
    back = 4  # index of W in _MOORE
    path = [start]
    seen = {(start, back)}
    cur = start
    limit = 8 * (len(ys) + 4)
    for _ in range(limit):
        nxt = None
        for k in range(1, 9):
            dy, dx = _MOORE[(back + k) % 8]
            ny, nx = cur[0] + dy, cur[1] + dx
            if fg(ny, nx):
                nxt = (ny, nx)
                # backtrack = the (background) pixel examined just before nxt
                pdy, pdx = _MOORE[(back + k - 1) % 8]
                back = _direction(nxt, (cur[0] + pdy, cur[1] + pdx))
                break
        if nxt is None:
            break  # isolated pixel
        if (nxt, back) in seen:
            break
        seen.add((nxt, back))
        path.append(nxt)
        cur = nxt
    else:
        raise NumericalError("contour tracing failed to close")

    if len(path) > 1 and path[-1] == path[0]:
        path.pop()
    if len(path) > 1:
        dy = abs(path[-1][0] - path[0][0])
        dx = abs(path[-1][1] - path[0][1])
        if max(dy, dx) > 1:
            raise NumericalError("contour tracing produced an open polyline")

    pts = np.array([(x, y) for y, x in path], dtype=np.float64)
    if pts.shape[0] >= 3 and _shoelace(pts) < 0:
        pts = np.concatenate([pts[:1], pts[:0:-1]])
    per = _polyline_perimeter(pts)
    return Contour(points=pts, perimeter=per)


def _direction(frm: tuple[int, int], to: tuple[int, int]) -> int:
    d = (to[0] - frm[0], to[1] - frm[1])
    return _MOORE.index(d)


def _shoelace(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _polyline_perimeter(pts: np.ndarray) -> float:
    if pts.shape[0] < 2:
        return 0.0
    seg = np.diff(np.vstack([pts, pts[:1]]), axis=0)
    return float(np.hypot(seg[:, 0], seg[:, 1]).sum())


def sample_contour_uniform(
    contour: Contour,
    *,
    interval: float | None = None,
    count: int | None = None,
) -> np.ndarray:
    """Sample points at uniform arc-length spacing along a closed contour.

    Exactly one of ``interval`` (spacing in pixels) or ``count`` (number of
    points) must be given. Positions are {0, s, 2s, ...} with linear
    interpolation along contour segments; count mode uses s = perimeter/n
    and returns exactly n points. An interval longer than the perimeter
    yields a single point at arc length 0 and a warning.
    """
    if (interval is None) == (count is None):
        raise ValidationError("give exactly one of interval or count")
    if contour.num_points == 0:
        raise ValidationError("empty contour")
    pts = contour.points
    per = contour.perimeter

    if count is not None:
        if count < 1:
            raise ValidationError(f"count must be >= 1, got {count}")
        n = count
        if per == 0.0:
            return np.repeat(pts[:1], n, axis=0)
        targets = np.arange(n, dtype=np.float64) * (per / n)
    else:
        if interval <= 0:
            raise ValidationError(f"interval must be positive, got {interval}")
        if per == 0.0:
            return pts[:1].copy()
        if interval > per:
            warnings.warn(
                f"sampling interval {interval} exceeds contour perimeter {per:.3f}; "
                "returning a single point"
            )
            return pts[:1].copy()
        n = int(math.ceil(per / interval))
        targets = np.arange(n, dtype=np.float64) * interval
        targets = targets[targets < per]

    closed = np.vstack([pts, pts[:1]])
    seg = np.diff(closed, axis=0)
    seglen = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seglen)])
    idx = np.searchsorted(cum, targets, side="right") - 1
    idx = np.clip(idx, 0, len(seglen) - 1)
    denom = np.where(seglen[idx] > 0, seglen[idx], 1.0)
    t = (targets - cum[idx]) / denom
    return closed[idx] + t[:, None] * seg[idx]


def interior_candidates(mask: np.ndarray) -> np.ndarray:
    """(N, 2) int pixel coordinates (x, y) strictly inside the mask.

    A foreground pixel counts as interior when none of its 8 neighbors is
    background or outside the image, so hole borders are excluded too.
    """
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    inner = padded[1:-1, 1:-1].copy()
    for dy, dx in _MOORE:
        inner &= padded[1 + dy : padded.shape[0] - 1 + dy,
                        1 + dx : padded.shape[1] - 1 + dx]
    ys, xs = np.nonzero(inner)
    return np.stack([xs, ys], axis=1)


def poisson_disk_radius(area: float, count: int, packing: float = POISSON_PACKING) -> float:
    """Min-distance radius giving ``count`` disks over ``area`` at the packing ratio."""
    if count <= 0:
        raise ValidationError(f"count must be positive, got {count}")
    return math.sqrt(area / (count * math.pi * packing))


def poisson_disk_interior(
    mask: np.ndarray,
    count: int,
    rng: np.random.Generator,
    radius: float | None = None,
) -> tuple[np.ndarray, float]:
    """Poisson disk samples strictly inside the mask.

    Bridson-style dart throwing over a background grid, restricted to
    interior pixels (foreground, off the boundary). Returns ``(points,
    r)`` where every pair of returned points is at least ``r`` apart;
    ``r`` starts at sqrt(area / (count * pi * packing)) and is halved,
    re-running for the deficit, whenever fewer than ``count`` points fit.
    Deterministic for a fixed generator state. May return fewer than
    ``count`` points when the interior is too small to hold them.
    """
    mask = np.asarray(mask, dtype=bool)
    if count < 0:
        raise ValidationError(f"count must be >= 0, got {count}")
    area = int(mask.sum())
    if area == 0:
        raise ValidationError("mask has no foreground")
    if count > area:
        raise ValidationError(
            f"requested {count} interior points but mask has only {area} foreground pixels"
        )
    if count == 0:
        return np.zeros((0, 2), dtype=np.float64), 0.0

    cand = interior_candidates(mask)
    if cand.shape[0] == 0:
        return np.zeros((0, 2), dtype=np.float64), 0.0
    cand_set = set(map(tuple, cand))
    h, w = mask.shape

    def is_interior(x: float, y: float) -> bool:
        return (int(round(x)), int(round(y))) in cand_set

    r = radius if radius is not None else poisson_disk_radius(area, count)
    points: list[tuple[float, float]] = []
    for _ in range(16):  # halving schedule; 16 levels reaches sub-pixel radii
        points = _bridson(points, count, r, rng, cand, is_interior, w, h)
        if len(points) >= count:
            break
        r *= 0.5
    return np.asarray(points, dtype=np.float64).reshape(-1, 2), r


def _bridson(seed_points, count, r, rng, cand, is_interior, w, h):
    cell = r / math.sqrt(2.0)
    gw, gh = int(math.ceil(w / cell)), int(math.ceil(h / cell))
    grid: dict[tuple[int, int], int] = {}
    points = list(seed_points)
    r_sq = r * r

    def cell_of(p):
        return int(p[0] / cell), int(p[1] / cell)

    def fits(p):
        cx, cy = cell_of(p)
        for gy in range(max(0, cy - 2), min(gh, cy + 3)):
            for gx in range(max(0, cx - 2), min(gw, cx + 3)):
                j = grid.get((gx, gy))
                if j is not None:
                    dx = points[j][0] - p[0]
                    dy = points[j][1] - p[1]
                    if dx * dx + dy * dy < r_sq:
                        return False
        return True

    for i, p in enumerate(points):
        grid[cell_of(p)] = i

    active = list(range(len(points)))
    if not points:
        px, py = cand[int(rng.integers(cand.shape[0]))]
        jx, jy = rng.uniform(-0.499, 0.499, size=2)
        first = (float(px) + jx, float(py) + jy)
        points.append(first)
        grid[cell_of(first)] = 0
        active = [0]

    while active and len(points) < count:
        slot = int(rng.integers(len(active)))
        base = points[active[slot]]
        placed = False
        for _ in range(POISSON_ATTEMPTS):
            rho = r * (1.0 + rng.random())
            ang = 2.0 * math.pi * rng.random()
            p = (base[0] + rho * math.cos(ang), base[1] + rho * math.sin(ang))
            if not (0 <= p[0] < w and 0 <= p[1] < h):
                continue
            if not is_interior(*p):
                continue
            if fits(p):
                grid[cell_of(p)] = len(points)
                points.append(p)
                active.append(len(points) - 1)
                placed = True
                break
        if not placed:
            active.pop(slot)
    return points


def sample_structure_aware(
    mask: np.ndarray,
    m: int,
    contour_fraction: float = 0.8,
    rng: np.random.Generator | None = None,
) -> KeypointSet:
    """Sample m keypoints: uniform contour points plus Poisson disk interior.

    The contour share is round(contour_fraction * m) (half rounds up), the
    remainder comes from the interior; the default 0.8 split puts 24 of 30
    points on the contour.
    """
    if m < 3:
        raise ValidationError(f"need at least 3 keypoints, got m={m}")
    if not 0.0 <= contour_fraction <= 1.0:
        raise ValidationError(f"contour_fraction must be in [0, 1], got {contour_fraction}")
    if rng is None:
        rng = np.random.default_rng(0)
    n_c = int(math.floor(contour_fraction * m + 0.5))
    n_i = m - n_c
    contour = trace_contour(mask)
    boundary_pts = sample_contour_uniform(contour, count=n_c) if n_c else np.zeros((0, 2))
    interior_pts, _ = poisson_disk_interior(mask, n_i, rng)
    pts = np.vstack([boundary_pts, interior_pts])
    return KeypointSet(points=pts, n_contour=len(boundary_pts), n_interior=len(interior_pts))
