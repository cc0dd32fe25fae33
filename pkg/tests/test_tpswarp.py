import math

import numpy as np
import pytest

from retarget import tpswarp
from retarget.errors import NumericalError, ValidationError
from retarget.tensorio import Tracks


def random_controls(rng, m, spread=100.0):
    """Control sets with no duplicate and no collinear trio (retry until clean)."""
    while True:
        pts = rng.uniform(0, spread, (m, 2))
        d = pts[:, None] - pts[None]
        if (np.sqrt((d**2).sum(-1)) + np.eye(m) * 1e9).min() > 1e-3:
            p = np.hstack([pts, np.ones((m, 1))])
            if np.linalg.matrix_rank(p) == 3:
                return pts


class TestKernel:
    def test_zero_by_continuity(self):
        assert tpswarp.tps_kernel(0.0) == 0.0

    def test_unit_radius_is_zero(self):
        assert tpswarp.tps_kernel(1.0) == 0.0

    def test_radius_two(self):
        assert tpswarp.tps_kernel(2.0) == pytest.approx(4.0 * math.log(4.0), rel=1e-12)

    def test_vectorized(self):
        out = tpswarp.tps_kernel(np.array([0.0, 1.0, 2.0]))
        assert out[0] == 0.0 and out[1] == 0.0 and out[2] > 0


class TestFit:
    def test_identity_interpolant(self, rng):
        centers = random_controls(rng, 10)
        t = tpswarp.tps_fit(centers, centers, 0.0)
        assert np.abs(t.weights).max() <= 1e-9
        assert np.abs(t.affine - [[1, 0, 0], [0, 1, 0]]).max() <= 1e-9

    def test_affine_reproduction(self, rng):
        centers = random_controls(rng, 12)
        affine = np.array([[1.3, -0.2, 7.0], [0.5, 0.8, -3.0]])
        targets = np.hstack([centers, np.ones((12, 1))]) @ affine.T
        t = tpswarp.tps_fit(centers, targets, 0.0)
        assert np.abs(t.weights).max() <= 1e-8 * np.abs(targets).max()
        probes = rng.uniform(-100, 200, (1000, 2))
        expected = np.hstack([probes, np.ones((1000, 1))]) @ affine.T
        assert np.abs(tpswarp.tps_eval(t, probes) - expected).max() <= 1e-6
        assert tpswarp.bending_energy(t) == pytest.approx(0.0, abs=1e-8)

    def test_side_conditions_hold(self, rng):
        centers = random_controls(rng, 15)
        targets = centers + rng.normal(scale=4.0, size=centers.shape)
        t = tpswarp.tps_fit(centers, targets, 0.0)
        scale = np.abs(t.weights).max() + 1.0
        assert np.abs(t.weights.sum(axis=0)).max() <= 1e-8 * scale
        moment = (t.weights[:, None, :] * centers[:, :, None]).sum(axis=0)
        assert np.abs(moment).max() <= 1e-8 * scale * np.abs(centers).max()

    def test_displaced_square_corner_matches_longdouble_solve(self):
        centers = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        targets = centers.copy()
        targets[2] += (0.5, 0.0)
        t = tpswarp.tps_fit(centers, targets, 0.0)
        got = tpswarp.tps_eval(t, np.array([0.5, 0.5]))
        expected = _longdouble_tps_eval(centers, targets, np.array([0.5, 0.5]))
        assert np.abs(got - expected).max() < 1e-9

    def test_duplicate_centers_rejected_with_indices(self):
        centers = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 2.0]])
        with pytest.raises(NumericalError, match="0 and 1"):
            tpswarp.tps_fit(centers, centers, 0.0)

    def test_collinear_centers_rejected(self):
        centers = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        with pytest.raises(NumericalError, match="collinear"):
            tpswarp.tps_fit(centers, centers, 0.0)

    def test_lambda_never_increases_bending_energy(self, rng):
        for _ in range(10):
            centers = random_controls(rng, 12)
            targets = centers + rng.normal(scale=5.0, size=centers.shape)
            energies = [
                tpswarp.bending_energy(tpswarp.tps_fit(centers, targets, lam))
                for lam in (0.0, 1e-4, 1e-2, 1.0, 100.0)
            ]
            for a, b in zip(energies, energies[1:]):
                assert b <= a + 1e-9 * max(1.0, a)

    def test_interpolation_exactness_lambda_zero(self, rng):
        for m in (3, 7, 40):
            centers = random_controls(rng, m)
            targets = centers + rng.normal(scale=6.0, size=centers.shape)
            t = tpswarp.tps_fit(centers, targets, 0.0)
            assert np.abs(tpswarp.tps_eval(t, centers) - targets).max() <= 1e-6


def _longdouble_tps_eval(centers, targets, probe):
    """Independent solve of the same spline system in extended precision."""
    m = len(centers)
    centers = centers.astype(np.longdouble)
    targets = targets.astype(np.longdouble)

    def kernel(r):
        return np.where(r > 0, 2.0 * r * r * np.log(r, where=r > 0, out=np.zeros_like(r)), 0.0)

    d = centers[:, None] - centers[None]
    k = kernel(np.sqrt((d**2).sum(-1)))
    p = np.hstack([centers, np.ones((m, 1), np.longdouble)])
    a = np.zeros((m + 3, m + 3), np.longdouble)
    a[:m, :m] = k
    a[:m, m:] = p
    a[m:, :m] = p.T
    rhs = np.zeros((m + 3, 2), np.longdouble)
    rhs[:m] = targets
    sol = _gauss_solve(a, rhs)
    w, aff = sol[:m], sol[m:]
    r = np.sqrt(((centers - probe.astype(np.longdouble)) ** 2).sum(-1))
    return np.asarray(
        probe @ aff[:2] + aff[2] + kernel(r) @ w, dtype=np.float64
    )


def _gauss_solve(a, b):
    """Plain Gaussian elimination with partial pivoting (no numpy.linalg)."""
    a = a.copy()
    b = b.copy()
    n = len(a)
    for col in range(n):
        pivot = col + int(np.argmax(np.abs(a[col:, col])))
        if a[pivot, col] == 0:
            raise ZeroDivisionError("singular")
        if pivot != col:
            a[[col, pivot]] = a[[pivot, col]]
            b[[col, pivot]] = b[[pivot, col]]
        for row in range(col + 1, n):
            f = a[row, col] / a[col, col]
            a[row, col:] -= f * a[col, col:]
            b[row] -= f * b[col]
    x = np.zeros_like(b)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - a[row, row + 1 :] @ x[row + 1 :]) / a[row, row]
    return x


class TestEval:
    def test_identity_transform(self, rng):
        centers = random_controls(rng, 8)
        t = tpswarp.tps_fit(centers, centers, 0.0)
        probes = rng.uniform(0, 100, (50, 2))
        assert np.abs(tpswarp.tps_eval(t, probes) - probes).max() < 1e-9

    def test_reversed_summation_agrees(self, rng):
        centers = random_controls(rng, 20)
        targets = centers + rng.normal(scale=3.0, size=centers.shape)
        t = tpswarp.tps_fit(centers, targets, 0.0)
        probes = rng.uniform(-20, 120, (100, 2))
        got = tpswarp.tps_eval(t, probes)
        for probe, out in zip(probes, got):
            r = np.sqrt(((t.centers - probe) ** 2).sum(-1))
            terms = tpswarp.tps_kernel(r)[:, None] * t.weights
            reversed_sum = terms[::-1].sum(axis=0) + t.affine @ [probe[0], probe[1], 1.0]
            assert np.abs(out - reversed_sum).max() < 1e-9


class TestBackwardField:
    def test_identity_pairs_identity_field(self, rng):
        pts = random_controls(rng, 6, spread=18.0)
        field = tpswarp.build_backward_field(pts, pts, 20, 20, 0.0)
        xs, ys = np.meshgrid(np.arange(20), np.arange(20))
        assert np.abs(field - np.stack([xs, ys], -1)).max() < 1e-9

    def test_pure_translation_field(self, rng):
        pts = random_controls(rng, 6, spread=18.0)
        field = tpswarp.build_backward_field(pts, pts + [10.0, 0.0], 20, 20, 0.0)
        xs, ys = np.meshgrid(np.arange(20), np.arange(20))
        assert np.abs(field - np.stack([xs + 10.0, ys], -1)).max() < 1e-9

    def test_square_to_trapezoid_interpolates_corners(self):
        target = np.array([[2.0, 2.0], [17.0, 2.0], [17.0, 17.0], [2.0, 17.0]])
        ref = np.array([[4.0, 3.0], [15.0, 2.0], [18.0, 16.0], [1.0, 17.0]])
        field = tpswarp.build_backward_field(target, ref, 20, 20, 0.0)
        for (tx, ty), expected in zip(target.astype(int), ref):
            assert np.abs(field[ty, tx] - expected).max() < 1e-6


class TestWarpFrame:
    def test_identity_field_is_byte_identical(self, rng):
        frame = rng.integers(0, 256, (16, 18, 3)).astype(np.uint8)
        xs, ys = np.meshgrid(np.arange(18), np.arange(16))
        out = tpswarp.warp_frame(frame, np.stack([xs, ys], -1).astype(np.float64))
        assert np.array_equal(out, frame)

    def test_translation_moves_single_bright_pixel(self):
        frame = np.zeros((30, 30, 3), np.uint8)
        frame[20, 20] = 255
        xs, ys = np.meshgrid(np.arange(30), np.arange(30))
        field = np.stack([xs + 10.0, ys + 0.0], -1)
        out = tpswarp.warp_frame(frame, field)
        assert out[20, 10].tolist() == [255, 255, 255]
        assert out.sum() == 765

    def test_all_out_of_bounds_fills(self, rng):
        frame = rng.integers(0, 256, (5, 5, 3)).astype(np.uint8)
        field = np.full((5, 5, 2), -50.0)
        out = tpswarp.warp_frame(frame, field, fill=(1, 2, 3))
        assert (out == [1, 2, 3]).all()

    def test_masked_mode_requires_mask(self, rng):
        frame = rng.integers(0, 256, (4, 4, 3)).astype(np.uint8)
        field = np.zeros((4, 4, 2))
        with pytest.raises(ValidationError, match="mask"):
            tpswarp.warp_frame(frame, field, mode="masked")

    def test_masked_mode_drops_background_sources(self, rng):
        frame = rng.integers(100, 256, (8, 8, 3)).astype(np.uint8)
        mask = np.zeros((8, 8), bool)
        mask[:, :4] = True
        xs, ys = np.meshgrid(np.arange(8), np.arange(8))
        field = np.stack([xs, ys], -1).astype(np.float64)
        out = tpswarp.warp_frame(frame, field, mode="masked", ref_mask=mask, fill=(0, 0, 0))
        assert (out[:, :4] == frame[:, :4]).all()
        assert (out[:, 4:] == 0).all()


class TestWarpSequence:
    def _tracks(self, pts, frames):
        seq = np.stack([pts] * frames)
        return Tracks(seq, np.ones(seq.shape[:2], bool))

    def test_identical_tracks_reproduce_frames(self, rng):
        frames = rng.integers(0, 256, (3, 20, 20, 3)).astype(np.uint8)
        pts = random_controls(rng, 5, spread=18.0)
        tracks = self._tracks(pts, 3)
        out = tpswarp.warp_sequence(frames, tracks, tracks, lam=0.0)
        assert np.array_equal(out, frames)

    def test_static_input_static_output(self, rng):
        frame = rng.integers(0, 256, (20, 20, 3)).astype(np.uint8)
        frames = np.stack([frame] * 4)
        ref = self._tracks(random_controls(rng, 6, spread=18.0), 4)
        tar = Tracks(ref.points + [2.0, 1.0], ref.visible.copy())
        out = tpswarp.warp_sequence(frames, ref, tar, lam=0.0)
        assert (out[0] == out[1]).all() and (out[1] == out[3]).all()

    def test_scaled_keypoints_scale_disk_area(self):
        size, radius, scale = 64, 10.0, 1.3
        ys, xs = np.mgrid[0:size, 0:size]
        disk = ((xs - 32) ** 2 + (ys - 32) ** 2) <= radius**2
        frame = np.repeat(np.where(disk, 220, 10).astype(np.uint8)[..., None], 3, axis=2)
        frames = np.stack([frame] * 2)

        angles = np.linspace(0, 2 * math.pi, 12, endpoint=False)
        ring = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        ref_pts = 32.0 + radius * ring
        ref_pts = np.vstack([ref_pts, [[32.0, 32.0]]])
        tar_pts = 32.0 + scale * radius * ring
        tar_pts = np.vstack([tar_pts, [[32.0, 32.0]]])
        out = tpswarp.warp_sequence(
            frames, self._tracks(ref_pts, 2), self._tracks(tar_pts, 2), lam=0.0
        )
        area_in = int(disk.sum())
        area_out = int((out[0].mean(axis=2) > 115).sum())
        assert abs(area_out / area_in - scale**2) < 0.10 * scale**2

    def test_fewer_than_three_usable_points_rejected(self, rng):
        frames = rng.integers(0, 256, (2, 10, 10, 3)).astype(np.uint8)
        pts = random_controls(rng, 5, spread=9.0)
        ref = self._tracks(pts, 2)
        visible = np.ones((2, 5), bool)
        visible[1, :3] = False
        tar = Tracks(ref.points.copy(), visible)
        with pytest.raises(NumericalError, match="usable control points"):
            tpswarp.warp_sequence(frames, ref, tar, lam=0.0)

    def test_duplicate_matched_targets_are_dropped_not_fatal(self, rng):
        frames = rng.integers(0, 256, (1, 12, 12, 3)).astype(np.uint8)
        ref_pts = random_controls(rng, 5, spread=10.0)
        tar_pts = ref_pts.copy()
        tar_pts[3] = tar_pts[0]  # many-to-one match
        out = tpswarp.warp_sequence(
            frames, self._tracks(ref_pts, 1), self._tracks(tar_pts, 1), lam=0.0
        )
        assert out.shape == frames.shape
