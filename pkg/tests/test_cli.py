import numpy as np
import pytest

from retarget import cli, fixture, tensorio
from retarget.config import PipelineConfig, parse_config_text
from retarget.errors import ValidationError
from retarget.tensorio import FeatureGrid, Tracks


@pytest.fixture(scope="module")
def fixture_paths(tmp_path_factory):
    root = tmp_path_factory.mktemp("fixture")
    return fixture.write_fixture(root)


class TestConfig:
    def test_defaults(self):
        cfg = PipelineConfig()
        assert cfg.m == 30 and cfg.contour_fraction == 0.8
        assert cfg.interval == 200.0 and cfg.n_pca == 64
        assert cfg.tau == 400 and cfg.top_k == 1
        assert cfg.total_steps == 300 and cfg.guided_steps == 180
        cfg.validate()

    def test_parse_overrides_and_paths(self):
        cfg, paths = parse_config_text("m=12\n# comment\nseed=9\nframes=/x/y\n")
        assert cfg.m == 12 and cfg.seed == 9
        assert paths == {"frames": "/x/y"}

    def test_unknown_key_rejected(self):
        with pytest.raises(ValidationError, match="unknown key"):
            parse_config_text("bogus=1\n")

    def test_bad_value_reports_line(self):
        with pytest.raises(ValidationError, match="line 2"):
            parse_config_text("m=10\nseed=abc\n")

    def test_m_below_three_rejected(self):
        cfg, _ = parse_config_text("m=2\n")
        with pytest.raises(ValidationError):
            cfg.validate()


class TestSampleCommand:
    def test_default_split_on_fixture_mask(self, fixture_paths, tmp_path, capsys):
        out = tmp_path / "kp.tracks"
        code = cli.main(["sample", "--mask", fixture_paths["ref_mask"], "--out", str(out)])
        assert code == 0
        assert "30 keypoints (24 contour + 6 interior)" in capsys.readouterr().out
        assert tensorio.read_tracks(out).num_points == 30

    def test_m10_split(self, fixture_paths, tmp_path, capsys):
        out = tmp_path / "kp.tracks"
        code = cli.main(
            ["sample", "--mask", fixture_paths["ref_mask"], "--out", str(out), "--m", "10"]
        )
        assert code == 0
        assert "10 keypoints (8 contour + 2 interior)" in capsys.readouterr().out

    def test_fixed_seed_reproduces_bytes(self, fixture_paths, tmp_path):
        out_a, out_b = tmp_path / "a.tracks", tmp_path / "b.tracks"
        for out in (out_a, out_b):
            assert (
                cli.main(
                    ["sample", "--mask", fixture_paths["ref_mask"], "--out", str(out), "--seed", "5"]
                )
                == 0
            )
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_missing_mask_is_io_error(self, tmp_path):
        code = cli.main(["sample", "--mask", str(tmp_path / "nope.pgm"), "--out", str(tmp_path / "o")])
        assert code == 4


class TestMatchCommand:
    def test_identical_features_match_identity(self, tmp_path, rng):
        data = rng.normal(size=(10, 10, 5)).astype(np.float32)
        ref_path, tar_path = tmp_path / "r.fgrid", tmp_path / "t.fgrid"
        tensorio.write_fgrid(FeatureGrid(data), ref_path)
        tensorio.write_fgrid(FeatureGrid(data.copy()), tar_path)
        mask_path = tmp_path / "m.pgm"
        tensorio.write_mask_pgm(np.ones((10, 10), bool), mask_path)
        kp_path = tmp_path / "kp.tracks"
        kps = np.array([[2.0, 3.0], [7.0, 7.0], [4.0, 8.0]])
        tensorio.write_tracks(tensorio.keypoints_to_tracks(kps), kp_path)
        out = tmp_path / "matched.tracks"
        code = cli.main(
            [
                "match",
                "--ref-low", str(ref_path),
                "--tar-low", str(tar_path),
                "--keypoints", str(kp_path),
                "--tar-mask", str(mask_path),
                "--out", str(out),
                "--n-pca", "4",
                "--fusion", "low",
            ]
        )
        assert code == 0
        assert np.array_equal(tensorio.read_tracks(out).points[0], kps)

    def test_missing_mask_file_is_io_error(self, tmp_path, rng):
        ref_path = tmp_path / "r.fgrid"
        tensorio.write_fgrid(FeatureGrid(rng.normal(size=(4, 4, 3)).astype(np.float32)), ref_path)
        code = cli.main(
            [
                "match",
                "--ref-low", str(ref_path),
                "--tar-low", str(ref_path),
                "--keypoints", str(tmp_path / "nope.tracks"),
                "--tar-mask", str(tmp_path / "nope.pgm"),
                "--out", str(tmp_path / "o"),
            ]
        )
        assert code == 4


class TestTrackCommand:
    def test_external_tracks_adopted(self, fixture_paths, tmp_path):
        kp_path = tmp_path / "kp.tracks"
        assert cli.main(["sample", "--mask", fixture_paths["ref_mask"], "--out", str(kp_path)]) == 0
        kps = tensorio.read_tracks(kp_path)
        external = tmp_path / "ext.tracks"
        seq = np.repeat(kps.points, fixture.NUM_FRAMES, axis=0).reshape(
            fixture.NUM_FRAMES, -1, 2
        )
        tensorio.write_tracks(Tracks(seq, np.ones(seq.shape[:2], bool)), external)
        out = tmp_path / "ref.tracks"
        code = cli.main(
            [
                "track",
                "--frames", fixture_paths["frames"],
                "--keypoints", str(kp_path),
                "--tracks", str(external),
                "--out", str(out),
            ]
        )
        assert code == 0
        assert tensorio.read_tracks(out).num_frames == fixture.NUM_FRAMES

    def test_external_tracks_frame0_mismatch_rejected(self, fixture_paths, tmp_path):
        kp_path = tmp_path / "kp.tracks"
        assert cli.main(["sample", "--mask", fixture_paths["ref_mask"], "--out", str(kp_path)]) == 0
        kps = tensorio.read_tracks(kp_path)
        external = tmp_path / "ext.tracks"
        seq = np.repeat(kps.points + 3.0, fixture.NUM_FRAMES, axis=0).reshape(
            fixture.NUM_FRAMES, -1, 2
        )
        tensorio.write_tracks(Tracks(seq, np.ones(seq.shape[:2], bool)), external)
        code = cli.main(
            [
                "track",
                "--frames", fixture_paths["frames"],
                "--keypoints", str(kp_path),
                "--tracks", str(external),
                "--out", str(tmp_path / "o.tracks"),
            ]
        )
        assert code == 2


class TestRetargetCommand:
    def _write_pair(self, tmp_path, rng, frames=5, points=6):
        base = rng.uniform(10, 50, (points, 2))
        seq = np.stack([base + [2.0 * t, 1.0 * t] for t in range(frames)])
        ref = tmp_path / "ref.tracks"
        tensorio.write_tracks(Tracks(seq, np.ones((frames, points), bool)), ref)
        matched = tmp_path / "matched.tracks"
        tensorio.write_tracks(tensorio.keypoints_to_tracks(base + [30.0, 5.0]), matched)
        return ref, matched, seq

    def test_translation_is_transferred(self, tmp_path, rng):
        ref, matched, seq = self._write_pair(tmp_path, rng)
        out = tmp_path / "tar.tracks"
        assert (
            cli.main(["retarget", "--ref-tracks", str(ref), "--matched", str(matched), "--out", str(out)])
            == 0
        )
        tar = tensorio.read_tracks(out)
        expected = seq + [30.0, 5.0]
        assert np.abs(tar.points - expected).max() < 1e-6

    def test_mode_none_copies_reference(self, tmp_path, rng):
        ref, matched, seq = self._write_pair(tmp_path, rng)
        out = tmp_path / "tar.tracks"
        assert (
            cli.main(
                [
                    "retarget",
                    "--ref-tracks", str(ref),
                    "--matched", str(matched),
                    "--out", str(out),
                    "--retarget-mode", "none",
                ]
            )
            == 0
        )
        assert np.array_equal(tensorio.read_tracks(out).points, seq)

    def test_mode_resize_maps_bounding_box(self, tmp_path, rng):
        ref, matched, seq = self._write_pair(tmp_path, rng)
        out = tmp_path / "tar.tracks"
        assert (
            cli.main(
                [
                    "retarget",
                    "--ref-tracks", str(ref),
                    "--matched", str(matched),
                    "--out", str(out),
                    "--retarget-mode", "resize",
                ]
            )
            == 0
        )
        tar = tensorio.read_tracks(out)
        matched_pts = tensorio.read_tracks(matched).points[0]
        assert np.abs(tar.points[0].min(0) - matched_pts.min(0)).max() < 1e-9
        assert np.abs(tar.points[0].max(0) - matched_pts.max(0)).max() < 1e-9


class TestWarpCommand:
    def test_fewer_than_three_visible_is_numerical_error(self, tmp_path, rng):
        frames_dir = tmp_path / "frames"
        tensorio.write_frames_ppm(
            rng.integers(0, 256, (2, 12, 12, 3)).astype(np.uint8), frames_dir
        )
        pts = np.array([[2.0, 2.0], [9.0, 3.0], [5.0, 9.0], [8.0, 8.0]])
        seq = np.stack([pts] * 2)
        visible = np.ones((2, 4), bool)
        visible[1, :2] = False
        ref, tar = tmp_path / "ref.tracks", tmp_path / "tar.tracks"
        tensorio.write_tracks(Tracks(seq, np.ones((2, 4), bool)), ref)
        tensorio.write_tracks(Tracks(seq.copy(), visible), tar)
        code = cli.main(
            [
                "warp",
                "--frames", str(frames_dir),
                "--ref-tracks", str(ref),
                "--tar-tracks", str(tar),
                "--out", str(tmp_path / "warped"),
            ]
        )
        assert code == 3

    def test_identity_tracks_reproduce_frames(self, tmp_path, rng):
        frames = rng.integers(0, 256, (2, 12, 12, 3)).astype(np.uint8)
        frames_dir = tmp_path / "frames"
        tensorio.write_frames_ppm(frames, frames_dir)
        pts = np.array([[2.0, 2.0], [9.0, 3.0], [5.0, 9.0]])
        seq = np.stack([pts] * 2)
        tracks_path = tmp_path / "t.tracks"
        tensorio.write_tracks(Tracks(seq, np.ones((2, 3), bool)), tracks_path)
        out_dir = tmp_path / "warped"
        code = cli.main(
            [
                "warp",
                "--frames", str(frames_dir),
                "--ref-tracks", str(tracks_path),
                "--tar-tracks", str(tracks_path),
                "--out", str(out_dir),
                "--tps-lambda", "0",
            ]
        )
        assert code == 0
        assert np.array_equal(tensorio.read_frames_ppm(out_dir), frames)


class TestGuidancePackCommand:
    def test_pack_from_frames(self, fixture_paths, tmp_path):
        attn_path = tmp_path / "a.fgr4"
        mask_path = tmp_path / "m.fgr4"
        code = cli.main(
            [
                "guidance-pack",
                "--frames", fixture_paths["frames"],
                "--out-attn", str(attn_path),
                "--out-mask", str(mask_path),
                "--attn-size", "4",
            ]
        )
        assert code == 0
        attn = tensorio.read_fgr4(attn_path)
        mask = tensorio.read_fgr4(mask_path)
        assert attn.shape == (16, 1, fixture.NUM_FRAMES, fixture.NUM_FRAMES)
        assert (mask.sum(axis=3) == 1).all()

    def test_needs_some_input(self, tmp_path):
        code = cli.main(
            ["guidance-pack", "--out-attn", str(tmp_path / "a"), "--out-mask", str(tmp_path / "m")]
        )
        assert code == 2


class TestRunCommand:
    def test_validation_failure_before_stages(self, fixture_paths, tmp_path):
        out_dir = tmp_path / "out"
        code = cli.main(["run", "--config", fixture_paths["config"], "--out", str(out_dir), "--m", "2"])
        assert code == 2
        assert not out_dir.exists() or not any(out_dir.iterdir())

    def test_full_run_and_rerun_are_byte_identical(self, fixture_paths, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out_dir in (out_a, out_b):
            assert cli.main(["run", "--config", fixture_paths["config"], "--out", str(out_dir)]) == 0
        manifest_a = (out_a / "manifest.txt").read_bytes()
        manifest_b = (out_b / "manifest.txt").read_bytes()
        assert manifest_a == manifest_b
        warped_a = sorted((out_a / "warped").glob("*.ppm"))
        warped_b = sorted((out_b / "warped").glob("*.ppm"))
        assert [p.read_bytes() for p in warped_a] == [p.read_bytes() for p in warped_b]

    def test_stage_outputs_feed_next_stage(self, fixture_paths, tmp_path):
        out_dir = tmp_path / "out"
        assert cli.main(["run", "--config", fixture_paths["config"], "--out", str(out_dir)]) == 0
        for name in ("keypoints", "matched", "ref", "tar"):
            tensorio.read_tracks(out_dir / f"{name}.tracks")
        tensorio.read_frames_ppm(out_dir / "warped")
        attn = tensorio.read_fgr4(out_dir / "attention.fgr4")
        assert attn.shape[2] == fixture.NUM_FRAMES
        assert (out_dir / "diagnostics" / "ref_0000.ppm").exists()

    def test_artifacts_independent_of_thread_count(self, fixture_paths, tmp_path):
        outs = []
        for threads in ("1", "2"):
            out_dir = tmp_path / f"t{threads}"
            assert (
                cli.main(
                    ["run", "--config", fixture_paths["config"], "--out", str(out_dir), "--threads", threads]
                )
                == 0
            )
            manifest = (out_dir / "manifest.txt").read_text()
            outs.append([ln for ln in manifest.splitlines() if ln.startswith("artifact.")])
        assert outs[0] == outs[1]

    def test_resume_skips_existing_stage_outputs(self, fixture_paths, tmp_path):
        out_dir = tmp_path / "out"
        assert cli.main(["run", "--config", fixture_paths["config"], "--out", str(out_dir)]) == 0
        kp = out_dir / "keypoints.tracks"
        stamp = kp.stat().st_mtime_ns
        assert (
            cli.main(["run", "--config", fixture_paths["config"], "--out", str(out_dir), "--resume"])
            == 0
        )
        assert kp.stat().st_mtime_ns == stamp  # stage was not recomputed

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["--version"])
        assert exc.value.code == 0
