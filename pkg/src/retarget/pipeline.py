"""Stage orchestration behind the CLI.

Each stage function reads and writes the portable artifact formats, so any
stage can be re-run in isolation or replaced by an external tool that
speaks the same formats. ``run_pipeline`` chains them and emits a manifest
of content hashes for reproducibility checks.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from . import __version__, guidance, matching, motionseq, sampling, tensorio, tpswarp
from .config import PATH_KEYS, PipelineConfig, dump_config
from .errors import ValidationError


def stage_sample(mask_path, cfg: PipelineConfig, out_path) -> sampling.KeypointSet:
    """Sample structure-aware keypoints from a mask into a 1-frame TRACKS file."""
    mask = tensorio.read_mask_pgm(mask_path)
    rng = np.random.default_rng(cfg.seed)
    if cfg.contour_mode == "interval":
        contour = sampling.trace_contour(mask)
        boundary = sampling.sample_contour_uniform(contour, interval=cfg.interval)
        n_interior = max(0, cfg.m - len(boundary))
        interior, _ = sampling.poisson_disk_interior(mask, n_interior, rng)
        kps = sampling.KeypointSet(
            points=np.vstack([boundary, interior]),
            n_contour=len(boundary),
            n_interior=len(interior),
        )
    else:
        kps = sampling.sample_structure_aware(mask, cfg.m, cfg.contour_fraction, rng)
    tensorio.write_tracks(tensorio.keypoints_to_tracks(kps.points), out_path)
    return kps


def stage_match(
    ref_low_paths: list,
    tar_low_paths: list,
    ref_high_path,
    tar_high_path,
    keypoints_path,
    tar_mask_path,
    cfg: PipelineConfig,
    out_path,
) -> matching.Correspondence:
    """Match sampled keypoints into the target image; write a 1-frame TRACKS."""
    tar_mask = tensorio.read_mask_pgm(tar_mask_path)
    keypoints = tensorio.read_tracks(keypoints_path).points[0]
    ref_low = [tensorio.read_fgrid(p) for p in ref_low_paths]
    tar_low = [tensorio.read_fgrid(p) for p in tar_low_paths]
    ref_high = tensorio.read_fgrid(ref_high_path) if ref_high_path else None
    tar_high = tensorio.read_fgrid(tar_high_path) if tar_high_path else None
    height, width = tar_mask.shape
    fused_ref, fused_tar = matching.reduce_and_fuse(
        ref_low, tar_low, ref_high, tar_high, cfg.n_pca, height, width, cfg.fusion
    )
    corr = matching.match_keypoints(fused_ref, fused_tar, keypoints, tar_mask)
    tensorio.write_tracks(tensorio.keypoints_to_tracks(corr.points), out_path)
    return corr


def stage_track(
    frames_dir,
    keypoints_path,
    cfg: PipelineConfig,
    out_path,
    external_tracks=None,
) -> tensorio.Tracks:
    """Track keypoints through the frames, or validate external tracker output."""
    frames = tensorio.read_frames_ppm(frames_dir)
    keypoints = tensorio.read_tracks(keypoints_path).points[0]
    if external_tracks is not None:
        tracks = tensorio.read_tracks(external_tracks)
        if tracks.num_frames != len(frames):
            raise ValidationError(
                f"external tracks have {tracks.num_frames} frames, video has {len(frames)}"
            )
        if tracks.num_points != len(keypoints):
            raise ValidationError(
                f"external tracks have {tracks.num_points} points, expected {len(keypoints)}"
            )
        if np.abs(tracks.points[0] - keypoints).max() > 0.5:
            raise ValidationError("external tracks frame 0 does not match the keypoints")
    else:
        tracks = motionseq.track_keypoints_ncc(
            frames, keypoints, patch=cfg.track_patch, search=cfg.track_search
        )
    tensorio.write_tracks(tracks, out_path)
    return tracks


def stage_retarget(
    ref_tracks_path, matched_path, cfg: PipelineConfig, out_path
) -> tensorio.Tracks:
    """Build the target keypoint sequence (mode: keypoint, resize, or none)."""
    ref_seq = tensorio.read_tracks(ref_tracks_path)
    target0 = tensorio.read_tracks(matched_path).points[0]
    if cfg.retarget_mode == "none":
        out = tensorio.Tracks(ref_seq.points.copy(), ref_seq.visible.copy())
    elif cfg.retarget_mode == "resize":
        out = _resize_sequence(ref_seq, target0)
    else:
        out = motionseq.build_target_sequence(ref_seq, target0)
    tensorio.write_tracks(out, out_path)
    return out


def _resize_sequence(ref_seq: tensorio.Tracks, target0: np.ndarray) -> tensorio.Tracks:
    """Ablation variant: axis-aligned bounding-box scale and shift only."""
    if target0.shape[0] != ref_seq.num_points:
        raise ValidationError("target set and reference sequence differ in point count")
    ref0 = ref_seq.points[0]
    ref_min, ref_max = ref0.min(axis=0), ref0.max(axis=0)
    tar_min, tar_max = target0.min(axis=0), target0.max(axis=0)
    span = ref_max - ref_min
    scale = np.where(span > 0, (tar_max - tar_min) / np.where(span > 0, span, 1.0), 1.0)
    pts = (ref_seq.points - ref_min) * scale + tar_min
    return tensorio.Tracks(pts, ref_seq.visible.copy())


def stage_warp(
    frames_dir,
    ref_tracks_path,
    tar_tracks_path,
    cfg: PipelineConfig,
    out_dir,
    ref_mask_path=None,
) -> np.ndarray:
    """Warp every frame so reference keypoints land on target keypoints."""
    frames = tensorio.read_frames_ppm(frames_dir)
    ref_seq = tensorio.read_tracks(ref_tracks_path)
    tar_seq = tensorio.read_tracks(tar_tracks_path)
    ref_mask = tensorio.read_mask_pgm(ref_mask_path) if ref_mask_path else None
    warped = tpswarp.warp_sequence(
        frames, ref_seq, tar_seq, lam=cfg.tps_lambda, mode=cfg.warp_mode, ref_mask=ref_mask
    )
    tensorio.write_frames_ppm(warped, out_dir)
    return warped


def stage_guidance_pack(
    cfg: PipelineConfig,
    attn_path,
    mask_path,
    frames_dir=None,
    q_path=None,
    k_path=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Package reference attention and its top-k mask as FGR4 artifacts."""
    if q_path is not None or k_path is not None:
        if q_path is None or k_path is None:
            raise ValidationError("give both projection files or neither")
        q = tensorio.read_fgr4(q_path)
        k = tensorio.read_fgr4(k_path)
    elif frames_dir is not None:
        frames = tensorio.read_frames_ppm(frames_dir)
        q = guidance.projections_from_frames(frames, cfg.attn_size)
        k = q
    else:
        raise ValidationError("guidance pack needs projection files or a frames dir")
    return guidance.guidance_pack(q, k, cfg.guidance(), attn_path, mask_path)


# --------------------------------------------------------------------------
# full run


def run_pipeline(cfg: PipelineConfig, paths: dict, out_dir, resume: bool = False) -> Path:
    """Execute all stages in order and write a manifest of content hashes.

    Required path keys: frames, ref_mask, tar_mask, ref_low, tar_low, out
    (out may be overridden by ``out_dir``). Optional: ref_high/tar_high
    (needed unless fusion=low), tracks (external tracker output). With
    ``resume``, stages whose outputs already exist are skipped.
    """
    cfg.validate()
    for key in ("frames", "ref_mask", "tar_mask", "ref_low", "tar_low"):
        if key not in paths:
            raise ValidationError(f"config is missing required path {key!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "diagnostics").mkdir(exist_ok=True)

    kp_path = out / "keypoints.tracks"
    matched_path = out / "matched.tracks"
    ref_tracks_path = out / "ref.tracks"
    tar_tracks_path = out / "tar.tracks"
    warp_dir = out / "warped"
    attn_path = out / "attention.fgr4"
    attn_mask_path = out / "attention_mask.fgr4"

    def fresh(p: Path) -> bool:
        return not (resume and p.exists())

    if fresh(kp_path):
        stage_sample(paths["ref_mask"], cfg, kp_path)
    if fresh(matched_path):
        stage_match(
            paths["ref_low"].split(","),
            paths["tar_low"].split(","),
            paths.get("ref_high"),
            paths.get("tar_high"),
            kp_path,
            paths["tar_mask"],
            cfg,
            matched_path,
        )
    if fresh(ref_tracks_path):
        stage_track(paths["frames"], kp_path, cfg, ref_tracks_path, paths.get("tracks"))
    if fresh(tar_tracks_path):
        stage_retarget(ref_tracks_path, matched_path, cfg, tar_tracks_path)
    if fresh(warp_dir / "frame_0000.ppm"):
        stage_warp(
            paths["frames"],
            ref_tracks_path,
            tar_tracks_path,
            cfg,
            warp_dir,
            paths["ref_mask"] if cfg.warp_mode == "masked" else None,
        )
    if fresh(attn_path):
        stage_guidance_pack(cfg, attn_path, attn_mask_path, frames_dir=warp_dir)

    _write_overlays(paths["frames"], ref_tracks_path, out / "diagnostics", "ref")
    _write_overlays(warp_dir, tar_tracks_path, out / "diagnostics", "tar")

    manifest = out / "manifest.txt"
    _write_manifest(manifest, cfg, paths, out)
    return manifest


def _write_overlays(frames_dir, tracks_path, diag_dir, prefix: str) -> None:
    frames = tensorio.read_frames_ppm(frames_dir)
    tracks = tensorio.read_tracks(tracks_path)
    color = (255, 40, 40) if prefix == "ref" else (40, 255, 40)
    n = min(len(frames), tracks.num_frames)
    for t in range(n):
        frame = frames[t].copy()
        for (x, y), vis in zip(tracks.points[t], tracks.visible[t]):
            draw_marker(frame, x, y, color if vis else (255, 255, 40))
        tensorio.write_ppm(frame, Path(diag_dir) / f"{prefix}_{t:04d}.ppm")


def draw_marker(frame: np.ndarray, x: float, y: float, color) -> None:
    """5-px cross centered at (x, y), clipped to the frame."""
    h, w = frame.shape[:2]
    cx, cy = int(round(x)), int(round(y))
    for d in range(-2, 3):
        if 0 <= cy < h and 0 <= cx + d < w:
            frame[cy, cx + d] = color
        if 0 <= cy + d < h and 0 <= cx < w:
            frame[cy + d, cx] = color


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return digest.hexdigest()


def _write_manifest(manifest_path: Path, cfg: PipelineConfig, paths: dict, out: Path) -> None:
    lines = [f"version={__version__}"]
    lines += [f"config.{ln}" for ln in dump_config(cfg).strip().splitlines()]
    for key in PATH_KEYS:
        if key in paths:
            p = Path(paths[key])
            if p.is_file():
                lines.append(f"input.{key}={sha256_file(p)}")
            elif p.is_dir():
                for f in sorted(p.glob("*")):
                    if f.is_file():
                        lines.append(f"input.{key}/{f.name}={sha256_file(f)}")
    for f in sorted(out.rglob("*")):
        if f.is_file() and f != manifest_path:
            lines.append(f"artifact.{f.relative_to(out).as_posix()}={sha256_file(f)}")
    manifest_path.write_text("\n".join(lines) + "\n")
