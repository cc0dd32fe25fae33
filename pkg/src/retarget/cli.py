"""Command-line interface.

One subcommand per pipeline stage plus an end-to-end ``run``. Exit codes:
0 success, 2 invalid arguments or configuration, 3 numerical failure
(degenerate geometry, singular spline), 4 I/O or malformed file.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__, fixture, pipeline
from .config import PipelineConfig, load_config
from .errors import FileFormatError, NumericalError, ValidationError

_OVERRIDES = (
    ("m", int),
    ("contour_fraction", float),
    ("contour_mode", str),
    ("interval", float),
    ("n_pca", int),
    ("fusion", str),
    ("tps_lambda", float),
    ("track_patch", int),
    ("track_search", int),
    ("warp_mode", str),
    ("retarget_mode", str),
    ("tau", int),
    ("top_k", int),
    ("guidance_strength", float),
    ("total_steps", int),
    ("guided_steps", int),
    ("attn_size", int),
    ("seed", int),
    ("threads", int),
)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file; flags override it")
    for name, typ in _OVERRIDES:
        parser.add_argument(f"--{name.replace('_', '-')}", type=typ, default=None)


def _build_config(args) -> tuple[PipelineConfig, dict]:
    if args.config:
        cfg, paths = load_config(args.config)
    else:
        cfg, paths = PipelineConfig(), {}
    for name, _ in _OVERRIDES:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    cfg.validate()
    return cfg, paths


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="retarget",
        description="Keypoint-based motion retargeting pipeline on portable file formats.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="sample structure-aware keypoints from a mask")
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    p = sub.add_parser("match", help="match keypoints into the target image")
    p.add_argument("--ref-low", required=True, help="comma-separated FGRID files")
    p.add_argument("--tar-low", required=True, help="comma-separated FGRID files")
    p.add_argument("--ref-high")
    p.add_argument("--tar-high")
    p.add_argument("--keypoints", required=True)
    p.add_argument("--tar-mask", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    p = sub.add_parser("track", help="track keypoints through the frames")
    p.add_argument("--frames", required=True)
    p.add_argument("--keypoints", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tracks", help="external tracker output to validate and adopt")
    _add_config_flags(p)

    p = sub.add_parser("retarget", help="build the target keypoint sequence")
    p.add_argument("--ref-tracks", required=True)
    p.add_argument("--matched", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    p = sub.add_parser("warp", help="warp frames onto the target keypoints")
    p.add_argument("--frames", required=True)
    p.add_argument("--ref-tracks", required=True)
    p.add_argument("--tar-tracks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ref-mask", help="needed for --warp-mode masked")
    _add_config_flags(p)

    p = sub.add_parser("guidance-pack", help="package attention and top-k mask as FGR4")
    p.add_argument("--frames", help="derive synthetic projections from these frames")
    p.add_argument("--q", help="FGR4 query projections")
    p.add_argument("--k", help="FGR4 key projections")
    p.add_argument("--out-attn", required=True)
    p.add_argument("--out-mask", required=True)
    _add_config_flags(p)

    p = sub.add_parser("run", help="run every stage and write a manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides config 'out')")
    p.add_argument("--resume", action="store_true", help="skip stages whose outputs exist")
    for name, typ in _OVERRIDES:
        p.add_argument(f"--{name.replace('_', '-')}", type=typ, default=None)

    p = sub.add_parser("make-fixture", help="write the synthetic moving-disk fixture")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _dispatch(args) -> None:
    if args.command == "make-fixture":
        paths = fixture.write_fixture(args.out, seed=args.seed)
        print(paths["config"])
        return

    cfg, paths = _build_config(args)
    if args.command == "sample":
        kps = pipeline.stage_sample(args.mask, cfg, args.out)
        print(f"{kps.m} keypoints ({kps.n_contour} contour + {kps.n_interior} interior) -> {args.out}")
    elif args.command == "match":
        corr = pipeline.stage_match(
            args.ref_low.split(","),
            args.tar_low.split(","),
            args.ref_high,
            args.tar_high,
            args.keypoints,
            args.tar_mask,
            cfg,
            args.out,
        )
        print(f"matched {len(corr.indices)} keypoints -> {args.out}")
    elif args.command == "track":
        tracks = pipeline.stage_track(args.frames, args.keypoints, cfg, args.out, args.tracks)
        print(f"{tracks.num_frames} frames x {tracks.num_points} points -> {args.out}")
    elif args.command == "retarget":
        out = pipeline.stage_retarget(args.ref_tracks, args.matched, cfg, args.out)
        print(f"target sequence {out.num_frames} x {out.num_points} -> {args.out}")
    elif args.command == "warp":
        warped = pipeline.stage_warp(
            args.frames, args.ref_tracks, args.tar_tracks, cfg, args.out, args.ref_mask
        )
        print(f"{len(warped)} warped frames -> {args.out}")
    elif args.command == "guidance-pack":
        attn, mask = pipeline.stage_guidance_pack(
            cfg, args.out_attn, args.out_mask, args.frames, args.q, args.k
        )
        print(f"attention {attn.shape} -> {args.out_attn}, mask -> {args.out_mask}")
    elif args.command == "run":
        out_dir = args.out or paths.get("out")
        if not out_dir:
            raise ValidationError("no output directory: pass --out or set out= in the config")
        manifest = pipeline.run_pipeline(cfg, paths, out_dir, resume=args.resume)
        print(manifest)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _dispatch(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except (FileFormatError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
