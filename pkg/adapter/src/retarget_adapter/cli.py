"""Adapter CLI: run one extractor per invocation, always ending in files
the main pipeline can read. ``--backend synthetic`` (default) needs no
model weights.
"""

from __future__ import annotations

import argparse
import sys

from . import extract, formats
from .formats import AdapterError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="retarget-adapter")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features-sd", help="diffusion U-Net features, one FGRID per layer")
    p.add_argument("--image", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--layers", default="1,2", help="comma-separated up-block indices")
    p.add_argument("--timestep", type=int, default=100)
    p.add_argument("--backend", default="synthetic", choices=["synthetic", "sd"])
    p.add_argument("--prefix", default="sd")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("features-dino", help="token features as one FGRID")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", default="synthetic", choices=["synthetic", "dinov2"])
    p.add_argument("--layer", type=int, default=11)

    p = sub.add_parser("mask", help="subject mask as PGM")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--point", help="x,y prompt")
    p.add_argument("--box", help="x0,y0,x1,y1 prompt")
    p.add_argument("--backend", default="synthetic", choices=["synthetic", "sam"])
    p.add_argument("--checkpoint", help="SAM weights path (sam backend)")

    p = sub.add_parser("tracks", help="keypoint trajectories as TRACKS")
    p.add_argument("--frames", required=True)
    p.add_argument("--keypoints", required=True, help="single-frame TRACKS file")
    p.add_argument("--out", required=True)
    p.add_argument("--backend", default="synthetic", choices=["synthetic", "cotracker"])
    return parser


def _prompt_from(args) -> dict:
    if args.point:
        x, y = (float(v) for v in args.point.split(","))
        return {"point": (x, y)}
    if args.box:
        return {"box": tuple(float(v) for v in args.box.split(","))}
    raise AdapterError("give --point x,y or --box x0,y0,x1,y1")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "features-sd":
            image = formats.read_image(args.image)
            layers = [int(v) for v in args.layers.split(",")]
            manifest = extract.extract_diffusion_features(
                image,
                args.out_dir,
                layers=layers,
                timestep=args.timestep,
                backend=args.backend,
                seed=args.seed,
                prefix=args.prefix,
            )
            print("\n".join(manifest.outputs))
        elif args.command == "features-dino":
            image = formats.read_image(args.image)
            extract.extract_dino_features(image, args.out, backend=args.backend, layer=args.layer)
            print(args.out)
        elif args.command == "mask":
            image = formats.read_image(args.image)
            extract.extract_mask(image, _prompt_from(args), args.out,
                                 backend=args.backend, checkpoint=args.checkpoint)
            print(args.out)
        elif args.command == "tracks":
            frames = formats.read_frames(args.frames)
            keypoints = formats.read_keypoints(args.keypoints)
            extract.extract_tracks(frames, keypoints, args.out, backend=args.backend)
            print(args.out)
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
