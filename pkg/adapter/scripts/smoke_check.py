#!/usr/bin/env python3
"""Cross-component smoke check: run every extractor (synthetic backend) on a
small generated scene and verify each export parses under the main
package's readers and passes its invariants.

Usage: python scripts/smoke_check.py [WORK_DIR]
Exit 0 when every check passes.
"""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

import numpy as np

from retarget_adapter import extract, formats

failures = []


def check(name: str, condition: bool, detail: str = "") -> None:
    mark = "PASS" if condition else "FAIL"
    print(f"[SMOKE] {name}: {mark}{'' if condition else ' - ' + detail}")
    if not condition:
        failures.append(name)


def scene(work: Path) -> tuple[Path, Path]:
    """A bright square drifting over a dark background, as PPM files."""
    frames = np.full((6, 48, 48, 3), 20, np.uint8)
    for t in range(6):
        x0 = 10 + 2 * t
        frames[t, 14:30, x0 : x0 + 16] = (200, 180, 160)
    frames_dir = work / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(frames):
        h, w = frame.shape[:2]
        (frames_dir / f"frame_{t:04d}.ppm").write_bytes(
            f"P6\n{w} {h}\n255\n".encode() + frame.tobytes()
        )
    first = frames_dir / "frame_0000.ppm"
    return frames_dir, first


def main() -> int:
    try:
        from retarget import tensorio
    except ImportError:
        print("[SMOKE] main package not installed; cannot cross-check", file=sys.stderr)
        return 1

    work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="adapter_smoke_"))
    frames_dir, image_path = scene(work)
    image = formats.read_image(image_path)

    # diffusion-style features
    manifest = extract.extract_diffusion_features(image, work / "feats", layers=(1, 2))
    manifest.verify()
    for out_path in manifest.outputs:
        grid = tensorio.read_fgrid(out_path)
        check(f"fgrid parses ({Path(out_path).name})", grid.channels > 0)
        check(
            f"fgrid finite ({Path(out_path).name})",
            bool(np.isfinite(grid.data).all()),
        )

    # rerun determinism
    again = extract.extract_diffusion_features(image, work / "feats2", layers=(1, 2))
    check(
        "feature extraction deterministic",
        list(again.outputs.values()) == list(manifest.outputs.values()),
        "hashes differ between runs",
    )

    # token features
    dino_path = work / "dino.fgrid"
    extract.extract_dino_features(image, dino_path)
    dino = tensorio.read_fgrid(dino_path)
    check("dino fgrid parses", dino.channels > 0)
    check("dino fgrid finite", bool(np.isfinite(dino.data).all()))

    # mask
    mask_path = work / "mask.pgm"
    extract.extract_mask(image, {"point": (18.0, 20.0)}, mask_path)
    mask = tensorio.read_mask_pgm(mask_path)
    check("mask parses and nonempty", bool(mask.any()))
    area = mask.mean()
    check("mask area sane", 0.01 <= area <= 0.99, f"area fraction {area:.3f}")

    # tracks
    kp_path = work / "kp.tracks"
    keypoints = np.array([[14.0, 18.0], [22.0, 22.0], [18.0, 27.0]])
    tensorio.write_tracks(tensorio.keypoints_to_tracks(keypoints), kp_path)
    tracks_path = work / "ref.tracks"
    extract.extract_tracks(
        formats.read_frames(frames_dir), formats.read_keypoints(kp_path), tracks_path
    )
    tracks = tensorio.read_tracks(tracks_path)
    check("tracks parse", tracks.num_frames == 6 and tracks.num_points == 3)
    check(
        "tracks frame 0 equals keypoints",
        bool(np.abs(tracks.points[0] - keypoints).max() <= 0.5),
    )

    print(f"[SMOKE] artifacts under {work}")
    if failures:
        print(f"[SMOKE] {len(failures)} check(s) failed", file=sys.stderr)
        return 1
    print("[SMOKE] all checks passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
