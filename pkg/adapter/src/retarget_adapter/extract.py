"""The four extraction operations, each ending in portable files."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import backends
from .formats import AdapterError, write_fgrid, write_mask_pgm, write_tracks
from .manifest import ExtractionManifest


def extract_diffusion_features(
    image: np.ndarray,
    out_dir,
    layers=backends.DEFAULT_SD_LAYERS,
    timestep: int = 100,
    backend: str = "synthetic",
    model_id: str = backends.SD_MODEL,
    seed: int = 0,
    prefix: str = "sd",
) -> ExtractionManifest:
    """One FGRID per U-Net layer, plus a manifest, under ``out_dir``."""
    layers = [int(v) for v in layers]
    if backend == "synthetic":
        grids = backends.synthetic_diffusion_features(image, layers, timestep)
        model = f"synthetic:{timestep}"
    elif backend == "sd":
        grids = backends.torch_diffusion_features(image, layers, timestep, model_id, seed)
        model = f"{model_id}@t{timestep}"
    else:
        raise AdapterError(f"unknown feature backend {backend!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = ExtractionManifest(sources=[], model=model, layers=layers)
    for layer, grid in grids.items():
        path = out_dir / f"{prefix}_layer{layer}.fgrid"
        write_fgrid(grid, path)
        manifest.add_output(path)
    manifest.save(out_dir / f"{prefix}_manifest.json")
    return manifest


def extract_dino_features(
    image: np.ndarray,
    out_path,
    backend: str = "synthetic",
    layer: int = backends.DINO_LAYER,
) -> ExtractionManifest:
    if backend == "synthetic":
        grid = backends.synthetic_dino_features(image)
        model = f"synthetic:dino{layer}"
    elif backend == "dinov2":
        grid = backends.torch_dino_features(image, layer)
        model = f"{backends.DINO_MODEL}:layer{layer}"
    else:
        raise AdapterError(f"unknown token-feature backend {backend!r}")
    write_fgrid(grid, out_path)
    manifest = ExtractionManifest(sources=[], model=model, layers=[layer])
    manifest.add_output(out_path)
    return manifest


def extract_mask(
    image: np.ndarray,
    prompt: dict,
    out_path,
    backend: str = "synthetic",
    checkpoint=None,
) -> ExtractionManifest:
    if backend == "synthetic":
        mask = backends.synthetic_mask(image, prompt)
        model = "synthetic:flood"
    elif backend == "sam":
        mask = backends.sam_mask(image, prompt, checkpoint)
        model = backends.SAM_CHECKPOINT
    else:
        raise AdapterError(f"unknown mask backend {backend!r}")
    if not mask.any():
        raise AdapterError("segmentation produced an empty mask")
    write_mask_pgm(mask, out_path)
    manifest = ExtractionManifest(sources=[], model=model)
    manifest.add_output(out_path)
    return manifest


def extract_tracks(
    frames: np.ndarray,
    keypoints: np.ndarray,
    out_path,
    backend: str = "synthetic",
) -> ExtractionManifest:
    if backend == "synthetic":
        points, visible = backends.synthetic_tracks(frames, keypoints)
        model = "synthetic:ssd"
    elif backend == "cotracker":
        points, visible = backends.cotracker_tracks(frames, keypoints)
        model = backends.COTRACKER_MODEL
    else:
        raise AdapterError(f"unknown track backend {backend!r}")
    if np.abs(points[0] - np.asarray(keypoints, np.float64)).max() > 0.5:
        raise AdapterError("tracker output frame 0 does not match the query keypoints")
    write_tracks(points, visible, out_path)
    manifest = ExtractionManifest(sources=[], model=model)
    manifest.add_output(out_path)
    return manifest
