"""Extraction adapter for the motion-retarget pipeline.

Thin scripts that run pretrained backbones (diffusion U-Net features,
DINOv2 tokens, SAM masks, CoTracker point tracks) and dump the results in
the pipeline's portable formats: FGRID feature grids, PGM masks, and
TRACKS trajectories. A deterministic ``synthetic`` backend exercises the
same export paths without any model weights.
"""

__version__ = "0.1.0"
