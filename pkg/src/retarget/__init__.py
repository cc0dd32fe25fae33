"""Keypoint-based motion retargeting toolkit.

Pipeline stages: structure-aware keypoint sampling on a subject mask,
semantic feature matching to a target subject, keypoint-sequence motion
transfer, thin-plate-spline frame warping, and temporal-attention guidance
math. Every stage reads and writes portable file formats (see tensorio),
so the whole pipeline runs and verifies without any neural backbone.
"""

__version__ = "0.1.0"
