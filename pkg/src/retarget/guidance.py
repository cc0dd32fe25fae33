"""Temporal-attention guidance math.

A temporal attention tensor A[p, c, i, j] holds, per spatial location p and
head c, the row-stochastic F x F matrix of frame-to-frame correlations. A
sparse mask keeps the top-k entries of each reference row; the guidance
energy is the masked squared difference between reference and generated
attention, and its analytic gradient feeds the guided-noise update
eps_hat = eps - lambda * grad. No network lives here: projections (or the
latent gradient) are supplied by the caller, or derived synthetically from
frames for desk-scale runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .matching import upsample_bilinear
from .tensorio import FeatureGrid, write_fgr4

ROW_SUM_TOL = 1e-5


@dataclass(frozen=True)
class GuidanceConfig:
    """Knobs of the guided sampling stage.

    Defaults follow the reference operating point: attention read at
    timestep 400, top-1 sparsification, 300 sampling steps with guidance on
    the first 180.
    """

    timestep: int = 400
    top_k: int = 1
    strength: float = 1.0
    total_steps: int = 300
    guided_steps: int = 180

    def validate(self, num_frames: int | None = None) -> None:
        if not 0 < self.guided_steps <= self.total_steps:
            raise ValidationError(
                f"guided steps {self.guided_steps} must be in (0, {self.total_steps}]"
            )
        if self.top_k < 1:
            raise ValidationError(f"top_k must be >= 1, got {self.top_k}")
        if num_frames is not None and self.top_k > num_frames:
            raise ValidationError(
                f"top_k {self.top_k} exceeds frame count {num_frames}"
            )


def _check_4d(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim != 4:
        raise ValidationError(f"{name} must be 4-D [P][C][F][..], got shape {arr.shape}")
    return arr


def temporal_attention(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Row-stochastic attention softmax_j(<q_i, k_j> / sqrt(d)) per (p, c).

    Inputs are [P][C][F][d]; the result is [P][C][F][F] float32. Logits are
    shifted by their row max before exponentiation.
    """
    q = _check_4d("q", q).astype(np.float64)
    k = _check_4d("k", k).astype(np.float64)
    if q.shape != k.shape:
        raise ValidationError(f"q shape {q.shape} != k shape {k.shape}")
    d = q.shape[3]
    if d < 1:
        raise ValidationError("projection dimension must be >= 1")
    logits = np.einsum("pcid,pcjd->pcij", q, k) / np.sqrt(d)
    logits -= logits.max(axis=3, keepdims=True)
    expd = np.exp(logits)
    return (expd / expd.sum(axis=3, keepdims=True)).astype(np.float32)


def validate_attention(attn: np.ndarray, tol: float = ROW_SUM_TOL) -> None:
    """Check non-negativity and the per-row normalization constraint."""
    attn = _check_4d("attention", attn)
    if attn.shape[2] != attn.shape[3]:
        raise ValidationError(f"attention slices must be square, got {attn.shape}")
    if np.any(attn < 0):
        raise ValidationError("attention has negative entries")
    sums = attn.sum(axis=3, dtype=np.float64)
    worst = float(np.abs(sums - 1.0).max())
    if worst > tol:
        raise ValidationError(f"attention rows must sum to 1; worst deviation {worst:g}")


def topk_mask(attn: np.ndarray, k: int) -> np.ndarray:
    """Binary mask of the k largest entries per (p, c, i) row.

    Ties break toward the smallest key-frame index, so each row has exactly
    k ones. Returned as float32 zeros/ones.
    """
    attn = _check_4d("attention", attn)
    num_frames = attn.shape[3]
    if not 1 <= k <= num_frames:
        raise ValidationError(f"k must be in [1, {num_frames}], got {k}")
    order = np.argsort(-attn, axis=3, kind="stable")
    mask = np.zeros(attn.shape, dtype=np.float32)
    np.put_along_axis(mask, order[..., :k], 1.0, axis=3)
    return mask


def guidance_energy(attn_ref: np.ndarray, attn_gen: np.ndarray, mask: np.ndarray) -> float:
    """Masked squared attention difference, accumulated in float64."""
    attn_ref, attn_gen, mask = _same_shape(attn_ref, attn_gen, mask)
    diff = (attn_ref.astype(np.float64) - attn_gen.astype(np.float64)) * mask
    return float(np.einsum("pcij,pcij->", diff, diff))


def guidance_gradient(attn_ref: np.ndarray, attn_gen: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """d energy / d attn_gen = 2 * mask * (attn_gen - attn_ref)."""
    attn_ref, attn_gen, mask = _same_shape(attn_ref, attn_gen, mask)
    grad = 2.0 * mask * (attn_gen.astype(np.float64) - attn_ref.astype(np.float64))
    return grad.astype(attn_gen.dtype)


def _same_shape(*arrays: np.ndarray) -> tuple[np.ndarray, ...]:
    arrays = tuple(_check_4d("tensor", a) for a in arrays)
    shapes = {a.shape for a in arrays}
    if len(shapes) > 1:
        raise ValidationError(f"shape mismatch: {sorted(shapes)}")
    return arrays


def guided_noise(eps: np.ndarray, grad_latent: np.ndarray, strength: float) -> np.ndarray:
    """Steered noise prediction eps - strength * grad, elementwise.

    ``grad_latent`` is the caller-supplied gradient of the energy with
    respect to the latent; backpropagating it through a network is out of
    scope here.
    """
    eps = np.asarray(eps)
    grad_latent = np.asarray(grad_latent)
    if eps.shape != grad_latent.shape:
        raise ValidationError(
            f"eps shape {eps.shape} != gradient shape {grad_latent.shape}"
        )
    return eps - strength * grad_latent


def projections_from_frames(frames: np.ndarray, attn_size: int = 8) -> np.ndarray:
    """Synthetic [P][1][F][1] projection tensor from raw frames.

    Each frame's gray image is bilinearly resampled to attn_size^2 cells;
    per cell, intensities are standardized over time so attention reflects
    which frames look alike at that location. Gives a deterministic Q = K
    stand-in when no denoiser is available to read attention from.
    """
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[3] != 3:
        raise ValidationError(f"frames must be F x H x W x 3, got {frames.shape}")
    if attn_size < 1:
        raise ValidationError(f"attn_size must be >= 1, got {attn_size}")
    num_frames = frames.shape[0]
    cells = np.empty((num_frames, attn_size, attn_size), dtype=np.float64)
    for t in range(num_frames):
        gray = frames[t].mean(axis=2, dtype=np.float64)[..., None].astype(np.float32)
        small = upsample_bilinear(FeatureGrid(gray), attn_size, attn_size)
        cells[t] = small.data[..., 0]
    flat = cells.reshape(num_frames, -1).T  # [P][F]
    mean = flat.mean(axis=1, keepdims=True)
    std = flat.std(axis=1, keepdims=True)
    standardized = np.divide(flat - mean, std, out=np.zeros_like(flat), where=std > 0)
    return standardized[:, None, :, None].astype(np.float32)


def guidance_pack(
    q: np.ndarray,
    k: np.ndarray,
    config: GuidanceConfig,
    attn_path,
    mask_path,
) -> tuple[np.ndarray, np.ndarray]:
    """Compute reference attention and its top-k mask; write both as FGR4."""
    attn = temporal_attention(q, k)
    config.validate(num_frames=attn.shape[2])
    validate_attention(attn)
    mask = topk_mask(attn, config.top_k)
    write_fgr4(attn, attn_path)
    write_fgr4(mask, mask_path)
    return attn, mask
