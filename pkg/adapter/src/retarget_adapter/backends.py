"""Feature / mask / track backends.

``synthetic`` is pure numpy and fully deterministic: it exists so the
export pipeline can run and be verified on machines without model weights.
The real backends wrap pretrained models behind guarded imports and are
selected with ``backend="sd"/"dinov2"/"sam"/"cotracker"``.
"""

from __future__ import annotations

import hashlib
import math
from collections import deque

import numpy as np

from .formats import AdapterError

SD_MODEL = "runwayml/stable-diffusion-v1-5"
DINO_MODEL = "dinov2_vitb14"
SAM_CHECKPOINT = "sam_vit_b"
COTRACKER_MODEL = "cotracker3_offline"
DEFAULT_SD_LAYERS = (1, 2)  # U-Net upsampling blocks commonly used for features
DINO_LAYER = 11


def _gray(image: np.ndarray) -> np.ndarray:
    return np.asarray(image, dtype=np.float64).mean(axis=2)


def _box_mean(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Average-pool an image onto a coarse grid (uneven tails folded in)."""
    h, w = img.shape
    ys = np.linspace(0, h, out_h + 1).astype(int)
    xs = np.linspace(0, w, out_w + 1).astype(int)
    out = np.empty((out_h, out_w), dtype=np.float64)
    for row in range(out_h):
        for col in range(out_w):
            patch = img[ys[row] : max(ys[row + 1], ys[row] + 1),
                        xs[col] : max(xs[col + 1], xs[col] + 1)]
            out[row, col] = patch.mean()
    return out


# --------------------------------------------------------------------------
# synthetic backend


def synthetic_feature_grid(
    image: np.ndarray, channels: int, stride: int, seed_tag: str
) -> np.ndarray:
    """Deterministic stand-in features: pooled intensity + gradients, mixed
    by a projection seeded from ``seed_tag`` so different layers differ."""
    gray = _gray(image)
    out_h = max(1, gray.shape[0] // stride)
    out_w = max(1, gray.shape[1] // stride)
    pooled = _box_mean(gray, out_h, out_w)
    gx = np.gradient(pooled, axis=1)
    gy = np.gradient(pooled, axis=0)
    local = np.stack([pooled / 255.0, gx / 255.0, gy / 255.0, pooled**2 / 255.0**2], axis=2)
    # process-independent seed (builtin hash() is salted per interpreter run)
    seed = int.from_bytes(hashlib.sha256(seed_tag.encode()).digest()[:4], "little")
    proj = np.random.default_rng(seed).normal(size=(4, channels))
    return (local.reshape(-1, 4) @ proj).reshape(out_h, out_w, channels).astype(np.float32)


def synthetic_diffusion_features(
    image: np.ndarray, layers, timestep: int, channels: int = 16
) -> dict[int, np.ndarray]:
    return {
        layer: synthetic_feature_grid(
            image, channels, stride=2 ** (int(layer) + 2), seed_tag=f"sd:{layer}:{timestep}"
        )
        for layer in layers
    }


def synthetic_dino_features(image: np.ndarray, channels: int = 12) -> np.ndarray:
    return synthetic_feature_grid(image, channels, stride=14, seed_tag=f"dino:{DINO_LAYER}")


def synthetic_mask(image: np.ndarray, prompt: dict) -> np.ndarray:
    """Color-similarity flood: the 8-connected region around the prompt whose
    color stays within a tolerance of the prompt pixel's color."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    if "point" in prompt:
        px, py = (int(round(v)) for v in prompt["point"])
    elif "box" in prompt:
        x0, y0, x1, y1 = prompt["box"]
        px, py = int(round((x0 + x1) / 2)), int(round((y0 + y1) / 2))
    else:
        raise AdapterError("prompt needs a 'point' or a 'box'")
    if not (0 <= px < w and 0 <= py < h):
        raise AdapterError(f"prompt point ({px}, {py}) outside the {w}x{h} image")
    tol = float(prompt.get("tolerance", 40.0))
    ref_color = img[py, px]
    close = np.sqrt(((img - ref_color) ** 2).sum(axis=2)) <= tol
    mask = np.zeros((h, w), dtype=bool)
    queue = deque([(py, px)])
    mask[py, px] = True
    while queue:
        y, x = queue.popleft()
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and close[ny, nx] and not mask[ny, nx]:
                    mask[ny, nx] = True
                    queue.append((ny, nx))
    return mask


def synthetic_tracks(
    frames: np.ndarray, keypoints: np.ndarray, patch: int = 9, search: int = 5
) -> tuple[np.ndarray, np.ndarray]:
    """Integer-displacement SSD patch tracker; exact on static clips.

    Offsets are tried nearest-first so SSD ties (flat regions) hold the
    point instead of drifting toward a scan corner.
    """
    gray = np.asarray(frames, dtype=np.float64).mean(axis=3)
    num_frames, h, w = gray.shape
    pts = np.asarray(keypoints, dtype=np.float64).reshape(-1, 2)
    m = len(pts)
    half = patch // 2
    offsets = sorted(
        ((dx, dy) for dy in range(-search, search + 1) for dx in range(-search, search + 1)),
        key=lambda o: (o[0] * o[0] + o[1] * o[1], o[1], o[0]),
    )
    positions = np.empty((num_frames, m, 2))
    visible = np.ones((num_frames, m), dtype=bool)
    positions[0] = pts
    cur = pts.copy()
    for t in range(1, num_frames):
        for i in range(m):
            cx, cy = int(round(cur[i, 0])), int(round(cur[i, 1]))
            if not (half <= cx < w - half and half <= cy < h - half):
                visible[t, i] = False
                positions[t, i] = cur[i]
                continue
            template = gray[t - 1, cy - half : cy + half + 1, cx - half : cx + half + 1]
            best, best_d = None, math.inf
            for dx, dy in offsets:
                ny, nx = cy + dy, cx + dx
                if not (half <= nx < w - half and half <= ny < h - half):
                    continue
                cand = gray[t, ny - half : ny + half + 1, nx - half : nx + half + 1]
                d = float(((cand - template) ** 2).sum())
                if d < best_d:
                    best_d, best = d, (dx, dy)
            if best is None:
                visible[t, i] = False
                positions[t, i] = cur[i]
                continue
            cur[i] += best
            positions[t, i] = cur[i]
    return positions, visible


# --------------------------------------------------------------------------
# real backends (guarded imports; weights required)


def _need(module: str, extra: str):
    raise AdapterError(
        f"backend needs {module}; install the adapter's [{extra}] extra and model weights, "
        f"or use backend='synthetic'"
    )


def torch_diffusion_features(image, layers, timestep, model_id=SD_MODEL, seed=0):
    """DDIM-invert the image and read U-Net up-block features at ``timestep``."""
    try:
        import torch
        from diffusers import DDIMInverseScheduler, DDIMScheduler, StableDiffusionPipeline
    except ImportError:
        _need("torch + diffusers", "real")

    device = "cuda" if torch.cuda.is_available() else "cpu"
    pipe = StableDiffusionPipeline.from_pretrained(model_id, safety_checker=None)
    pipe = pipe.to(device)
    pipe.scheduler = DDIMScheduler.from_config(pipe.scheduler.config)
    inverse = DDIMInverseScheduler.from_config(pipe.scheduler.config)

    img = torch.from_numpy(np.asarray(image, np.float32) / 127.5 - 1.0)
    img = img.permute(2, 0, 1)[None].to(device)
    with torch.no_grad():
        latents = pipe.vae.encode(img).latent_dist.mean * pipe.vae.config.scaling_factor
        prompt_embeds = pipe._encode_prompt("", device, 1, False, None)

        inverse.set_timesteps(50, device=device)
        torch.manual_seed(seed)
        for t in inverse.timesteps:
            if t > timestep:
                break
            noise_pred = pipe.unet(latents, t, encoder_hidden_states=prompt_embeds).sample
            latents = inverse.step(noise_pred, t, latents).prev_sample

        captured = {}
        hooks = [
            pipe.unet.up_blocks[i].register_forward_hook(
                lambda _m, _i, out, idx=i: captured.__setitem__(idx, out)
            )
            for i in layers
        ]
        pipe.unet(latents, timestep, encoder_hidden_states=prompt_embeds)
        for hook in hooks:
            hook.remove()
    return {
        i: captured[i][0].permute(1, 2, 0).float().cpu().numpy() for i in layers
    }


def torch_dino_features(image, layer=DINO_LAYER, model_name=DINO_MODEL):
    """Patch-token features from the requested DINOv2 block."""
    try:
        import torch
    except ImportError:
        _need("torch", "real")
    model = torch.hub.load("facebookresearch/dinov2", model_name)
    model.eval()
    img = np.asarray(image, np.float32) / 255.0
    img = (img - [0.485, 0.456, 0.406]) / [0.229, 0.224, 0.225]
    h, w = (s - s % 14 for s in img.shape[:2])
    tensor = torch.from_numpy(img[:h, :w].transpose(2, 0, 1))[None].float()
    with torch.no_grad():
        feats = model.get_intermediate_layers(tensor, n=[layer], reshape=True)[0]
    return feats[0].permute(1, 2, 0).cpu().numpy()


def sam_mask(image, prompt, checkpoint_path=None):
    """Highest-scoring SAM mask for a point or box prompt."""
    try:
        import torch  # noqa: F401
        from segment_anything import SamPredictor, sam_model_registry
    except ImportError:
        _need("torch + segment-anything", "real")
    if checkpoint_path is None:
        raise AdapterError("sam backend needs --checkpoint pointing at SAM weights")
    sam = sam_model_registry[SAM_CHECKPOINT](checkpoint=checkpoint_path)
    predictor = SamPredictor(sam)
    predictor.set_image(np.asarray(image, np.uint8))
    if "point" in prompt:
        masks, scores, _ = predictor.predict(
            point_coords=np.asarray([prompt["point"]], np.float32),
            point_labels=np.array([1]),
        )
    else:
        masks, scores, _ = predictor.predict(box=np.asarray(prompt["box"], np.float32))
    return masks[int(np.argmax(scores))].astype(bool)


def cotracker_tracks(frames, keypoints, model_name=COTRACKER_MODEL):
    """Point trajectories from CoTracker, queried at frame 0."""
    try:
        import torch
    except ImportError:
        _need("torch", "real")
    model = torch.hub.load("facebookresearch/co-tracker", model_name)
    model.eval()
    video = torch.from_numpy(np.asarray(frames, np.float32)).permute(0, 3, 1, 2)[None]
    pts = np.asarray(keypoints, np.float64).reshape(-1, 2)
    queries = torch.from_numpy(
        np.hstack([np.zeros((len(pts), 1)), pts]).astype(np.float32)
    )[None]
    with torch.no_grad():
        tracks, visibility = model(video, queries=queries)
    return tracks[0].cpu().numpy(), visibility[0].cpu().numpy() > 0.5
