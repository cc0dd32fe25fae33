"""Pipeline configuration: defaults, file parsing, validation.

Config files are plain ``key=value`` text ('#' comments and blank lines
allowed); CLI flags override file values. The schema is the field list of
PipelineConfig below plus the path keys consumed by the run command
(frames, ref_mask, tar_mask, ref_low, tar_low, ref_high, tar_high, tracks,
out). Multi-file values are comma-separated.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ValidationError
from .guidance import GuidanceConfig


@dataclass
class PipelineConfig:
    """Every tunable of the pipeline, defaulting to the reference settings:
    30 keypoints split 24 contour / 6 interior, contour interval 200 px in
    interval mode, attention timestep 400 with top-1 masking, 300 sampling
    steps with the first 180 guided.
    """

    m: int = 30
    contour_fraction: float = 0.8
    contour_mode: str = "count"  # "count" or "interval"
    interval: float = 200.0
    n_pca: int = 64
    fusion: str = "both"
    tps_lambda: float | None = None  # None = relative conditioning default
    track_patch: int = 11
    track_search: int = 15
    warp_mode: str = "full"
    retarget_mode: str = "keypoint"
    tau: int = 400
    top_k: int = 1
    guidance_strength: float = 1.0
    total_steps: int = 300
    guided_steps: int = 180
    attn_size: int = 8
    seed: int = 0
    threads: int = 1

    def validate(self) -> None:
        if self.m < 3:
            raise ValidationError(f"m must be >= 3, got {self.m}")
        if not 0.0 <= self.contour_fraction <= 1.0:
            raise ValidationError(
                f"contour_fraction must be in [0, 1], got {self.contour_fraction}"
            )
        if self.contour_mode not in ("count", "interval"):
            raise ValidationError(f"contour_mode must be count or interval")
        if self.interval <= 0:
            raise ValidationError(f"interval must be positive, got {self.interval}")
        if self.n_pca < 1:
            raise ValidationError(f"n_pca must be >= 1, got {self.n_pca}")
        if self.fusion not in ("both", "low", "high"):
            raise ValidationError(f"fusion must be both, low, or high")
        if self.tps_lambda is not None and self.tps_lambda < 0:
            raise ValidationError(f"tps_lambda must be >= 0, got {self.tps_lambda}")
        if self.track_patch % 2 != 1 or self.track_patch < 3:
            raise ValidationError(f"track_patch must be odd and >= 3")
        if self.track_search < 1:
            raise ValidationError(f"track_search must be >= 1")
        if self.warp_mode not in ("full", "masked"):
            raise ValidationError(f"warp_mode must be full or masked")
        if self.retarget_mode not in ("keypoint", "resize", "none"):
            raise ValidationError(f"retarget_mode must be keypoint, resize, or none")
        if self.attn_size < 1:
            raise ValidationError(f"attn_size must be >= 1")
        if self.threads < 1:
            raise ValidationError(f"threads must be >= 1")
        self.guidance().validate()

    def guidance(self) -> GuidanceConfig:
        return GuidanceConfig(
            timestep=self.tau,
            top_k=self.top_k,
            strength=self.guidance_strength,
            total_steps=self.total_steps,
            guided_steps=self.guided_steps,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}
PATH_KEYS = (
    "frames",
    "ref_mask",
    "tar_mask",
    "ref_low",
    "tar_low",
    "ref_high",
    "tar_high",
    "tracks",
    "out",
)


def parse_config_text(text: str, source: str = "<config>") -> tuple[PipelineConfig, dict]:
    """Parse key=value text into a config plus the path entries."""
    cfg = PipelineConfig()
    paths: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{source}: line {lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in PATH_KEYS:
            paths[key] = value
            continue
        if key not in _FIELD_TYPES:
            raise ValidationError(f"{source}: line {lineno}: unknown key {key!r}")
        setattr(cfg, key, _coerce(key, value, source, lineno))
    return cfg, paths


def _coerce(key: str, value: str, source: str, lineno: int):
    spec = _FIELD_TYPES[key]
    try:
        if spec in ("int", int):
            return int(value)
        if spec in ("float", float):
            return float(value)
        if "float | None" in str(spec):
            return None if value.lower() in ("none", "") else float(value)
        return value
    except ValueError:
        raise ValidationError(
            f"{source}: line {lineno}: bad value {value!r} for {key}"
        ) from None


def load_config(path) -> tuple[PipelineConfig, dict]:
    path = Path(path)
    return parse_config_text(path.read_text(), source=str(path))


def dump_config(cfg: PipelineConfig, paths: dict | None = None) -> str:
    lines = [f"{f.name}={getattr(cfg, f.name)}" for f in fields(PipelineConfig)]
    for key in PATH_KEYS:
        if paths and key in paths:
            lines.append(f"{key}={paths[key]}")
    return "\n".join(lines) + "\n"
