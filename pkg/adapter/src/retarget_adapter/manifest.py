"""Extraction manifest: what ran, on what, producing which files.

Plain JSON with keys: sources (input paths), model (identifier string),
layers (ints, empty when not layered), outputs (path -> sha256). Model
choices live here, never inside the exported formats, so the consumer
stays model-agnostic.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .formats import AdapterError


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class ExtractionManifest:
    sources: list[str]
    model: str
    layers: list[int] = field(default_factory=list)
    outputs: dict[str, str] = field(default_factory=dict)

    def add_output(self, path) -> None:
        self.outputs[str(path)] = sha256_file(path)

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(
                {
                    "sources": self.sources,
                    "model": self.model,
                    "layers": self.layers,
                    "outputs": self.outputs,
                },
                indent=2,
                sort_keys=True,
            )
            + "\n"
        )

    @classmethod
    def load(cls, path) -> "ExtractionManifest":
        data = json.loads(Path(path).read_text())
        return cls(
            sources=list(data["sources"]),
            model=data["model"],
            layers=list(data["layers"]),
            outputs=dict(data["outputs"]),
        )

    def verify(self) -> None:
        """Every referenced output exists and its content hash still matches."""
        for out_path, digest in self.outputs.items():
            p = Path(out_path)
            if not p.exists():
                raise AdapterError(f"manifest output missing: {out_path}")
            if sha256_file(p) != digest:
                raise AdapterError(f"manifest output changed on disk: {out_path}")
