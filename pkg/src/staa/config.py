"""Run configuration with a flat key=value file format.

Every source of randomness flows from the explicit seeds here, so a
persisted config re-run reproduces identical numeric outputs.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields

from .errors import ConfigError
from .model import ModelConfig


@dataclass
class RunConfig:
    # model
    embed_dim: int = 32
    heads: int = 4
    layers: int = 2
    classes: int = 10
    max_frames: int = 8
    max_patches: int = 4
    model_seed: int = 0
    # clip generation
    clip_seed: int = 7
    pattern: str = "moving-square"
    frames: int = 8
    height: int = 32
    width: int = 32
    # attribution enhancement
    lam: float = 1.0
    enhance: bool = True
    # SHAP
    segments: int = 8
    shap_mode: str = "exact"  # exact | monte-carlo | monte-carlo-literal
    mc_samples: int = 2000
    shap_seed: int = 0
    # LIME
    lime_frames: int = 8
    perturbations: int = 1000
    reg: float = 0.01
    lime_seed: int = 0
    # metrics
    mask_ratio: float = 0.7
    faithfulness_mode: str = "literal"  # literal | drop
    # output
    out_dir: str = ""

    def __post_init__(self):
        if not self.out_dir:
            self.out_dir = os.environ.get("STAA_OUT_DIR", ".")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            embed_dim=self.embed_dim, heads=self.heads, layers=self.layers,
            classes=self.classes, max_frames=self.max_frames,
            max_patches=self.max_patches, seed=self.model_seed,
        )

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            for key, value in asdict(self).items():
                fh.write(f"{key}={value}\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        values: dict = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, _, raw = line.partition("=")
                key = key.strip()
                raw = raw.strip()
                if key not in types:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                kind = types[key]
                if kind == "bool" or kind is bool:
                    values[key] = raw.lower() in ("1", "true", "yes")
                elif kind == "int" or kind is int:
                    values[key] = int(raw)
                elif kind == "float" or kind is float:
                    values[key] = float(raw)
                else:
                    values[key] = raw
        return cls(**values)
