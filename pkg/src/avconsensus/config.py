"""Pipeline configuration: a JSON file plus command-line overrides."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    input: str | None = None
    format: str = "delimited"
    sep: str = ","
    stopwords: str | None = None
    rules: str | None = None
    k: int = 200
    shingle_width: int = 4
    bands: int = 50
    rows: int = 4
    seed: int = 0
    corr_min: list[float] = field(default_factory=lambda: [0.2, 0.35, 0.5])
    max_iters: int = 20_000
    tol: float = 1e-10
    standardize: bool = False
    anonymize: bool = False
    salt: str = ""
    models_dir: str | None = None
    apps: list[str] = field(default_factory=list)
    out_dir: str = "out"

    def validate(self) -> "PipelineConfig":
        if self.format not in ("delimited", "json-lines"):
            raise ConfigError(f"format must be 'delimited' or 'json-lines', got {self.format!r}")
        if self.k < 1 or self.shingle_width < 1 or self.bands < 1 or self.rows < 1:
            raise ConfigError("k, shingle_width, bands and rows must be positive")
        if self.bands * self.rows != self.k:
            raise ConfigError(f"bands x rows = {self.bands * self.rows} must equal k = {self.k}")
        if not self.corr_min:
            raise ConfigError("at least one corr_min value is required")
        for c in self.corr_min:
            # values above 1 are accepted: they simply leave no edges
            if not (math.isfinite(c) and c >= 0):
                raise ConfigError(f"corr_min must be a non-negative number, got {c}")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        return self

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        try:
            doc = json.loads(Path(path).read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls().merged(doc)

    def merged(self, overrides: dict) -> "PipelineConfig":
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = asdict(self)
        data.update({k: v for k, v in overrides.items() if v is not None})
        cfg = PipelineConfig(**data)
        cfg.corr_min = [float(c) for c in cfg.corr_min]
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)
