"""Pipeline configuration (a single JSON file)."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ValidationError

INPUT_KEYS = ("blocks", "boundary", "chaco", "antennas", "cdr", "housing", "households",
              "sei_schema", "providers", "label_map", "street_nodes", "street_edges")


@dataclass
class PipelineConfig:
    inputs: dict
    output_dir: str = "out"
    projection: dict = field(default_factory=lambda: {"lon0": -64.0, "lat0": -32.0, "lat1": -24.0, "lat2": -40.0})
    seed: int = 0
    alpha: float = 1.0
    beta: float = 1.0
    speed_kmh: float = 5.0
    knn_k: int = 10
    sample_points: int = 5
    night_window: dict = field(default_factory=lambda: {
        "start_hour": 20, "end_hour": 6, "evening_days": [0, 1, 2, 3], "morning_days": [1, 2, 3, 4]})
    min_edge_calls: int = 1
    include_self: str = "fallback"
    selection: dict = field(default_factory=lambda: {
        "min_block_pop": 350, "min_density": 350, "extreme_percentile": 0.95, "top_n": 3})
    autoencoder: dict = field(default_factory=lambda: {
        "hidden": None, "dropout": 0.5, "epochs": 40, "batch": 64, "lr": 0.005, "decay": 0.1})
    denominator_includes_endemic: bool = False
    threads: int = 1
    base_dir: str = field(default=".", compare=False)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ValidationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {path} is not valid JSON: {exc}") from None
        known = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        if "inputs" not in raw:
            raise ValidationError("config lacks an 'inputs' section")
        return cls(**raw, base_dir=str(path.parent.resolve()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def path(self, key: str) -> Path:
        return Path(self.base_dir, self.inputs[key])

    @property
    def out(self) -> Path:
        return Path(self.base_dir, self.output_dir)

    def validate(self) -> None:
        missing_keys = [k for k in INPUT_KEYS if k not in self.inputs]
        if missing_keys:
            raise ValidationError(f"config inputs lack: {missing_keys}")
        missing = [str(self.path(k)) for k in INPUT_KEYS if not self.path(k).is_file()]
        if missing:
            raise ValidationError("missing input files: " + ", ".join(missing))
        checks = [
            (self.alpha >= 0, "alpha must be >= 0"),
            (self.beta >= 0, "beta must be >= 0"),
            (self.speed_kmh > 0, "speed_kmh must be > 0"),
            (self.knn_k >= 1, "knn_k must be >= 1"),
            (self.sample_points >= 1, "sample_points must be >= 1"),
            (self.min_edge_calls >= 1, "min_edge_calls must be >= 1"),
            (self.threads >= 1, "threads must be >= 1"),
            (self.include_self in ("fallback", "always", "never"), "include_self must be fallback|always|never"),
            (0 < self.selection.get("extreme_percentile", 0.95) < 1, "extreme_percentile must be in (0, 1)"),
            (0 < self.autoencoder.get("dropout", 0.5) < 1, "dropout must be in (0, 1)"),
        ]
        bad = [msg for ok, msg in checks if not ok]
        if bad:
            raise ValidationError("; ".join(bad))
