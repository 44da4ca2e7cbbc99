"""Run configuration: dataclasses plus TOML file loading.

A config file is optional; every field has a sensible default. When no path
is given, the ACTIVE_LOOK_CONFIG environment variable is consulted.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .arbitration import ArbitrationConfig
from .rendering import RenderStyle

ENV_CONFIG_VAR = "ACTIVE_LOOK_CONFIG"

POLICIES = ("conflict", "union", "none")


@dataclass(frozen=True)
class NoiseConfig:
    enabled: bool = False
    max_iou: float = 0.3

    def __post_init__(self):
        if not (0.0 <= self.max_iou < 1.0):
            raise ValueError(f"noise max_iou must be in [0,1): {self.max_iou}")


@dataclass(frozen=True)
class EndpointsConfig:
    """Service URLs used when running against live detection/reasoner backends."""

    detect_url_a: str = "http://127.0.0.1:8765/detect?expert=A"
    detect_url_b: str = "http://127.0.0.1:8765/detect?expert=B"
    generate_url: str = "http://127.0.0.1:8765/generate"
    timeout_s: float = 60.0


@dataclass(frozen=True)
class PipelineConfig:
    arbitration: ArbitrationConfig = field(default_factory=ArbitrationConfig)
    zoom_scale: float = 1.5
    target_long_edge: int = 384
    style: RenderStyle = field(default_factory=RenderStyle)
    score_threshold_a: float = 0.3
    score_threshold_b: float = 0.3
    rng_seed: int = 42
    temperature: float = 1.0
    policy: str = "conflict"
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def __post_init__(self):
        if not (1.0 <= self.zoom_scale <= 4.0):
            raise ValueError(f"zoom_scale must be in [1,4]: {self.zoom_scale}")
        if self.target_long_edge < 64:
            raise ValueError(f"target_long_edge must be >= 64: {self.target_long_edge}")
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}: {self.policy}")
        for thr in (self.score_threshold_a, self.score_threshold_b):
            if not (0.0 <= thr <= 1.0):
                raise ValueError(f"score threshold out of [0,1]: {thr}")


def _style_from_table(table: dict) -> RenderStyle:
    kwargs = {}
    if "trusted_color" in table:
        kwargs["trusted_color"] = tuple(table["trusted_color"])
    if "doubtful_color" in table:
        kwargs["doubtful_color"] = tuple(table["doubtful_color"])
    if "line_width" in table:
        lw = int(table["line_width"])
        kwargs["line_width"] = None if lw == 0 else lw
    if "draw_labels" in table:
        kwargs["draw_labels"] = bool(table["draw_labels"])
    return RenderStyle(**kwargs)


def parse_config(data: dict) -> tuple[PipelineConfig, EndpointsConfig]:
    arb = ArbitrationConfig(**data.get("arbitration", {}))
    style = _style_from_table(data.get("style", {}))
    noise = NoiseConfig(**data.get("noise", {}))
    experts_table = data.get("experts", {})
    endpoints = EndpointsConfig(**data.get("endpoints", {}))
    top_level = {
        k: data[k]
        for k in ("zoom_scale", "target_long_edge", "rng_seed", "temperature", "policy")
        if k in data
    }
    pipeline = PipelineConfig(
        arbitration=arb,
        style=style,
        noise=noise,
        score_threshold_a=float(experts_table.get("score_threshold_a", 0.3)),
        score_threshold_b=float(experts_table.get("score_threshold_b", 0.3)),
        **top_level,
    )
    return pipeline, endpoints


def load_config(path: str | Path | None = None) -> tuple[PipelineConfig, EndpointsConfig]:
    """Load a TOML config; fall back to $ACTIVE_LOOK_CONFIG, then to defaults."""
    if path is None:
        path = os.environ.get(ENV_CONFIG_VAR) or None
    if path is None:
        return PipelineConfig(), EndpointsConfig()
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return parse_config(data)
