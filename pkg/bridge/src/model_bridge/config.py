"""Bridge configuration and backend selector parsing."""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class BridgeConfig:
    """Which backend serves each expert slot and the reasoner.

    Selector syntax:
      fixture:<scenes.jsonl>#<slot>   recorded detections for one expert slot
      fixture-rules:<scenes.jsonl>    rule-based reasoner stub with ground truth
      echo:<text>                     reasoner stub returning fixed text
      sleep:<seconds>                 reasoner stub that stalls (timeout tests)
      unloaded                        declared but not loaded (serves 503)

    The two expert slots must select distinct backends.
    """

    expert_a: str = "unloaded"
    expert_b: str = "unloaded"
    reasoner: str = "unloaded"
    listen_host: str = "127.0.0.1"
    listen_port: int = 8765
    device_hint: str = "cpu"
    max_image_side: int = 4096
    request_timeout_s: float = 30.0

    def __post_init__(self):
        if self.expert_a == self.expert_b and self.expert_a != "unloaded":
            raise ValueError(
                f"expert slots A and B must select distinct backends, both are {self.expert_a!r}"
            )
        if self.max_image_side < 16:
            raise ValueError(f"max_image_side too small: {self.max_image_side}")
        if self.request_timeout_s <= 0:
            raise ValueError(f"request_timeout_s must be positive: {self.request_timeout_s}")


def load_config(path: str | Path) -> BridgeConfig:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    experts = data.pop("experts", {})
    return BridgeConfig(
        expert_a=experts.get("A", "unloaded"),
        expert_b=experts.get("B", "unloaded"),
        reasoner=data.pop("reasoner", "unloaded"),
        **data,
    )
