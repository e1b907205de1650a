"""Sidecar configuration."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class SidecarConfig:
    """Model identifiers per capability plus serving knobs.

    A model id of "toy" (or "toy:<seed>") selects the procedural backend
    for that capability; anything else is treated as a checkpoint id for
    the corresponding huggingface backend.
    """

    generator_model: str = "toy"
    scorer_model: str = "toy"
    captioner_model: str = "toy"
    device: str = "cpu"
    max_batch: int = 8
    port: int = 8008
    host: str = "127.0.0.1"

    def __post_init__(self) -> None:
        if not 1024 <= self.port <= 65535:
            raise ValueError(f"port must be in [1024, 65535], got {self.port}")
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")
