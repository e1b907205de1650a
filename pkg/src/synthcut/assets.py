"""Asset dataclasses and the on-disk asset store.

Layout under a store root:

    fg/<label>/<template_id>/<seed>_<index>.png   RGBA cutout, alpha = mask
    fg/<label>/<template_id>/<seed>_<index>.json  provenance sidecar
    bg/template/<template_id>/<seed>_<index>.png  background + sidecar
    bg/cdi/<cdi>/<caption_rank>/<seed>_<index>.png
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .prompting import ClassLabel


@dataclass
class ForegroundAsset:
    """An extracted cutout: tight RGB crop plus its binary mask."""

    image: np.ndarray
    mask: np.ndarray
    label: ClassLabel
    provenance: dict

    @property
    def asset_id(self) -> str:
        return (
            f"fg/{self.label.name}/{self.provenance.get('template_id', 0)}/"
            f"{self.provenance.get('seed', 0)}_{self.provenance.get('index', 0)}"
        )


@dataclass
class BackgroundAsset:
    """A context image; ``instances`` carries pre-labeled real objects."""

    image: np.ndarray
    prompt: str
    source: str
    provenance: dict = field(default_factory=dict)
    instances: list[tuple[ClassLabel, np.ndarray]] = field(default_factory=list)

    @property
    def asset_id(self) -> str:
        return (
            f"bg/{self.source}/"
            f"{self.provenance.get('seed', 0)}_{self.provenance.get('index', 0)}"
        )


def _stem(provenance: dict) -> str:
    return f"{provenance.get('seed', 0)}_{provenance.get('index', 0)}"


def save_foreground_asset(asset: ForegroundAsset, root: str | Path) -> Path:
    directory = Path(root) / "fg" / asset.label.name / str(asset.provenance.get("template_id", 0))
    directory.mkdir(parents=True, exist_ok=True)
    stem = _stem(asset.provenance)
    rgba = np.dstack([asset.image, (asset.mask.astype(np.uint8) * 255)])
    path = directory / f"{stem}.png"
    Image.fromarray(rgba, mode="RGBA").save(path, compress_level=1)
    sidecar = dict(asset.provenance)
    sidecar["label"] = asset.label.name
    (directory / f"{stem}.json").write_text(json.dumps(sidecar, sort_keys=True))
    return path


def load_foreground_assets(root: str | Path, labels: list[ClassLabel]) -> list[ForegroundAsset]:
    by_name = {c.name: c for c in labels}
    assets = []
    fg_root = Path(root) / "fg"
    if not fg_root.is_dir():
        return []
    for png in sorted(fg_root.rglob("*.png")):
        sidecar = json.loads(png.with_suffix(".json").read_text())
        label = by_name[sidecar.pop("label")]
        rgba = np.asarray(Image.open(png).convert("RGBA"))
        assets.append(
            ForegroundAsset(
                image=rgba[:, :, :3].copy(),
                mask=rgba[:, :, 3] > 127,
                label=label,
                provenance=sidecar,
            )
        )
    return assets


def save_background_asset(asset: BackgroundAsset, root: str | Path) -> Path:
    directory = Path(root) / "bg" / asset.source
    directory.mkdir(parents=True, exist_ok=True)
    stem = _stem(asset.provenance)
    path = directory / f"{stem}.png"
    Image.fromarray(asset.image).save(path, compress_level=1)
    sidecar = dict(asset.provenance)
    sidecar["prompt"] = asset.prompt
    (directory / f"{stem}.json").write_text(json.dumps(sidecar, sort_keys=True))
    return path


def load_background_assets(root: str | Path, source_prefix: str = "") -> list[BackgroundAsset]:
    bg_root = Path(root) / "bg"
    assets = []
    if not bg_root.is_dir():
        return []
    for png in sorted(bg_root.rglob("*.png")):
        source = png.parent.relative_to(bg_root).as_posix()
        if source_prefix and not source.startswith(source_prefix):
            continue
        sidecar = json.loads(png.with_suffix(".json").read_text())
        prompt = sidecar.pop("prompt", "")
        assets.append(
            BackgroundAsset(
                image=np.asarray(Image.open(png).convert("RGB")),
                prompt=prompt,
                source=source,
                provenance=sidecar,
            )
        )
    return assets
