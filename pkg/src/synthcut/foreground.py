"""Foreground mask extraction from images with near-uniform backgrounds.

The generation templates put objects on clean isolated fields, so a
border-seeded flood fill is enough: estimate the background color from
the border ring, flood from the border over pixels within a chroma
threshold, invert, clean up with morphology, and keep the largest
4-connected component.  A learned segmenter can be swapped in behind the
same signature.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .assets import ForegroundAsset
from .errors import (
    BackgroundNotUniform,
    EmptyMask,
    NoForeground,
    OversizedForeground,
    PipelineInvariantViolation,
)
from .gateway import GatewayClient, generate_batch
from .prompting import ClassLabel, TemplateSet, default_templates, verbalize_foreground
from .selection import (
    DEFAULT_CLASS_PROMPT,
    SelectionPolicy,
    rank_and_select,
    score_batch,
    write_selection_report,
)
from .util import derive_seed

log = logging.getLogger("synthcut.foreground")

_STRUCT4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

MAX_BORDER_TOUCH = 0.25


@dataclass(frozen=True)
class ExtractionParams:
    """Knobs for flood-fill extraction; distances are in 8-bit units."""

    chroma_threshold: float = 30.0
    morph_radius: int = 2
    min_area: float = 0.02
    max_area: float = 0.80
    border_ring: int = 8

    def __post_init__(self) -> None:
        if not 0.0 < self.min_area < self.max_area <= 1.0:
            raise ValueError("need 0 < min_area < max_area <= 1")
        if self.chroma_threshold <= 0 or self.border_ring < 1 or self.morph_radius < 0:
            raise ValueError("invalid extraction parameters")


def _disk(radius: int) -> np.ndarray:
    if radius <= 0:
        return np.ones((1, 1), dtype=bool)
    y, x = np.ogrid[-radius : radius + 1, -radius : radius + 1]
    return x * x + y * y <= radius * radius


def _border_ring(rgb: np.ndarray, r: int) -> np.ndarray:
    return np.concatenate(
        [
            rgb[:r].reshape(-1, 3),
            rgb[-r:].reshape(-1, 3),
            rgb[r:-r, :r].reshape(-1, 3),
            rgb[r:-r, -r:].reshape(-1, 3),
        ]
    )


def extract_mask(image: np.ndarray, params: ExtractionParams | None = None) -> np.ndarray:
    """Extract the single largest foreground component as a bool mask.

    Steps: median border-ring color -> flood fill from the border over
    near-background pixels -> invert -> morphological close then open ->
    largest 4-connected component.  Raises BackgroundNotUniform when the
    ring is too noisy, NoForeground / OversizedForeground on area bounds.
    """
    params = params or ExtractionParams()
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] < 3:
        raise ValueError("expected an HxWx3 (or RGBA) image array")
    if min(arr.shape[:2]) < 64:
        raise ValueError("image must be at least 64x64")
    rgb = arr[:, :, :3].astype(np.float64)

    ring = _border_ring(rgb, params.border_ring)
    ring_std = ring.std(axis=0).max()
    if ring_std > 3 * params.chroma_threshold:
        raise BackgroundNotUniform(
            f"border ring std {ring_std:.1f} exceeds {3 * params.chroma_threshold:.1f}"
        )
    bg_color = np.median(ring, axis=0)

    near_bg = (np.abs(rgb - bg_color) <= params.chroma_threshold).all(axis=2)
    labels, _ = ndimage.label(near_bg, structure=_STRUCT4)
    border_labels = np.unique(
        np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]])
    )
    border_labels = border_labels[border_labels != 0]
    background = np.isin(labels, border_labels)
    fg = ~background

    if params.morph_radius > 0:
        st = _disk(params.morph_radius)
        fg = ndimage.binary_closing(fg, structure=st)
        fg = ndimage.binary_opening(fg, structure=st)

    labels, count = ndimage.label(fg, structure=_STRUCT4)
    if count == 0:
        raise NoForeground("no foreground component found")
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    mask = labels == sizes.argmax()

    fraction = mask.sum() / mask.size
    if fraction < params.min_area:
        raise NoForeground(f"foreground area fraction {fraction:.4f} < {params.min_area}")
    if fraction > params.max_area:
        raise OversizedForeground(
            f"foreground area fraction {fraction:.4f} > {params.max_area}"
        )
    return mask


def mask_to_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    """Tightest (x, y, w, h) box containing all set bits."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise EmptyMask("mask has no set pixels")
    return (
        int(xs.min()),
        int(ys.min()),
        int(xs.max() - xs.min() + 1),
        int(ys.max() - ys.min() + 1),
    )


def border_touch_fraction(mask: np.ndarray) -> float:
    """Fraction of image-border pixels covered by the mask."""
    h, w = mask.shape
    touched = int(mask[0].sum() + mask[-1].sum() + mask[1:-1, 0].sum() + mask[1:-1, -1].sum())
    total = 2 * (h + w) - 4
    return touched / total


def asset_from_scored(
    scored, label: ClassLabel, template_id: int, params: ExtractionParams | None = None
) -> ForegroundAsset:
    """Extract a cutout asset from a selected candidate; raises on failure."""
    from .mock_backend import decode_png

    rgb = decode_png(scored.png)
    mask = extract_mask(rgb, params)
    touch = border_touch_fraction(mask)
    if touch >= MAX_BORDER_TOUCH:
        raise NoForeground(f"mask touches {touch:.0%} of border pixels")
    x, y, w, h = mask_to_bbox(mask)
    return ForegroundAsset(
        image=rgb[y : y + h, x : x + w].copy(),
        mask=mask[y : y + h, x : x + w].copy(),
        label=label,
        provenance={
            "prompt": scored.prompt,
            "seed": scored.seed,
            "index": scored.index,
            "template_id": template_id,
            "faithfulness": scored.faithfulness,
        },
    )


def build_foreground_pool(
    labels: list[ClassLabel],
    per_template_n: int,
    keep_k: int,
    gateway: GatewayClient,
    *,
    master_seed: int = 0,
    image_size: tuple[int, int] = (512, 512),
    extraction: ExtractionParams | None = None,
    class_penalty_weight: float = 1.0,
    class_prompt_pattern: str = DEFAULT_CLASS_PROMPT,
    templates: TemplateSet | None = None,
    report_dir=None,
) -> list[ForegroundAsset]:
    """Generate, filter, and extract cutouts for every (label, template).

    Extraction failures are logged and dropped (over-generation absorbs
    the loss); a (label, template) batch yielding zero assets aborts.
    """
    if not labels:
        raise ValueError("labels must be non-empty")
    templates = templates or default_templates()
    policy = SelectionPolicy(
        keep_k=keep_k,
        class_penalty_weight=class_penalty_weight,
        class_prompt_pattern=class_prompt_pattern,
    )
    pool: list[ForegroundAsset] = []
    for label in labels:
        for template in templates.foreground:
            prompt = verbalize_foreground(label, template.id, templates)
            seed = derive_seed(master_seed, "fg", label.name, template.id)
            candidates = generate_batch(
                gateway, prompt, per_template_n, seed, image_size[0], image_size[1]
            )
            scored = score_batch(candidates, prompt, labels, gateway, class_prompt_pattern)
            selected = rank_and_select(scored, policy, exclude_label=label.name)
            if report_dir is not None:
                write_selection_report(
                    f"{report_dir}/fg_{label.name}_{template.id}.csv",
                    scored,
                    selected,
                    policy,
                    exclude_label=label.name,
                )
            batch_assets = []
            failures = 0
            for s in selected:
                try:
                    batch_assets.append(asset_from_scored(s, label, template.id, extraction))
                except Exception as exc:
                    failures += 1
                    log.info(
                        "stage=foreground label=%s template=%d candidate=%s dropped: %s",
                        label.name, template.id, s.candidate_id, exc,
                    )
            if not batch_assets:
                raise PipelineInvariantViolation(
                    f"every extraction failed for label={label.name} template={template.id}"
                )
            log.info(
                "stage=foreground label=%s template=%d generated=%d kept=%d failures=%d",
                label.name, template.id, per_template_n, len(batch_assets), failures,
            )
            pool.extend(batch_assets)
    return pool
