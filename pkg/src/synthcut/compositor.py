"""Cut-paste composition: augment cutouts, paste with Gaussian boundary
blending, resolve occlusion, and emit per-instance pseudo-labels.

Annotation masks stay binary; the blur affects pixels only.  Every sample
in a dataset stream derives its RNG from (seed, sample index), so output
is reproducible and independent of worker count.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .assets import BackgroundAsset, ForegroundAsset
from .errors import DegenerateTransform, EmptyPool, NoBackground, OutOfBounds
from .foreground import mask_to_bbox
from .prompting import ClassLabel
from .util import derive_seed

log = logging.getLogger("synthcut.compositor")

MIN_MASK_PIXELS = 16


@dataclass(frozen=True)
class AugmentParams:
    """2D augmentation and paste behavior.

    scale_range is the fraction of the background's shorter side that the
    object's longer side is scaled to.  blur_sigma is the std of the
    boundary blur in pixels (kernel radius ceil(2*sigma)).
    """

    rotation_range: float = 30.0
    scale_range: tuple[float, float] = (0.15, 0.50)
    flip_prob: float = 0.5
    blur_sigma: float = 2.0
    pastes_per_bg: int = 4
    min_visible_fraction: float = 0.25
    max_place_attempts: int = 10

    def __post_init__(self) -> None:
        if not 0 <= self.rotation_range <= 180:
            raise ValueError("rotation_range must be in [0, 180] degrees")
        lo, hi = self.scale_range
        if not 0 < lo <= hi <= 1:
            raise ValueError("need 0 < scale min <= scale max <= 1")
        if self.blur_sigma < 0:
            raise ValueError("blur_sigma must be >= 0")
        if self.pastes_per_bg < 1 or self.max_place_attempts < 1:
            raise ValueError("pastes_per_bg and max_place_attempts must be >= 1")
        if not 0 < self.min_visible_fraction <= 1:
            raise ValueError("min_visible_fraction must be in (0, 1]")


@dataclass
class Instance:
    """One pasted object after occlusion resolution."""

    label: ClassLabel
    mask: np.ndarray  # canvas-sized, post-occlusion
    bbox: tuple[int, int, int, int]
    visible_fraction: float
    source_asset: str


@dataclass
class CompositeSample:
    image: np.ndarray
    instances: list[Instance]
    provenance: dict = field(default_factory=dict)


def transform_cutout(
    image: np.ndarray, mask: np.ndarray, angle_deg: float = 0.0,
    scale: float = 1.0, flip: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Flip/rotate/scale a tight cutout; bilinear image, nearest mask.

    The result is re-cropped to the transformed mask's bounding box.
    """
    img, m = image, mask
    if flip:
        img = img[:, ::-1]
        m = m[:, ::-1]
    pil_img = Image.fromarray(np.ascontiguousarray(img))
    pil_m = Image.fromarray(np.ascontiguousarray(m.astype(np.uint8) * 255))
    if angle_deg % 360 != 0:
        pil_img = pil_img.rotate(angle_deg, resample=Image.BILINEAR, expand=True)
        pil_m = pil_m.rotate(angle_deg, resample=Image.NEAREST, expand=True)
    if scale != 1.0:
        w, h = pil_m.size
        nw = max(1, round(w * scale))
        nh = max(1, round(h * scale))
        pil_img = pil_img.resize((nw, nh), Image.BILINEAR)
        pil_m = pil_m.resize((nw, nh), Image.NEAREST)
    out_m = np.asarray(pil_m) > 127
    out_img = np.asarray(pil_img)
    if not out_m.any():
        raise DegenerateTransform("mask vanished under transform")
    x, y, w, h = mask_to_bbox(out_m)
    return out_img[y : y + h, x : x + w].copy(), out_m[y : y + h, x : x + w].copy()


def augment_foreground(
    asset: ForegroundAsset,
    rng: np.random.Generator,
    params: AugmentParams,
    bg_shorter_side: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Random rotate/scale/flip; the mask's longer side ends up at
    s * bg_shorter_side with s ~ U(scale_range)."""
    theta = float(rng.uniform(-params.rotation_range, params.rotation_range))
    flip = bool(rng.random() < params.flip_prob)
    s = float(rng.uniform(params.scale_range[0], params.scale_range[1]))
    img, m = transform_cutout(asset.image, asset.mask, theta, 1.0, flip)
    target = s * bg_shorter_side
    factor = target / max(m.shape)
    img, m = transform_cutout(img, m, 0.0, factor, False)
    if m.sum() < MIN_MASK_PIXELS:
        raise DegenerateTransform(f"mask area {int(m.sum())} < {MIN_MASK_PIXELS} px")
    return img, m


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(2 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def mask_to_alpha(mask: np.ndarray, sigma: float) -> np.ndarray:
    """Binary mask convolved with a normalized Gaussian (radius ceil(2s))."""
    if sigma <= 0:
        return mask.astype(np.float64)
    k = _gaussian_kernel(sigma)
    a = ndimage.convolve1d(mask.astype(np.float64), k, axis=0, mode="constant", cval=0.0)
    a = ndimage.convolve1d(a, k, axis=1, mode="constant", cval=0.0)
    return np.clip(a, 0.0, 1.0)


def paste(
    canvas: np.ndarray,
    cutout_image: np.ndarray,
    cutout_mask: np.ndarray,
    top_left: tuple[int, int],
    blur_sigma: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Alpha-blend a cutout onto the canvas at (x, y).

    alpha = Gaussian-blurred binary mask; out = alpha*fg + (1-alpha)*bg.
    The returned label mask is the un-blurred binary mask placed on a
    canvas-sized grid.  With sigma=0 this is an exact pixel replacement.
    """
    H, W = canvas.shape[:2]
    h, w = cutout_mask.shape
    x0, y0 = top_left
    if x0 < 0 or y0 < 0 or x0 + w > W or y0 + h > H:
        raise OutOfBounds(f"cutout {w}x{h} at ({x0}, {y0}) exceeds canvas {W}x{H}")

    out = canvas.copy()
    radius = math.ceil(2 * blur_sigma) if blur_sigma > 0 else 0
    wx0, wy0 = max(0, x0 - radius), max(0, y0 - radius)
    wx1, wy1 = min(W, x0 + w + radius), min(H, y0 + h + radius)

    window_mask = np.zeros((wy1 - wy0, wx1 - wx0), dtype=bool)
    window_mask[y0 - wy0 : y0 - wy0 + h, x0 - wx0 : x0 - wx0 + w] = cutout_mask
    alpha = mask_to_alpha(window_mask, blur_sigma)[:, :, None]

    # Foreground pixels beyond the cutout rectangle (only reachable inside
    # the blur halo) are edge-replicated.
    pad = (
        (y0 - wy0, wy1 - (y0 + h)),
        (x0 - wx0, wx1 - (x0 + w)),
        (0, 0),
    )
    fg = np.pad(cutout_image.astype(np.float64), pad, mode="edge")
    bg = out[wy0:wy1, wx0:wx1].astype(np.float64)
    blended = np.rint(alpha * fg + (1.0 - alpha) * bg)
    out[wy0:wy1, wx0:wx1] = np.clip(blended, 0, 255).astype(np.uint8)

    placed = np.zeros((H, W), dtype=bool)
    placed[y0 : y0 + h, x0 : x0 + w] = cutout_mask
    return out, placed


Placement = tuple[ClassLabel, np.ndarray, np.ndarray, tuple[int, int], str]


def place_instances(
    background_image: np.ndarray,
    placements: Sequence[Placement],
    blur_sigma: float,
    min_visible_fraction: float,
    initial: Sequence[tuple[ClassLabel, np.ndarray, str]] = (),
) -> tuple[np.ndarray, list[Instance]]:
    """Paste placements in order; later pastes occlude earlier instances.

    ``initial`` entries are instances already present in the background's
    pixels (real annotated objects); they participate in occlusion but are
    not re-pasted.  Instances whose visible fraction drops below the
    threshold are removed from the label set; their pixels remain.
    """
    canvas = background_image.copy()
    records: list[list] = [
        [label, mask.copy(), int(mask.sum()), source] for label, mask, source in initial
    ]
    for label, img, mask, top_left, source in placements:
        canvas, placed = paste(canvas, img, mask, top_left, blur_sigma)
        for rec in records:
            rec[1] &= ~placed
        records.append([label, placed, int(placed.sum()), source])

    instances = []
    for label, mask, area0, source in records:
        visible = int(mask.sum())
        if area0 == 0 or visible == 0:
            continue
        fraction = visible / area0
        if fraction < min_visible_fraction:
            continue
        instances.append(
            Instance(
                label=label,
                mask=mask,
                bbox=mask_to_bbox(mask),
                visible_fraction=fraction,
                source_asset=source,
            )
        )
    return canvas, instances


def compose_sample(
    background: BackgroundAsset,
    assets: Sequence[ForegroundAsset],
    rng: np.random.Generator,
    params: AugmentParams,
) -> CompositeSample:
    """Paste ``pastes_per_bg`` augmented cutouts at uniform-random
    fully-contained positions; assets that cannot fit or degenerate under
    augmentation are skipped."""
    if background is None or background.image.size == 0:
        raise NoBackground("composition requires a background image")
    if len(assets) != params.pastes_per_bg:
        raise ValueError(f"expected {params.pastes_per_bg} assets, got {len(assets)}")
    H, W = background.image.shape[:2]
    shorter = min(H, W)

    placements: list[Placement] = []
    skipped = 0
    for asset in assets:
        try:
            img, mask = augment_foreground(asset, rng, params, shorter)
        except DegenerateTransform as exc:
            log.debug("skip asset %s: %s", asset.asset_id, exc)
            skipped += 1
            continue
        h, w = mask.shape
        if w > W or h > H:
            # Containment is impossible at this scale; position resampling
            # cannot help, so the asset is skipped.
            skipped += 1
            continue
        x = int(rng.integers(0, W - w + 1))
        y = int(rng.integers(0, H - h + 1))
        placements.append((asset.label, img, mask, (x, y), asset.asset_id))

    initial = [
        (label, mask, f"{background.asset_id}/instance/{k}")
        for k, (label, mask) in enumerate(background.instances)
    ]
    image, instances = place_instances(
        background.image, placements, params.blur_sigma, params.min_visible_fraction, initial
    )
    return CompositeSample(
        image=image,
        instances=instances,
        provenance={
            "background": background.asset_id,
            "assets": [a.asset_id for a in assets],
            "skipped": skipped,
        },
    )


class _ShuffledCycle:
    """Deterministic without-replacement cycle; reshuffles per round so every
    asset is used once before any repeats.  Draw k is a pure function of k,
    so concurrent callers always agree."""

    def __init__(self, n: int, seed: int):
        self.n = n
        self.seed = seed
        self._rounds: dict[int, np.ndarray] = {}

    def __call__(self, k: int) -> int:
        rnd, pos = divmod(k, self.n)
        perm = self._rounds.get(rnd)
        if perm is None:
            perm = np.random.default_rng(derive_seed(self.seed, "round", rnd)).permutation(self.n)
            self._rounds[rnd] = perm
        return int(perm[pos])


def build_dataset(
    fg_pool: Sequence[ForegroundAsset],
    bg_pool: Sequence[BackgroundAsset],
    target_size: int,
    seed: int,
    params: AugmentParams,
    workers: int = 1,
) -> Iterator[CompositeSample]:
    """Stream exactly target_size composite samples.

    Backgrounds are sampled uniformly with replacement; foregrounds come
    from a shuffled reshuffling cycle.  Each sample's randomness derives
    from (seed, sample index), so the stream is reproducible and identical
    for any worker count.
    """
    if not fg_pool or not bg_pool:
        raise EmptyPool("foreground and background pools must be non-empty")
    if target_size < 1:
        raise ValueError("target_size must be >= 1")
    cycle = _ShuffledCycle(len(fg_pool), derive_seed(seed, "fg-cycle"))
    pastes = params.pastes_per_bg

    def make(i: int) -> CompositeSample:
        rng = np.random.default_rng(derive_seed(seed, "sample", i))
        bg = bg_pool[int(rng.integers(len(bg_pool)))]
        assets = [fg_pool[cycle(i * pastes + j)] for j in range(pastes)]
        sample = compose_sample(bg, assets, rng, params)
        sample.provenance["index"] = i
        sample.provenance["seed"] = seed
        return sample

    if workers <= 1:
        for i in range(target_size):
            yield make(i)
        return
    from concurrent.futures import ThreadPoolExecutor

    window = workers * 4  # bounds in-flight samples; order is preserved
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for start in range(0, target_size, window):
            stop = min(start + window, target_size)
            yield from pool.map(make, range(start, stop))
