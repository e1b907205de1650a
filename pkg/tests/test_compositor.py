import math

import numpy as np
import pytest
from scipy import ndimage

from synthcut.assets import BackgroundAsset, ForegroundAsset
from synthcut.compositor import (
    AugmentParams,
    augment_foreground,
    build_dataset,
    compose_sample,
    mask_to_alpha,
    paste,
    place_instances,
    transform_cutout,
)
from synthcut.errors import DegenerateTransform, EmptyPool, NoBackground, OutOfBounds
from synthcut.foreground import mask_to_bbox
from synthcut.prompting import ClassLabel

from shapes import rasterize_convex_polygon, rasterize_disk, random_convex_polygon

_STRUCT4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

DOG = ClassLabel("dog", 1)
CAT = ClassLabel("cat", 2)


def make_asset(mask, label=DOG, color=(200, 40, 40), seed=0, index=0):
    image = np.zeros((*mask.shape, 3), dtype=np.uint8)
    image[:] = (90, 90, 90)
    image[mask] = color
    return ForegroundAsset(
        image=image, mask=mask, label=label,
        provenance={"seed": seed, "index": index, "template_id": 0},
    )


def make_background(h=128, w=128, value=30):
    image = np.full((h, w, 3), value, dtype=np.uint8)
    return BackgroundAsset(image=image, prompt="bg", source="template/0",
                           provenance={"seed": 0, "index": 0})


def zbuffer_oracle(shape, placements, min_visible_fraction, initial=()):
    """Independent occlusion re-simulation with a per-pixel index buffer."""
    buffer = np.full(shape, -1, dtype=np.int64)
    areas = []
    idx = 0
    for _, mask, _ in initial:
        buffer[mask] = idx
        areas.append(int(mask.sum()))
        idx += 1
    for _, _, mask, (x, y), _ in placements:
        h, w = mask.shape
        region = buffer[y : y + h, x : x + w]
        region[mask] = idx
        areas.append(int(mask.sum()))
        idx += 1
    survivors = {}
    for i, area in enumerate(areas):
        visible = int((buffer == i).sum())
        if area and visible and visible / area >= min_visible_fraction:
            survivors[i] = (buffer == i, visible / area)
    return survivors


class TestTransform:
    def test_near_identity_preserves_area(self):
        mask = rasterize_disk(60, 60, 30, 30, 20)[10:50, 10:50]
        image = (np.ones((40, 40, 3)) * 120).astype(np.uint8)
        out_img, out_mask = transform_cutout(image, mask, angle_deg=0.0, scale=1.0)
        assert abs(int(out_mask.sum()) - int(mask.sum())) <= 0.01 * mask.sum()

    def test_rot90_swaps_bbox(self):
        mask = np.zeros((30, 50), dtype=bool)
        mask[5:25, 10:45] = True  # 35x20 rectangle
        image = np.zeros((30, 50, 3), dtype=np.uint8)
        _, out_mask = transform_cutout(image, mask, angle_deg=90.0)
        x, y, w, h = mask_to_bbox(out_mask)
        assert abs(w - 20) <= 1 and abs(h - 35) <= 1

    def test_flip_mirrors(self):
        mask = np.zeros((4, 6), dtype=bool)
        mask[:, :2] = True
        image = np.zeros((4, 6, 3), dtype=np.uint8)
        image[:, :2] = 255
        out_img, out_mask = transform_cutout(image, mask, flip=True)
        assert out_mask.shape == (4, 2)  # re-cropped to the right-side block

    def test_random_transforms_preserve_connectedness_of_convex_masks(self):
        rng = np.random.default_rng(31)
        for trial in range(40):
            size = 80
            poly = random_convex_polygon(rng, size / 2, size / 2, 30)
            mask = rasterize_convex_polygon(size, size, poly)
            x, y, w, h = mask_to_bbox(mask)
            mask = mask[y : y + h, x : x + w]
            image = (np.ones((*mask.shape, 3)) * 100).astype(np.uint8)
            angle = float(rng.uniform(-30, 30))
            scale = float(rng.uniform(0.5, 1.5))
            _, out = transform_cutout(image, mask, angle, scale, bool(rng.random() < 0.5))
            _, n = ndimage.label(out, structure=_STRUCT4)
            assert n == 1

    def test_augment_scales_longer_side(self):
        mask = np.ones((20, 40), dtype=bool)
        asset = make_asset(mask)
        params = AugmentParams(rotation_range=0.0, scale_range=(0.25, 0.25), flip_prob=0.0)
        rng = np.random.default_rng(0)
        _, out_mask = augment_foreground(asset, rng, params, bg_shorter_side=200)
        assert abs(max(out_mask.shape) - 50) <= 1  # 0.25 * 200

    def test_degenerate_transform(self):
        mask = np.ones((2, 2), dtype=bool)
        asset = make_asset(mask)
        params = AugmentParams(rotation_range=0.0, scale_range=(0.01, 0.01))
        with pytest.raises(DegenerateTransform):
            augment_foreground(asset, np.random.default_rng(0), params, bg_shorter_side=100)


class TestPaste:
    def test_sigma_zero_equals_naive_replacement_200_cases(self):
        rng = np.random.default_rng(41)
        for _ in range(200):
            H, W = int(rng.integers(40, 90)), int(rng.integers(40, 90))
            h, w = int(rng.integers(5, 30)), int(rng.integers(5, 30))
            canvas = rng.integers(0, 256, size=(H, W, 3)).astype(np.uint8)
            cut_img = rng.integers(0, 256, size=(h, w, 3)).astype(np.uint8)
            cut_mask = rng.random((h, w)) < 0.5
            x = int(rng.integers(0, W - w + 1))
            y = int(rng.integers(0, H - h + 1))
            out, placed = paste(canvas, cut_img, cut_mask, (x, y), blur_sigma=0.0)
            oracle = canvas.copy()
            region = oracle[y : y + h, x : x + w]
            region[cut_mask] = cut_img[cut_mask]
            assert np.array_equal(out, oracle)
            assert placed[y : y + h, x : x + w].sum() == cut_mask.sum()

    def test_single_pixel_alpha_matches_direct_convolution(self):
        sigma = 1.0
        mask = np.zeros((9, 9), dtype=bool)
        mask[4, 4] = True
        alpha = mask_to_alpha(mask, sigma)
        radius = math.ceil(2 * sigma)
        xs = np.arange(-radius, radius + 1)
        k1 = np.exp(-(xs**2) / (2 * sigma**2))
        k1 /= k1.sum()
        kernel2d = np.outer(k1, k1)
        # direct convolution of a delta is the kernel itself
        assert alpha[4, 4] == pytest.approx(kernel2d[radius, radius], abs=1e-12)
        assert alpha[4 - radius : 4 + radius + 1, 4 - radius : 4 + radius + 1] == pytest.approx(kernel2d)

    def test_alpha_matches_direct_convolution_random_masks(self):
        rng = np.random.default_rng(17)
        for sigma in (0.7, 1.5, 2.0):
            radius = math.ceil(2 * sigma)
            xs = np.arange(-radius, radius + 1)
            k1 = np.exp(-(xs**2) / (2 * sigma**2))
            k1 /= k1.sum()
            kernel2d = np.outer(k1, k1)
            mask = rng.random((20, 24)) < 0.3
            direct = ndimage.convolve(
                mask.astype(np.float64), kernel2d, mode="constant", cval=0.0
            )
            assert mask_to_alpha(mask, sigma) == pytest.approx(direct, abs=1e-10)

    def test_support_bound(self):
        rng = np.random.default_rng(3)
        sigma = 2.0
        radius = math.ceil(2 * sigma)
        canvas = rng.integers(0, 256, size=(100, 100, 3)).astype(np.uint8)
        mask = rasterize_disk(30, 30, 15, 15, 10)
        cut_img = np.full((30, 30, 3), 250, dtype=np.uint8)
        out, placed = paste(canvas, cut_img, mask, (30, 35), blur_sigma=sigma)
        dilated = ndimage.binary_dilation(placed, structure=np.ones((2 * radius + 1,) * 2))
        assert np.array_equal(out[~dilated], canvas[~dilated])

    def test_blended_values_within_fg_bg_envelope(self):
        rng = np.random.default_rng(4)
        canvas = rng.integers(0, 256, size=(60, 60, 3)).astype(np.uint8)
        mask = rasterize_disk(20, 20, 10, 10, 7)
        cut_img = rng.integers(0, 256, size=(20, 20, 3)).astype(np.uint8)
        out, _ = paste(canvas, cut_img, mask, (20, 20), blur_sigma=1.5)
        window = out[20:40, 20:40].astype(np.int16)
        lo = np.minimum(canvas[20:40, 20:40], cut_img).astype(np.int16)
        hi = np.maximum(canvas[20:40, 20:40], cut_img).astype(np.int16)
        assert (window >= lo).all() and (window <= hi).all()

    def test_out_of_bounds(self):
        canvas = np.zeros((50, 50, 3), dtype=np.uint8)
        img = np.zeros((20, 20, 3), dtype=np.uint8)
        mask = np.ones((20, 20), dtype=bool)
        with pytest.raises(OutOfBounds):
            paste(canvas, img, mask, (40, 0))
        with pytest.raises(OutOfBounds):
            paste(canvas, img, mask, (-1, 0))


class TestOcclusion:
    def test_four_non_overlapping_pastes(self):
        bg = make_background()
        mask = np.ones((20, 20), dtype=bool)
        placements = [
            (DOG, make_asset(mask).image, mask, (x, y), f"a{i}")
            for i, (x, y) in enumerate([(0, 0), (60, 0), (0, 60), (60, 60)])
        ]
        _, instances = place_instances(bg.image, placements, 0.0, 0.25)
        assert len(instances) == 4
        assert all(inst.visible_fraction == 1.0 for inst in instances)

    def test_total_occlusion_removes_instance(self):
        bg = make_background()
        small = np.ones((10, 10), dtype=bool)
        big = np.ones((30, 30), dtype=bool)
        placements = [
            (DOG, make_asset(small).image, small, (40, 40), "a"),
            (CAT, make_asset(big, CAT).image, big, (30, 30), "b"),
        ]
        _, instances = place_instances(bg.image, placements, 0.0, 0.25)
        assert len(instances) == 1
        assert instances[0].label == CAT
        assert instances[0].visible_fraction == 1.0

    def test_zbuffer_oracle_random_scenes(self):
        rng = np.random.default_rng(55)
        for scene in range(150):
            bg = make_background(128, 128)
            placements = []
            for j in range(int(rng.integers(2, 5))):
                side = int(rng.integers(12, 45))
                if rng.random() < 0.5:
                    mask = rasterize_disk(side, side, side / 2, side / 2, side / 2 - 1)
                else:
                    mask = np.ones((side, side), dtype=bool)
                x = int(rng.integers(0, 128 - side + 1))
                y = int(rng.integers(0, 128 - side + 1))
                placements.append((DOG, make_asset(mask).image, mask, (x, y), f"s{j}"))
            min_vis = float(rng.choice([0.1, 0.25, 0.5]))
            _, instances = place_instances(bg.image, placements, 0.0, min_vis)
            oracle = zbuffer_oracle((128, 128), placements, min_vis)
            assert len(instances) == len(oracle)
            for inst, (idx, (omask, ofrac)) in zip(instances, sorted(oracle.items())):
                assert np.array_equal(inst.mask, omask)
                assert inst.visible_fraction == pytest.approx(ofrac)
            # pairwise disjoint
            total = np.zeros((128, 128), dtype=np.int32)
            for inst in instances:
                total += inst.mask
            assert total.max() <= 1

    def test_initial_instances_participate_in_occlusion(self):
        bg = make_background()
        pre_mask = np.zeros((128, 128), dtype=bool)
        pre_mask[40:60, 40:60] = True
        bg.instances = [(CAT, pre_mask)]
        cover = np.ones((30, 30), dtype=bool)
        placements = [(DOG, make_asset(cover).image, cover, (35, 35), "a")]
        _, instances = place_instances(
            bg.image, placements, 0.0, 0.25,
            initial=[(CAT, pre_mask, "real/0")],
        )
        assert len(instances) == 1  # the pre-existing cat is fully covered
        assert instances[0].label == DOG


class TestComposeSample:
    def make_pool(self, n=6):
        masks = [rasterize_disk(40, 40, 20, 20, 14) for _ in range(n)]
        return [make_asset(m, DOG if i % 2 else CAT, seed=i, index=i) for i, m in enumerate(masks)]

    def test_instance_invariants(self):
        params = AugmentParams(blur_sigma=1.0)
        rng = np.random.default_rng(9)
        sample = compose_sample(make_background(160, 160), self.make_pool(4), rng, params)
        assert 1 <= len(sample.instances) <= params.pastes_per_bg
        total = np.zeros((160, 160), dtype=np.int32)
        for inst in sample.instances:
            assert inst.bbox == mask_to_bbox(inst.mask)
            assert 0 < inst.visible_fraction <= 1.0
            total += inst.mask
        assert total.max() <= 1

    def test_determinism(self):
        params = AugmentParams()
        a = compose_sample(make_background(), self.make_pool(4), np.random.default_rng(5), params)
        b = compose_sample(make_background(), self.make_pool(4), np.random.default_rng(5), params)
        assert np.array_equal(a.image, b.image)
        assert len(a.instances) == len(b.instances)
        for x, y in zip(a.instances, b.instances):
            assert np.array_equal(x.mask, y.mask)

    def test_wrong_asset_count_rejected(self):
        with pytest.raises(ValueError):
            compose_sample(
                make_background(), self.make_pool(3), np.random.default_rng(0), AugmentParams()
            )

    def test_no_background(self):
        with pytest.raises(NoBackground):
            compose_sample(None, self.make_pool(4), np.random.default_rng(0), AugmentParams())


class TestBuildDataset:
    def make_pools(self, n_fg=5, n_bg=3):
        masks = [rasterize_disk(36, 36, 18, 18, 12) for _ in range(n_fg)]
        fg = [make_asset(m, DOG, seed=i, index=i) for i, m in enumerate(masks)]
        bg = [make_background(128, 128, value=20 * (i + 1)) for i in range(n_bg)]
        return fg, bg

    def test_target_one(self):
        fg, bg = self.make_pools()
        samples = list(build_dataset(fg, bg, 1, seed=3, params=AugmentParams()))
        assert len(samples) == 1
        assert len(samples[0].instances) <= 4

    def test_exact_target_and_determinism(self):
        fg, bg = self.make_pools()
        params = AugmentParams(blur_sigma=0.0)
        a = list(build_dataset(fg, bg, 9, seed=12, params=params))
        b = list(build_dataset(fg, bg, 9, seed=12, params=params))
        assert len(a) == len(b) == 9
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.image, sb.image)
            assert sa.provenance == sb.provenance

    def test_every_asset_used_before_repeats(self):
        fg, bg = self.make_pools(n_fg=6)
        params = AugmentParams()
        samples = list(build_dataset(fg, bg, 6, seed=1, params=params))
        uses = []
        for s in samples:
            uses.extend(s.provenance["assets"])
        # 24 pastes over 6 assets: each full round of 6 uses each exactly once
        for start in range(0, 24, 6):
            window = uses[start : start + 6]
            assert len(set(window)) == 6
        counts = {a: uses.count(a) for a in set(uses)}
        assert set(counts.values()) == {4}

    def test_empty_pool(self):
        fg, bg = self.make_pools()
        with pytest.raises(EmptyPool):
            list(build_dataset([], bg, 1, seed=0, params=AugmentParams()))
        with pytest.raises(EmptyPool):
            list(build_dataset(fg, [], 1, seed=0, params=AugmentParams()))

    def test_params_validation(self):
        with pytest.raises(ValueError):
            AugmentParams(rotation_range=270)
        with pytest.raises(ValueError):
            AugmentParams(scale_range=(0.5, 0.2))
        with pytest.raises(ValueError):
            AugmentParams(blur_sigma=-1)
        with pytest.raises(ValueError):
            AugmentParams(min_visible_fraction=0.0)
