"""COCO-style dataset serialization, mixing with real data, and statistics.

Segmentation is stored as uncompressed column-major RLE (the COCO
"counts" list form) which is exact for arbitrary masks.  Images are PNG
so determinism checks can be byte-level.  annotations.json is written
atomically: it is validated in full before anything hits disk.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image

from .compositor import CompositeSample
from .errors import (
    CategoryMismatch,
    IoFailure,
    SchemaInvariantViolation,
)
from .foreground import mask_to_bbox
from .prompting import ClassLabel
from .util import derive_seed


def rle_encode(mask: np.ndarray) -> dict:
    """Encode a bool mask as COCO uncompressed RLE (column-major counts,
    starting with the zero run)."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    flat = mask.flatten(order="F")
    if flat.size == 0:
        return {"size": [int(h), int(w)], "counts": []}
    changes = np.nonzero(np.diff(flat))[0] + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts = [0] + counts
    return {"size": [int(h), int(w)], "counts": [int(c) for c in counts]}


def rle_decode(rle: dict) -> np.ndarray:
    """Inverse of rle_encode."""
    h, w = rle["size"]
    counts = rle["counts"]
    if sum(counts) != h * w:
        raise SchemaInvariantViolation(
            f"RLE counts sum {sum(counts)} != mask size {h * w}"
        )
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    value = False
    for count in counts:
        if value:
            flat[pos : pos + count] = True
        pos += count
        value = not value
    return flat.reshape((h, w), order="F")


@dataclass
class DatasetManifest:
    """Ordered record of a dataset's images, categories, and seed lineage."""

    name: str
    categories: list[ClassLabel]
    images: list[dict]
    annotation_count: int
    seed_lineage: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "categories": [{"id": c.id, "name": c.name} for c in self.categories],
            "images": self.images,
            "annotation_count": self.annotation_count,
            "seed_lineage": list(self.seed_lineage),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DatasetManifest":
        return cls(
            name=doc["name"],
            categories=[ClassLabel(name=c["name"], id=c["id"]) for c in doc["categories"]],
            images=list(doc["images"]),
            annotation_count=int(doc["annotation_count"]),
            seed_lineage=[int(s) for s in doc.get("seed_lineage", [])],
        )

    def validate(self) -> None:
        ids = [img["id"] for img in self.images]
        if ids != list(range(1, len(ids) + 1)):
            raise SchemaInvariantViolation("manifest image ids must be dense from 1")
        cat_ids = [c.id for c in self.categories]
        if len(set(cat_ids)) != len(cat_ids):
            raise SchemaInvariantViolation("duplicate category ids in manifest")


def _atomic_write_json(doc: dict, path: Path) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        tmp.write_text(json.dumps(doc))
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"failed writing {path}: {exc}") from exc


def _check_coco(doc: dict) -> None:
    image_ids = [img["id"] for img in doc["images"]]
    if image_ids != list(range(1, len(image_ids) + 1)):
        raise SchemaInvariantViolation("image ids must be dense from 1")
    cat_ids = {c["id"] for c in doc["categories"]}
    if len(cat_ids) != len(doc["categories"]):
        raise SchemaInvariantViolation("duplicate category ids")
    sizes = {img["id"]: (img["height"], img["width"]) for img in doc["images"]}
    ann_ids = set()
    for ann in doc["annotations"]:
        if ann["id"] in ann_ids:
            raise SchemaInvariantViolation(f"duplicate annotation id {ann['id']}")
        ann_ids.add(ann["id"])
        if ann["image_id"] not in sizes:
            raise SchemaInvariantViolation(
                f"annotation {ann['id']} references missing image {ann['image_id']}"
            )
        if ann["category_id"] not in cat_ids:
            raise SchemaInvariantViolation(
                f"annotation {ann['id']} references missing category {ann['category_id']}"
            )
        if tuple(ann["segmentation"]["size"]) != sizes[ann["image_id"]]:
            raise SchemaInvariantViolation(
                f"annotation {ann['id']} RLE size mismatches its image"
            )


def emit_coco(
    samples: Iterable[CompositeSample],
    out_dir: str | Path,
    categories: list[ClassLabel],
    *,
    name: str = "synthetic",
    seed_lineage: Iterable[int] = (),
) -> DatasetManifest:
    """Write images/NNNNNN.png plus annotations.json and manifest.json.

    Ids are assigned in stream order; area is the mask popcount.  The
    whole annotation document is consistency-checked before writing, so a
    partial annotations.json is never emitted.
    """
    out = Path(out_dir)
    images_dir = out / "images"
    try:
        images_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {images_dir}: {exc}") from exc

    images_json: list[dict] = []
    annotations: list[dict] = []
    manifest_images: list[dict] = []
    ann_id = 1
    for image_id, sample in enumerate(samples, start=1):
        file_name = f"{image_id:06d}.png"
        h, w = sample.image.shape[:2]
        try:
            Image.fromarray(sample.image).save(images_dir / file_name, compress_level=1)
        except OSError as exc:
            raise IoFailure(f"failed writing {file_name}: {exc}") from exc
        images_json.append({"id": image_id, "file_name": file_name, "width": w, "height": h})
        manifest_images.append(
            {
                "id": image_id,
                "file": f"images/{file_name}",
                "width": w,
                "height": h,
                "origin": "synthetic",
            }
        )
        for inst in sample.instances:
            if inst.bbox != mask_to_bbox(inst.mask):
                raise SchemaInvariantViolation(
                    f"instance bbox {inst.bbox} disagrees with its mask"
                )
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": image_id,
                    "category_id": inst.label.id,
                    "bbox": list(inst.bbox),
                    "segmentation": rle_encode(inst.mask),
                    "area": int(inst.mask.sum()),
                    "iscrowd": 0,
                    "visible_fraction": round(float(inst.visible_fraction), 6),
                }
            )
            ann_id += 1

    doc = {
        "images": images_json,
        "annotations": annotations,
        "categories": [{"id": c.id, "name": c.name} for c in categories],
    }
    _check_coco(doc)
    _atomic_write_json(doc, out / "annotations.json")

    manifest = DatasetManifest(
        name=name,
        categories=list(categories),
        images=manifest_images,
        annotation_count=len(annotations),
        seed_lineage=list(seed_lineage),
    )
    manifest.validate()
    _atomic_write_json(manifest.to_dict(), out / "manifest.json")
    return manifest


@dataclass(frozen=True)
class MixSpec:
    """How to blend a real dataset into a synthetic one."""

    real_manifest: str
    real_fraction: float = 1.0
    include_real_foreground_pastes: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.real_fraction <= 1.0:
            raise ValueError("real_fraction must be in [0, 1]")


def manifest_from_coco(doc: dict, name: str = "real") -> DatasetManifest:
    """Build a manifest view of a COCO annotations document."""
    per_image = {}
    for ann in doc.get("annotations", []):
        per_image[ann["image_id"]] = per_image.get(ann["image_id"], 0) + 1
    images = []
    for idx, img in enumerate(doc["images"], start=1):
        images.append(
            {
                "id": idx,
                "file": img.get("file_name", f"{idx:06d}"),
                "width": img.get("width", 0),
                "height": img.get("height", 0),
                "origin": "real",
                "annotations": per_image.get(img["id"], 0),
            }
        )
    return DatasetManifest(
        name=name,
        categories=[ClassLabel(name=c["name"], id=c["id"]) for c in doc["categories"]],
        images=images,
        annotation_count=len(doc.get("annotations", [])),
        seed_lineage=[],
    )


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load either a synthcut manifest.json or a COCO annotations.json."""
    doc = json.loads(Path(path).read_text())
    if "annotation_count" in doc:
        return DatasetManifest.from_dict(doc)
    if {"images", "categories"} <= doc.keys():
        return manifest_from_coco(doc, name=Path(path).stem)
    raise SchemaInvariantViolation(f"{path} is neither a manifest nor a COCO file")


def mix_datasets(syn: DatasetManifest, spec: MixSpec) -> DatasetManifest:
    """Append a seeded uniform sample of real images after the synthetic
    ones, re-densify ids, and preserve origin flags."""
    real = load_manifest(spec.real_manifest)
    syn_names = {c.name for c in syn.categories}
    real_names = {c.name for c in real.categories}
    if syn_names != real_names:
        raise CategoryMismatch(
            f"category names differ: only-syn={sorted(syn_names - real_names)} "
            f"only-real={sorted(real_names - syn_names)}"
        )

    k = math.ceil(spec.real_fraction * len(real.images))
    rng = np.random.default_rng(derive_seed(*syn.seed_lineage, "mix"))
    picked = sorted(rng.choice(len(real.images), size=k, replace=False).tolist()) if k else []

    images = []
    annotation_count = syn.annotation_count
    for img in syn.images:
        entry = dict(img)
        entry.setdefault("origin", "synthetic")
        images.append(entry)
    for pos in picked:
        entry = dict(real.images[pos])
        entry["origin"] = "real"
        annotation_count += entry.get("annotations", 0)
        images.append(entry)
    for new_id, entry in enumerate(images, start=1):
        entry["id"] = new_id

    mixed = DatasetManifest(
        name=f"{syn.name}+{real.name}",
        categories=list(syn.categories),
        images=images,
        annotation_count=annotation_count,
        seed_lineage=list(syn.seed_lineage) + [derive_seed(*syn.seed_lineage, "mix")],
    )
    mixed.validate()
    return mixed


def dataset_stats(manifest: DatasetManifest, annotations: dict | None = None) -> dict:
    """Instance counts, per-image histogram, mix ratio, mean visibility."""
    n_images = len(manifest.images)
    n_real = sum(1 for img in manifest.images if img.get("origin") == "real")
    report = {
        "images": n_images,
        "synthetic_images": n_images - n_real,
        "real_images": n_real,
        "real_ratio": (n_real / n_images) if n_images else 0.0,
        "annotations": manifest.annotation_count,
        "per_category": {c.name: 0 for c in manifest.categories},
        "instances_per_image": {},
        "mean_instances_per_image": 0.0,
        "mean_visible_fraction": 0.0,
    }
    if not annotations:
        return report

    by_cat = {c.id: c.name for c in manifest.categories}
    per_image: dict[int, int] = {img["id"]: 0 for img in annotations.get("images", [])}
    fractions = []
    for ann in annotations.get("annotations", []):
        name = by_cat.get(ann["category_id"])
        if name is not None:
            report["per_category"][name] += 1
        per_image[ann["image_id"]] = per_image.get(ann["image_id"], 0) + 1
        if "visible_fraction" in ann:
            fractions.append(ann["visible_fraction"])
    hist: dict[int, int] = {}
    for count in per_image.values():
        hist[count] = hist.get(count, 0) + 1
    report["instances_per_image"] = {k: hist[k] for k in sorted(hist)}
    if per_image:
        report["mean_instances_per_image"] = sum(per_image.values()) / len(per_image)
    if fractions:
        report["mean_visible_fraction"] = sum(fractions) / len(fractions)
    return report


def format_stats(report: dict) -> str:
    """Human-readable table for the stats report."""
    lines = [
        f"{'images':<28}{report['images']}",
        f"{'  synthetic':<28}{report['synthetic_images']}",
        f"{'  real':<28}{report['real_images']}",
        f"{'real ratio':<28}{report['real_ratio']:.4%}",
        f"{'annotations':<28}{report['annotations']}",
        f"{'mean instances/image':<28}{report['mean_instances_per_image']:.3f}",
        f"{'mean visible fraction':<28}{report['mean_visible_fraction']:.3f}",
        "per-category instance counts:",
    ]
    for name, count in report["per_category"].items():
        lines.append(f"  {name:<26}{count}")
    lines.append("instances-per-image histogram:")
    for k, v in report["instances_per_image"].items():
        lines.append(f"  {k:<26}{v}")
    return "\n".join(lines)


def validate_dataset(dataset_dir: str | Path, check_masks: bool = True) -> list[str]:
    """Full referential-integrity check of an emitted dataset directory.

    Returns a list of problems (empty means the dataset is valid).  With
    check_masks, each RLE is decoded and its tight bbox and area are
    compared against the stored annotation.
    """
    dataset_dir = Path(dataset_dir)
    problems: list[str] = []
    ann_path = dataset_dir / "annotations.json"
    if not ann_path.is_file():
        return [f"missing {ann_path}"]
    doc = json.loads(ann_path.read_text())
    try:
        _check_coco(doc)
    except SchemaInvariantViolation as exc:
        problems.append(str(exc))

    for img in doc["images"]:
        if not (dataset_dir / "images" / img["file_name"]).is_file():
            problems.append(f"missing image file {img['file_name']}")

    if check_masks:
        for ann in doc["annotations"]:
            mask = rle_decode(ann["segmentation"])
            if int(mask.sum()) != ann["area"]:
                problems.append(f"annotation {ann['id']}: area mismatch")
            if list(mask_to_bbox(mask)) != list(ann["bbox"]):
                problems.append(f"annotation {ann['id']}: bbox mismatch")

    manifest_path = dataset_dir / "manifest.json"
    if manifest_path.is_file():
        manifest = load_manifest(manifest_path)
        try:
            manifest.validate()
        except SchemaInvariantViolation as exc:
            problems.append(str(exc))
        if len(manifest.images) != len(doc["images"]):
            problems.append("manifest image count disagrees with annotations.json")
        if manifest.annotation_count != len(doc["annotations"]):
            problems.append("manifest annotation count disagrees with annotations.json")
    return problems
