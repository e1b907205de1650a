"""Staged pipeline wiring the generation recipes end to end.

Stages write into a workspace directory and are checkpointed: a stage is
skipped on re-run when its recorded config fingerprint matches and its
outputs are still present with the same shape.  Generation dominates the
cost at real scale, so re-runs must never repay it.

Recipes:
    pure_syn       synthetic cutouts on template (and, with CDIs, mined
                   context) backgrounds
    syn_fg         synthetic cutouts pasted onto real backgrounds whose
                   own annotated instances are retained
    syn_plus_real  pure_syn backgrounds plus real backgrounds/cutouts,
                   then the real images appended to the final dataset
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from .assets import (
    BackgroundAsset,
    ForegroundAsset,
    load_background_assets,
    load_foreground_assets,
    save_background_asset,
    save_foreground_asset,
)
from .compositor import AugmentParams, build_dataset
from .context_mining import default_noun_lexicon, extract_context, augment_context, Caption
from .dataset_io import (
    DatasetManifest,
    MixSpec,
    emit_coco,
    load_manifest,
    mix_datasets,
    rle_decode,
    dataset_stats,
)
from .errors import ConfigError, PipelineInvariantViolation
from .foreground import ExtractionParams, asset_from_scored, mask_to_bbox
from .gateway import GatewayClient, GatewayConfig, generate_batch
from .mock_backend import encode_png
from .prompting import (
    ClassLabel,
    load_templates,
    make_label_set,
    verbalize_background,
    verbalize_foreground,
)
from .selection import (
    DEFAULT_CLASS_PROMPT,
    SelectionPolicy,
    rank_and_select,
    score_batch,
    write_selection_report,
)
from .util import derive_seed

log = logging.getLogger("synthcut.pipeline")

RECIPES = ("pure_syn", "syn_fg", "syn_plus_real")


@dataclass(frozen=True)
class Counts:
    """Batch sizes and keep rules; defaults reproduce the reference recipe
    (500/200 foregrounds, 600 backgrounds kept at 0.95, 80 images per
    caption kept at 30, 2 captions per CDI, 60k final samples)."""

    fg_per_template: int = 500
    fg_keep: int = 200
    bg_per_template: int = 600
    bg_keep_fraction: float = 0.95
    bg_per_caption: int = 80
    bg_keep_per_caption: int = 30
    captions_per_cdi: int = 2
    target_size: int = 60_000

    def __post_init__(self) -> None:
        for name in (
            "fg_per_template", "fg_keep", "bg_per_template",
            "bg_per_caption", "bg_keep_per_caption", "captions_per_cdi", "target_size",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"counts.{name} must be >= 1")
        if not 0.0 < self.bg_keep_fraction <= 1.0:
            raise ConfigError("counts.bg_keep_fraction must be in (0, 1]")


@dataclass
class PipelineConfig:
    labels: list[str]
    recipe: str = "pure_syn"
    cdi_dir: str | None = None
    counts: Counts = field(default_factory=Counts)
    augment: AugmentParams = field(default_factory=AugmentParams)
    extraction: ExtractionParams = field(default_factory=ExtractionParams)
    class_penalty_weight: float = 1.0
    class_prompt_pattern: str = DEFAULT_CLASS_PROMPT
    context_variants_per_phrase: int = 1
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    master_seed: int = 0
    image_size: tuple[int, int] = (512, 512)
    template_manifest: str | None = None
    corrected_templates: bool = False
    real_dataset: str | None = None
    real_fraction: float = 1.0
    include_real_foreground_pastes: bool = False
    workers: int = 1

    def __post_init__(self) -> None:
        if not self.labels:
            raise ConfigError("labels must be non-empty")
        if self.recipe not in RECIPES:
            raise ConfigError(f"recipe must be one of {RECIPES}, got {self.recipe!r}")
        if self.recipe in ("syn_fg", "syn_plus_real") and not self.real_dataset:
            raise ConfigError(f"recipe {self.recipe} requires real_dataset")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def label_set(self) -> list[ClassLabel]:
        return make_label_set(self.labels)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["augment"]["scale_range"] = list(self.augment.scale_range)
        doc["image_size"] = list(self.image_size)
        return doc


def _build_section(cls, doc: dict, section: str):
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {section} config: {exc}") from exc


def config_from_dict(doc: dict) -> PipelineConfig:
    doc = dict(doc)
    if "counts" in doc:
        doc["counts"] = _build_section(Counts, doc["counts"], "counts")
    if "augment" in doc:
        aug = dict(doc["augment"])
        if "scale_range" in aug:
            aug["scale_range"] = tuple(aug["scale_range"])
        doc["augment"] = _build_section(AugmentParams, aug, "augment")
    if "extraction" in doc:
        doc["extraction"] = _build_section(ExtractionParams, doc["extraction"], "extraction")
    if "gateway" in doc:
        doc["gateway"] = _build_section(GatewayConfig, doc["gateway"], "gateway")
    if "image_size" in doc:
        size = doc["image_size"]
        doc["image_size"] = (int(size[0]), int(size[1]))
    try:
        return PipelineConfig(**doc)
    except TypeError as exc:
        raise ConfigError(f"bad config: {exc}") from exc


def load_config(path: str | Path) -> PipelineConfig:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot load config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return config_from_dict(doc)


# -- recipe arithmetic -------------------------------------------------------

def recipe_totals(
    counts: Counts,
    n_labels: int,
    *,
    n_cdi: int = 0,
    n_real: int = 0,
    real_foregrounds: int = 0,
    n_fg_templates: int = 6,
    n_bg_templates: int = 16,
) -> dict:
    """Dataset bookkeeping math shared by all recipes (no generation).

    Returns the per-source foreground/background pool sizes and the
    synthetic training-set size implied by the counts.
    """
    syn_fg = n_labels * n_fg_templates * counts.fg_keep
    template_bg = n_bg_templates * math.ceil(counts.bg_keep_fraction * counts.bg_per_template)
    cdi_bg = n_cdi * counts.captions_per_cdi * counts.bg_keep_per_caption
    return {
        "synthetic_foregrounds": syn_fg,
        "template_backgrounds": template_bg,
        "cdi_backgrounds": cdi_bg,
        "real_images": n_real,
        "real_foregrounds": real_foregrounds,
        "training_size": counts.target_size,
    }


def experiment_row(
    experiment: str,
    counts: Counts | None = None,
    *,
    n_labels: int = 20,
    n_cdi: int = 200,
    n_real: int = 200,
    real_foregrounds: int = 541,
    fullset: int = 1464,
) -> dict:
    """Bookkeeping row (#real, #foreground, #background, #size) for the
    standard experiment variants."""
    counts = counts or Counts()
    t = recipe_totals(counts, n_labels, n_cdi=n_cdi, n_real=n_real,
                      real_foregrounds=real_foregrounds)
    rows = {
        "fullset_pure_real": (fullset, None, None, fullset),
        "0shot_pure_syn": (
            0, t["synthetic_foregrounds"], t["template_backgrounds"], t["training_size"],
        ),
        "10shot_pure_real": (n_real, None, None, n_real),
        "10shot_real_cut_paste": (n_real, n_real, n_real, t["training_size"]),
        "10shot_syn_fg": (n_real, t["synthetic_foregrounds"], n_real, t["training_size"]),
        "10shot_pure_syn": (
            n_real,
            t["synthetic_foregrounds"],
            t["template_backgrounds"] + t["cdi_backgrounds"],
            t["training_size"],
        ),
        "10shot_syn_real": (
            n_real,
            t["synthetic_foregrounds"] + real_foregrounds,
            t["template_backgrounds"] + t["cdi_backgrounds"] + n_real,
            t["training_size"],
        ),
        "10shot_syn_real_fullset": (
            fullset,
            t["synthetic_foregrounds"] + real_foregrounds,
            t["template_backgrounds"] + t["cdi_backgrounds"] + n_real,
            t["training_size"] + fullset,
        ),
    }
    if experiment not in rows:
        raise ConfigError(f"unknown experiment {experiment!r}")
    real, fg, bg, size = rows[experiment]
    return {"real_images": real, "foregrounds": fg, "backgrounds": bg, "training_size": size}


# -- checkpoint bookkeeping --------------------------------------------------

def _tree_signature(paths: list[Path]) -> str:
    h = hashlib.sha256()
    for root in paths:
        if not root.exists():
            h.update(b"missing:" + str(root.name).encode())
            continue
        if root.is_file():
            h.update(f"{root.name}:{root.stat().st_size}\n".encode())
            continue
        for p in sorted(root.rglob("*")):
            if p.is_file():
                rel = p.relative_to(root).as_posix()
                h.update(f"{rel}:{p.stat().st_size}\n".encode())
    return h.hexdigest()


class _StageLedger:
    """Records per-stage config fingerprints and output signatures."""

    def __init__(self, out_dir: Path):
        self.path = out_dir / "stage_state.json"
        self.state = {}
        if self.path.is_file():
            self.state = json.loads(self.path.read_text())

    def is_done(self, stage: str, fingerprint: str, outputs: list[Path]) -> bool:
        entry = self.state.get(stage)
        return (
            entry is not None
            and entry["fingerprint"] == fingerprint
            and entry["outputs"] == _tree_signature(outputs)
        )

    def mark(self, stage: str, fingerprint: str, outputs: list[Path]) -> None:
        self.state[stage] = {"fingerprint": fingerprint, "outputs": _tree_signature(outputs)}
        self.path.write_text(json.dumps(self.state, indent=2, sort_keys=True))


def _fingerprint(config: PipelineConfig, *relevant: object) -> str:
    payload = json.dumps(
        [config.master_seed, list(config.labels), list(config.image_size)]
        + [repr(r) for r in relevant],
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()


def _fresh_dir(path: Path) -> None:
    """Clear a stage output tree so stale files from earlier configurations
    cannot leak into this run."""
    import shutil

    if path.exists():
        shutil.rmtree(path)


# -- real dataset loading ----------------------------------------------------

def load_real_backgrounds(
    real_dir: str | Path, labels: list[ClassLabel], retain_instances: bool = True
) -> list[BackgroundAsset]:
    """Real images as background assets; their annotated instances are
    retained as pre-labeled occludable instances when masks decode."""
    real_dir = Path(real_dir)
    doc = json.loads((real_dir / "annotations.json").read_text())
    by_name = {c.name: c for c in labels}
    cat_map = {c["id"]: by_name.get(c["name"]) for c in doc["categories"]}
    anns_by_image: dict[int, list[dict]] = {}
    for ann in doc.get("annotations", []):
        anns_by_image.setdefault(ann["image_id"], []).append(ann)
    assets = []
    for img in doc["images"]:
        path = real_dir / "images" / img["file_name"]
        if not path.is_file():
            path = real_dir / img["file_name"]
        image = np.asarray(Image.open(path).convert("RGB"))
        instances = []
        if retain_instances:
            for ann in anns_by_image.get(img["id"], []):
                label = cat_map.get(ann["category_id"])
                seg = ann.get("segmentation")
                if label is None or not isinstance(seg, dict) or "counts" not in seg:
                    continue
                instances.append((label, rle_decode(seg)))
        assets.append(
            BackgroundAsset(
                image=image,
                prompt="",
                source="real",
                provenance={"seed": 0, "index": img["id"], "file": img["file_name"]},
                instances=instances,
            )
        )
    return assets


def load_real_foregrounds(real_dir: str | Path, labels: list[ClassLabel]) -> list[ForegroundAsset]:
    """Cutouts of annotated real instances (RLE masks only)."""
    real_dir = Path(real_dir)
    doc = json.loads((real_dir / "annotations.json").read_text())
    by_name = {c.name: c for c in labels}
    cat_map = {c["id"]: by_name.get(c["name"]) for c in doc["categories"]}
    images = {img["id"]: img for img in doc["images"]}
    assets = []
    for ann in doc.get("annotations", []):
        label = cat_map.get(ann["category_id"])
        seg = ann.get("segmentation")
        if label is None or not isinstance(seg, dict) or "counts" not in seg:
            continue
        img = images[ann["image_id"]]
        path = real_dir / "images" / img["file_name"]
        if not path.is_file():
            path = real_dir / img["file_name"]
        rgb = np.asarray(Image.open(path).convert("RGB"))
        mask = rle_decode(seg)
        if not mask.any():
            continue
        x, y, w, h = mask_to_bbox(mask)
        assets.append(
            ForegroundAsset(
                image=rgb[y : y + h, x : x + w].copy(),
                mask=mask[y : y + h, x : x + w].copy(),
                label=label,
                provenance={
                    "prompt": "",
                    "seed": 0,
                    "index": ann["id"],
                    "template_id": -1,
                    "real": True,
                },
            )
        )
    return assets


# -- stages ------------------------------------------------------------------

def _save_candidates(directory: Path, scored, prompt: str) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in scored:
        (directory / f"{s.seed}_{s.index}.png").write_bytes(s.png)
        entries.append(
            {
                "seed": s.seed,
                "index": s.index,
                "faithfulness": s.faithfulness,
                "class_similarities": dict(s.class_similarities),
            }
        )
    (directory / "scores.json").write_text(
        json.dumps({"prompt": prompt, "entries": entries}, sort_keys=True)
    )


def _load_candidates(directory: Path):
    from .selection import ScoredImage

    path = directory / "scores.json"
    if not path.is_file():
        raise PipelineInvariantViolation(
            f"no candidates at {directory}; run the generation stages first"
        )
    doc = json.loads(path.read_text())
    out = []
    for entry in doc["entries"]:
        png = (directory / f"{entry['seed']}_{entry['index']}.png").read_bytes()
        out.append(
            ScoredImage(
                png=png,
                prompt=doc["prompt"],
                seed=entry["seed"],
                index=entry["index"],
                faithfulness=entry["faithfulness"],
                class_similarities=entry["class_similarities"],
            )
        )
    return doc["prompt"], out


class Pipeline:
    """Executes the staged recipe inside a workspace directory."""

    def __init__(self, config: PipelineConfig, out_dir: str | Path):
        self.config = config
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.labels = config.label_set
        self.templates = load_templates(config.template_manifest, config.corrected_templates)
        self.gateway = GatewayClient(config.gateway, templates=self.templates)
        self.ledger = _StageLedger(self.out)
        self.candidates = self.out / "candidates"
        self.assets = self.out / "assets"
        self.reports = self.out / "reports"
        self.dataset_dir = self.out / "dataset"

    # each stage returns the list of output roots used for checkpointing

    def _run_stage(self, name: str, fingerprint: str, outputs: list[Path], fn) -> bool:
        if self.ledger.is_done(name, fingerprint, outputs):
            log.info("stage=%s status=skipped (checkpoint match)", name)
            return False
        fn()
        self.ledger.mark(name, fingerprint, outputs)
        return True

    def _map(self, fn, items) -> None:
        """Run fn over items, optionally on the worker pool.  Work items
        write to disjoint directories, so order does not matter."""
        items = list(items)
        if self.config.workers <= 1 or len(items) <= 1:
            for item in items:
                fn(item)
            return
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            list(pool.map(fn, items))

    def stage_gen_foregrounds(self) -> None:
        cfg = self.config
        fingerprint = _fingerprint(cfg, cfg.counts.fg_per_template, cfg.class_prompt_pattern)
        out_root = self.candidates / "fg"

        def one(item):
            label, template = item
            prompt = verbalize_foreground(label, template.id, self.templates)
            seed = derive_seed(cfg.master_seed, "fg", label.name, template.id)
            cands = generate_batch(
                self.gateway, prompt, cfg.counts.fg_per_template, seed,
                cfg.image_size[0], cfg.image_size[1],
            )
            scored = score_batch(
                cands, prompt, self.labels, self.gateway, cfg.class_prompt_pattern
            )
            _save_candidates(out_root / label.name / str(template.id), scored, prompt)
            log.info(
                "stage=gen_foregrounds label=%s template=%d generated=%d",
                label.name, template.id, len(scored),
            )

        def work():
            _fresh_dir(out_root)
            self._map(one, [(l, t) for l in self.labels for t in self.templates.foreground])

        self._run_stage("gen_foregrounds", fingerprint, [out_root], work)

    def stage_gen_backgrounds(self) -> None:
        cfg = self.config
        fingerprint = _fingerprint(cfg, cfg.counts.bg_per_template)
        out_root = self.candidates / "bg" / "template"

        def one(template):
            prompt = verbalize_background(template.id, self.templates)
            seed = derive_seed(cfg.master_seed, "bg", template.id)
            cands = generate_batch(
                self.gateway, prompt, cfg.counts.bg_per_template, seed,
                cfg.image_size[0], cfg.image_size[1],
            )
            scored = score_batch(
                cands, prompt, self.labels, self.gateway, cfg.class_prompt_pattern
            )
            _save_candidates(out_root / str(template.id), scored, prompt)
            log.info(
                "stage=gen_backgrounds template=%d generated=%d", template.id, len(scored)
            )

        def work():
            _fresh_dir(out_root)
            self._map(one, self.templates.background)

        self._run_stage("gen_backgrounds", fingerprint, [out_root], work)

    def stage_mine_cdi(self) -> None:
        cfg = self.config
        if not cfg.cdi_dir:
            return
        cdi_dir = Path(cfg.cdi_dir)
        files = sorted(
            p for p in cdi_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
        )
        if not files:
            raise ConfigError(f"cdi_dir {cdi_dir} contains no images")
        fingerprint = _fingerprint(
            cfg, cfg.counts.bg_per_caption, cfg.counts.captions_per_cdi,
            [f.name for f in files],
        )
        out_root = self.candidates / "bg" / "cdi"
        lexicon = default_noun_lexicon()

        def one(f):
            if f.suffix.lower() == ".png":
                png = f.read_bytes()
            else:
                png = encode_png(np.asarray(Image.open(f).convert("RGB")))
            captions = self.gateway.caption_image(png, cfg.counts.captions_per_cdi)
            for rank, text in enumerate(captions):
                caption = Caption(text=text, source_cdi=f.stem, rank=rank)
                phrases = extract_context(caption, self.labels, lexicon)
                prompts = list(
                    dict.fromkeys(
                        augment_context(phrases, cfg.context_variants_per_phrase)
                    )
                )
                log.info(
                    "stage=mine_cdi cdi=%s caption=%d prompts=%d",
                    f.stem, rank, len(prompts),
                )
                if not prompts:
                    continue
                # Split the caption's generation budget evenly over its
                # prompts, remainder to the earliest prompts.
                per = cfg.counts.bg_per_caption // len(prompts)
                extra = cfg.counts.bg_per_caption % len(prompts)
                scored_all = []
                for pi, prompt in enumerate(prompts):
                    n = per + (1 if pi < extra else 0)
                    if n == 0:
                        continue
                    seed = derive_seed(cfg.master_seed, "cdi", f.stem, rank, pi)
                    cands = generate_batch(
                        self.gateway, prompt, n, seed,
                        cfg.image_size[0], cfg.image_size[1],
                    )
                    scored_all.extend(
                        score_batch(cands, prompt, self.labels, self.gateway,
                                    cfg.class_prompt_pattern)
                    )
                _save_candidates_mixed(
                    out_root / f.stem / str(rank), scored_all, caption.text
                )

        def work():
            _fresh_dir(out_root)
            self._map(one, files)

        self._run_stage("mine_cdi", fingerprint, [out_root], work)

    def stage_filter(self) -> None:
        cfg = self.config
        fingerprint = _fingerprint(
            cfg, cfg.counts.fg_keep, cfg.counts.bg_keep_fraction,
            cfg.counts.bg_keep_per_caption, cfg.class_penalty_weight,
            dataclasses.astuple(cfg.extraction),
            _tree_signature([self.candidates]),
        )
        outputs = [self.assets, self.reports]

        def work():
            _fresh_dir(self.assets)
            _fresh_dir(self.reports)
            self.reports.mkdir(parents=True, exist_ok=True)
            fg_policy = SelectionPolicy(
                keep_k=cfg.counts.fg_keep,
                class_penalty_weight=cfg.class_penalty_weight,
                class_prompt_pattern=cfg.class_prompt_pattern,
            )

            def filter_fg(item):
                label, template = item
                directory = self.candidates / "fg" / label.name / str(template.id)
                _, scored = _load_candidates(directory)
                selected = rank_and_select(scored, fg_policy, exclude_label=label.name)
                write_selection_report(
                    self.reports / f"fg_{label.name}_{template.id}.csv",
                    scored, selected, fg_policy, exclude_label=label.name,
                )
                kept = failures = 0
                for s in selected:
                    try:
                        asset = asset_from_scored(s, label, template.id, cfg.extraction)
                    except Exception as exc:
                        failures += 1
                        log.info(
                            "stage=filter label=%s template=%d candidate=%s dropped: %s",
                            label.name, template.id, s.candidate_id, exc,
                        )
                        continue
                    save_foreground_asset(asset, self.assets)
                    kept += 1
                if kept == 0:
                    raise PipelineInvariantViolation(
                        f"every extraction failed for label={label.name} "
                        f"template={template.id}"
                    )
                log.info(
                    "stage=filter kind=fg label=%s template=%d kept=%d failures=%d",
                    label.name, template.id, kept, failures,
                )

            self._map(filter_fg, [(l, t) for l in self.labels for t in self.templates.foreground])

            bg_policy = SelectionPolicy(
                keep_fraction=cfg.counts.bg_keep_fraction,
                class_penalty_weight=cfg.class_penalty_weight,
                class_prompt_pattern=cfg.class_prompt_pattern,
            )
            for template in self.templates.background:
                directory = self.candidates / "bg" / "template" / str(template.id)
                _, scored = _load_candidates(directory)
                selected = rank_and_select(scored, bg_policy)
                write_selection_report(
                    self.reports / f"bg_template_{template.id}.csv",
                    scored, selected, bg_policy,
                )
                for s in selected:
                    save_background_asset(_scored_to_background(s, f"template/{template.id}"),
                                          self.assets)
                log.info(
                    "stage=filter kind=bg template=%d kept=%d", template.id, len(selected)
                )

            cdi_root = self.candidates / "bg" / "cdi"
            if cdi_root.is_dir():
                cdi_policy = SelectionPolicy(
                    keep_k=cfg.counts.bg_keep_per_caption,
                    class_penalty_weight=cfg.class_penalty_weight,
                    class_prompt_pattern=cfg.class_prompt_pattern,
                )
                for directory in sorted(cdi_root.glob("*/*")):
                    scored = _load_candidates_mixed(directory)
                    if not scored:
                        continue
                    selected = rank_and_select(scored, cdi_policy)
                    rel = directory.relative_to(cdi_root)
                    write_selection_report(
                        self.reports / f"bg_cdi_{rel.as_posix().replace('/', '_')}.csv",
                        scored, selected, cdi_policy,
                    )
                    for s in selected:
                        save_background_asset(
                            _scored_to_background(s, f"cdi/{rel.as_posix()}"), self.assets
                        )
                    log.info(
                        "stage=filter kind=cdi source=%s kept=%d",
                        rel.as_posix(), len(selected),
                    )

        self._run_stage("filter", fingerprint, outputs, work)

    def stage_compose(self) -> DatasetManifest:
        cfg = self.config
        fingerprint = _fingerprint(
            cfg, cfg.counts.target_size, dataclasses.astuple(cfg.augment),
            cfg.recipe, cfg.include_real_foreground_pastes,
            _tree_signature([self.assets]),
        )
        manifest_path = self.dataset_dir / "manifest.json"

        def work():
            _fresh_dir(self.dataset_dir)
            fg_pool = load_foreground_assets(self.assets, self.labels)
            if cfg.recipe in ("syn_fg", "syn_plus_real") and cfg.include_real_foreground_pastes:
                fg_pool = fg_pool + load_real_foregrounds(cfg.real_dataset, self.labels)
            if cfg.recipe == "syn_fg":
                bg_pool = load_real_backgrounds(cfg.real_dataset, self.labels)
            else:
                bg_pool = load_background_assets(self.assets)
                if cfg.recipe == "syn_plus_real":
                    bg_pool = bg_pool + load_real_backgrounds(cfg.real_dataset, self.labels)
            if not fg_pool or not bg_pool:
                raise PipelineInvariantViolation(
                    "asset pools are empty; run the filter stage first"
                )
            compose_seed = derive_seed(cfg.master_seed, "compose")
            stream = build_dataset(
                fg_pool, bg_pool, cfg.counts.target_size, compose_seed, cfg.augment,
                workers=cfg.workers,
            )
            emit_coco(
                stream,
                self.dataset_dir,
                self.labels,
                name="synthetic",
                seed_lineage=[cfg.master_seed, compose_seed],
            )
            log.info(
                "stage=compose target=%d fg_pool=%d bg_pool=%d",
                cfg.counts.target_size, len(fg_pool), len(bg_pool),
            )

        self._run_stage("compose", fingerprint, [self.dataset_dir], work)
        return load_manifest(manifest_path)

    def stage_mix(self, manifest: DatasetManifest) -> DatasetManifest:
        cfg = self.config
        if cfg.recipe != "syn_plus_real":
            return manifest
        fingerprint = _fingerprint(
            cfg, cfg.real_fraction, cfg.real_dataset,
            _tree_signature([self.dataset_dir]),
        )
        mixed_path = self.out / "dataset_mixed.json"

        def work():
            spec = MixSpec(
                real_manifest=str(Path(cfg.real_dataset) / "annotations.json"),
                real_fraction=cfg.real_fraction,
                include_real_foreground_pastes=cfg.include_real_foreground_pastes,
            )
            mixed = mix_datasets(manifest, spec)
            mixed_path.write_text(json.dumps(mixed.to_dict()))
            log.info(
                "stage=mix synthetic=%d total=%d",
                len(manifest.images), len(mixed.images),
            )

        self._run_stage("mix", fingerprint, [mixed_path], work)
        return load_manifest(mixed_path)

    def run(self) -> DatasetManifest:
        self.stage_gen_foregrounds()
        self.stage_gen_backgrounds()
        self.stage_mine_cdi()
        self.stage_filter()
        manifest = self.stage_compose()
        manifest = self.stage_mix(manifest)
        report = dataset_stats(
            manifest, json.loads((self.dataset_dir / "annotations.json").read_text())
        )
        (self.out / "stats.json").write_text(json.dumps(report, sort_keys=True))
        return manifest


def _scored_to_background(scored, source: str) -> BackgroundAsset:
    from .mock_backend import decode_png

    return BackgroundAsset(
        image=decode_png(scored.png),
        prompt=scored.prompt,
        source=source,
        provenance={
            "seed": scored.seed,
            "index": scored.index,
            "faithfulness": scored.faithfulness,
        },
    )


def _save_candidates_mixed(directory: Path, scored, caption_text: str) -> None:
    """Candidate store for CDI batches where prompts vary per image."""
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in scored:
        (directory / f"{s.seed}_{s.index}.png").write_bytes(s.png)
        entries.append(
            {
                "seed": s.seed,
                "index": s.index,
                "prompt": s.prompt,
                "faithfulness": s.faithfulness,
                "class_similarities": dict(s.class_similarities),
            }
        )
    (directory / "scores.json").write_text(
        json.dumps({"caption": caption_text, "entries": entries}, sort_keys=True)
    )


def _load_candidates_mixed(directory: Path):
    from .selection import ScoredImage

    path = directory / "scores.json"
    if not path.is_file():
        return []
    doc = json.loads(path.read_text())
    out = []
    for entry in doc["entries"]:
        png = (directory / f"{entry['seed']}_{entry['index']}.png").read_bytes()
        out.append(
            ScoredImage(
                png=png,
                prompt=entry["prompt"],
                seed=entry["seed"],
                index=entry["index"],
                faithfulness=entry["faithfulness"],
                class_similarities=entry["class_similarities"],
            )
        )
    return out


def run(config: PipelineConfig, out_dir: str | Path) -> DatasetManifest:
    """Execute all stages of the configured recipe; resumable."""
    return Pipeline(config, out_dir).run()
