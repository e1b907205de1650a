"""Similarity-based candidate filtering.

Two rules: keep images faithful to their generation prompt, and reject
images resembling any interest class.  They combine linearly as
faithfulness - w * max(class similarities); for foreground candidates the
candidate's own class is excluded from the penalty.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import EmptyBatch
from .gateway import GatewayClient, GeneratedImage
from .prompting import SLOT, ClassLabel

DEFAULT_CLASS_PROMPT = "a photo of <object>"


@dataclass(frozen=True)
class SelectionPolicy:
    """How many candidates to keep and how hard to penalize class hits."""

    keep_k: int | None = None
    keep_fraction: float | None = None
    class_penalty_weight: float = 1.0
    class_prompt_pattern: str = DEFAULT_CLASS_PROMPT

    def __post_init__(self) -> None:
        if (self.keep_k is None) == (self.keep_fraction is None):
            raise ValueError("exactly one of keep_k / keep_fraction must be set")
        if self.keep_k is not None and self.keep_k < 1:
            raise ValueError("keep_k must be >= 1")
        if self.keep_fraction is not None and not 0.0 < self.keep_fraction <= 1.0:
            raise ValueError("keep_fraction must be in (0, 1]")
        if self.class_penalty_weight < 0:
            raise ValueError("class_penalty_weight must be >= 0")
        if self.class_prompt_pattern.count(SLOT) != 1:
            raise ValueError(f"class_prompt_pattern must contain {SLOT} exactly once")

    def keep_count(self, n: int) -> int:
        if self.keep_k is not None:
            return min(self.keep_k, n)
        return min(math.ceil(self.keep_fraction * n), n)


@dataclass(frozen=True)
class ScoredImage:
    """A candidate with faithfulness and per-class similarity scores."""

    png: bytes
    prompt: str
    seed: int
    index: int
    faithfulness: float
    class_similarities: Mapping[str, float] = field(default_factory=dict)

    @property
    def candidate_id(self) -> str:
        return f"{self.seed}_{self.index}"


def composite_score(
    faithfulness: float,
    class_similarities: Mapping[str, float],
    weight: float = 1.0,
    exclude: str | None = None,
) -> float:
    """faithfulness - weight * max(class similarities); empty map counts 0."""
    sims = [v for k, v in class_similarities.items() if k != exclude]
    penalty = max(sims) if sims else 0.0
    return faithfulness - weight * penalty


def rank_and_select(
    candidates: list[ScoredImage],
    policy: SelectionPolicy,
    exclude_label: str | None = None,
) -> list[ScoredImage]:
    """Top candidates by composite score, ties broken by (seed, index).

    Returns the top keep_k, or top ceil(keep_fraction * n); keep_k >= n
    returns everything (reordered by score).
    """
    if not candidates:
        raise EmptyBatch("cannot select from an empty candidate batch")
    keyed = sorted(
        candidates,
        key=lambda c: (
            -composite_score(
                c.faithfulness, c.class_similarities, policy.class_penalty_weight, exclude_label
            ),
            c.seed,
            c.index,
        ),
    )
    return keyed[: policy.keep_count(len(candidates))]


def score_batch(
    candidates: list[GeneratedImage],
    prompt: str,
    interest_classes: Iterable[ClassLabel],
    gateway: GatewayClient,
    class_prompt_pattern: str = DEFAULT_CLASS_PROMPT,
) -> list[ScoredImage]:
    """Score candidates against their prompt plus one probe per class.

    The first score is faithfulness; the rest populate the class map.
    Gateway errors propagate annotated with the failing batch position.
    """
    classes = list(interest_classes)
    texts = [prompt] + [class_prompt_pattern.replace(SLOT, c.name) for c in classes]
    scored = []
    for pos, cand in enumerate(candidates):
        try:
            scores = gateway.score_image_text(cand.png, texts)
        except Exception as exc:
            exc.args = (f"batch position {pos} ({cand.candidate_id}): {exc}",)
            raise
        scored.append(
            ScoredImage(
                png=cand.png,
                prompt=cand.prompt,
                seed=cand.seed,
                index=cand.index,
                faithfulness=scores[0],
                class_similarities={c.name: s for c, s in zip(classes, scores[1:])},
            )
        )
    return scored


def write_selection_report(
    path: str | Path,
    candidates: list[ScoredImage],
    selected: list[ScoredImage],
    policy: SelectionPolicy,
    exclude_label: str | None = None,
) -> None:
    """Per-batch audit CSV: id, faithfulness, max class sim, composite, kept."""
    kept = {c.candidate_id for c in selected}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["candidate_id", "faithfulness", "max_class_sim", "composite", "kept"])
        for c in candidates:
            sims = [v for k, v in c.class_similarities.items() if k != exclude_label]
            writer.writerow(
                [
                    c.candidate_id,
                    f"{c.faithfulness:.6f}",
                    f"{max(sims) if sims else 0.0:.6f}",
                    f"{composite_score(c.faithfulness, c.class_similarities, policy.class_penalty_weight, exclude_label):.6f}",
                    int(c.candidate_id in kept),
                ]
            )
