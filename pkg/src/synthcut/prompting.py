"""Prompt construction: fixed verbalization templates and caption edit rules.

Template text is data, not code: the bundled manifest carries six
foreground patterns (one ``<object>`` slot each) and sixteen background
context phrases that get wrapped as "A real photo of <context>".  Users
may point the loader at their own manifest to extend either set.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .errors import ConfigError, InvalidLabel, UnknownTemplate

SLOT = "<object>"
BACKGROUND_PREFIX = "A real photo of "

_LABEL_RE = re.compile(r"[a-z0-9][a-z0-9 _-]*")


@dataclass(frozen=True)
class ClassLabel:
    """An object class name plus its dataset category id (ids start at 1)."""

    name: str
    id: int

    def __post_init__(self) -> None:
        if not self.name or not self.name.strip():
            raise InvalidLabel("class name must be non-empty")
        if not _LABEL_RE.fullmatch(self.name):
            raise InvalidLabel(f"class name must be a lowercase token: {self.name!r}")
        if self.id < 1:
            raise InvalidLabel(f"category id must be >= 1, got {self.id}")


def make_label_set(names: list[str]) -> list[ClassLabel]:
    """Build a label set with dense 1-based ids; names must be unique."""
    if len(set(names)) != len(names):
        raise InvalidLabel(f"duplicate class names in {names}")
    return [ClassLabel(name=n, id=i + 1) for i, n in enumerate(names)]


@dataclass(frozen=True)
class PromptTemplate:
    """One verbalization pattern.

    Foreground patterns contain the ``<object>`` slot exactly once;
    background patterns are slot-free context phrases.
    """

    id: int
    kind: str
    pattern: str
    corrected: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("foreground", "background"):
            raise ConfigError(f"unknown template kind {self.kind!r}")
        slots = self.pattern.count(SLOT)
        if self.kind == "foreground" and slots != 1:
            raise ConfigError(
                f"foreground template {self.id} must contain {SLOT} exactly once"
            )
        if self.kind == "background" and slots != 0:
            raise ConfigError(f"background template {self.id} must not contain {SLOT}")


@dataclass(frozen=True)
class TemplateSet:
    foreground: tuple[PromptTemplate, ...]
    background: tuple[PromptTemplate, ...]


def load_templates(path: str | Path | None = None, corrected: bool = False) -> TemplateSet:
    """Load a template manifest; ``corrected=True`` applies misprint overrides.

    The bundled background list intentionally keeps the historical
    "empty kitch" wording; its corrected form ("empty kitchen") ships in
    the manifest as an optional override.
    """
    if path is None:
        text = resources.files("synthcut.data").joinpath("templates.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"template manifest is not valid JSON: {exc}") from exc

    def build(entries: list[dict], kind: str) -> tuple[PromptTemplate, ...]:
        out = []
        for i, entry in enumerate(entries):
            pattern = entry["pattern"]
            if corrected and entry.get("corrected"):
                pattern = entry["corrected"]
            if entry.get("id") != i:
                raise ConfigError(f"{kind} template ids must be dense from 0")
            out.append(
                PromptTemplate(
                    id=i, kind=kind, pattern=pattern, corrected=entry.get("corrected")
                )
            )
        return tuple(out)

    return TemplateSet(
        foreground=build(doc.get("foreground", []), "foreground"),
        background=build(doc.get("background", []), "background"),
    )


@lru_cache(maxsize=4)
def default_templates(corrected: bool = False) -> TemplateSet:
    return load_templates(None, corrected=corrected)


def verbalize_foreground(
    label: ClassLabel, template_id: int, templates: TemplateSet | None = None
) -> str:
    """Fill a foreground template's slot with the class name."""
    templates = templates or default_templates()
    if not 0 <= template_id < len(templates.foreground):
        raise UnknownTemplate(
            f"foreground template id {template_id} out of range "
            f"[0, {len(templates.foreground)})"
        )
    return templates.foreground[template_id].pattern.replace(SLOT, label.name)


def verbalize_background(
    context_id: int, templates: TemplateSet | None = None
) -> str:
    """Wrap a background context phrase as "A real photo of <context>"."""
    templates = templates or default_templates()
    if not 0 <= context_id < len(templates.background):
        raise UnknownTemplate(
            f"background context id {context_id} out of range "
            f"[0, {len(templates.background)})"
        )
    return BACKGROUND_PREFIX + templates.background[context_id].pattern


def foreground_prompts(
    labels: list[ClassLabel], templates: TemplateSet | None = None
) -> list[str]:
    """All foreground prompts, label-major then template order."""
    templates = templates or default_templates()
    return [
        verbalize_foreground(label, t.id, templates)
        for label in labels
        for t in templates.foreground
    ]


def background_prompts(templates: TemplateSet | None = None) -> list[str]:
    """All background prompts in template order."""
    templates = templates or default_templates()
    return [verbalize_background(t.id, templates) for t in templates.background]


@dataclass(frozen=True)
class EditRule:
    """A declarative caption intervention.

    kind "substitute" needs target and replacement, "remove" needs target,
    "append" needs replacement.  Matching is whole-word and case-insensitive;
    multi-word targets tolerate any internal whitespace.
    """

    kind: str
    target: str = ""
    replacement: str = ""

    def __post_init__(self) -> None:
        if self.kind == "substitute":
            if not self.target or not self.replacement:
                raise ConfigError("substitute rule needs target and replacement")
        elif self.kind == "remove":
            if not self.target:
                raise ConfigError("remove rule needs a target")
        elif self.kind == "append":
            if not self.replacement:
                raise ConfigError("append rule needs a replacement")
        else:
            raise ConfigError(f"unknown edit rule kind {self.kind!r}")


def _normalize_ws(text: str) -> str:
    return " ".join(text.split())


def _word_pattern(target: str) -> re.Pattern:
    body = r"\s+".join(re.escape(w) for w in target.split())
    return re.compile(rf"(?<!\w){body}(?!\w)", re.IGNORECASE)


def apply_edit_rules(caption: str, rules: list[EditRule]) -> str:
    """Apply edit rules in order; rules that match nothing are no-ops."""
    if not caption:
        raise ValueError("caption must be non-empty")
    text = _normalize_ws(caption)
    for rule in rules:
        if rule.kind == "substitute":
            text = _word_pattern(rule.target).sub(lambda _: rule.replacement, text)
        elif rule.kind == "remove":
            text = _word_pattern(rule.target).sub(" ", text)
        elif rule.kind == "append":
            text = f"{text} {rule.replacement}" if text else rule.replacement
        text = _normalize_ws(text)
    return text
