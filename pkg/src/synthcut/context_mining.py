"""Mine object-free context phrases from captions of context images.

Captions of user-provided context description images (CDIs) are parsed
with a deliberately simple lexicon-based heuristic: lowercase, strip
punctuation, split into phrase segments at prepositions/conjunctions,
and drop every segment mentioning an interest class or a known object
noun.  Surviving scene phrases become "A real photo of <phrase>" style
generation prompts.  No POS tagger, no LLM: the lexicon plus trailing-s
stemming is the whole parser.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable

from .prompting import ClassLabel
from .util import tokenize

PHRASE_SPLITTERS = frozenset(
    {"on", "in", "at", "near", "beside", "under", "over", "and", "or"}
)
ARTICLES = frozenset({"a", "an", "the"})
LEADING_FILLER = ARTICLES | frozenset(
    {
        "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
        "some", "several", "many", "few", "couple", "group", "bunch", "pair",
        "lot", "lots", "of", "there", "is", "are",
    }
)
# Common caption verbs/participles stripped from segment edges.  A closed
# list, not suffix matching, so nouns like "building" survive.
VERB_WORDS = frozenset(
    {
        "lying", "laying", "sitting", "standing", "riding", "walking", "running",
        "flying", "eating", "drinking", "sleeping", "playing", "looking", "grazing",
        "resting", "jumping", "swimming", "holding", "wearing", "parked", "perched",
        "posing", "staring", "waiting", "leaning",
    }
)


@dataclass(frozen=True)
class Caption:
    """One caption of a CDI; rank is the caption index for that image."""

    text: str
    source_cdi: str = ""
    rank: int = 0

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("caption text must be non-empty")
        if self.rank < 0:
            raise ValueError("caption rank must be >= 0")


@dataclass(frozen=True)
class ContextPhrase:
    """A scene phrase surviving object removal, with its origin caption."""

    phrase: str
    origin: Caption


def load_noun_lexicon(path: str | Path | None = None) -> frozenset[str]:
    """Load the object-noun lexicon (one lowercase token per line)."""
    if path is None:
        text = resources.files("synthcut.data").joinpath("nouns.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


@lru_cache(maxsize=1)
def default_noun_lexicon() -> frozenset[str]:
    return load_noun_lexicon(None)


def _stem_candidates(token: str) -> set[str]:
    """A token plus its singular candidates via trailing-s stemming."""
    cands = {token}
    if token.endswith("ies") and len(token) > 3:
        cands.add(token[:-3] + "y")
    if token.endswith("es") and len(token) > 2:
        cands.add(token[:-2])
    if token.endswith("s") and len(token) > 1:
        cands.add(token[:-1])
    return cands


def _class_names(interest_classes: Iterable[ClassLabel | str]) -> set[str]:
    names = set()
    for c in interest_classes:
        name = c.name if isinstance(c, ClassLabel) else str(c)
        names.update(tokenize(name))
    return names


def extract_context(
    caption: Caption | str,
    interest_classes: Iterable[ClassLabel | str],
    noun_lexicon: Iterable[str] | None = None,
) -> list[ContextPhrase]:
    """Extract object-free scene phrases from a caption, in caption order.

    A segment is dropped outright if any of its tokens (or their
    stemmed singulars) belongs to the interest classes or the noun
    lexicon; this guarantees no interest-class token ever reaches an
    output phrase.  An empty result means "skip this caption".
    """
    if isinstance(caption, str):
        caption = Caption(text=caption)
    lexicon = default_noun_lexicon() if noun_lexicon is None else set(noun_lexicon)
    blocked = _class_names(interest_classes) | set(lexicon)

    tokens = tokenize(caption.text)
    segments: list[list[str]] = [[]]
    for tok in tokens:
        if tok in PHRASE_SPLITTERS:
            segments.append([])
        else:
            segments[-1].append(tok)

    phrases = []
    for seg in segments:
        if not seg:
            continue
        if any(cand in blocked for tok in seg for cand in _stem_candidates(tok)):
            continue
        while seg and seg[0] in LEADING_FILLER:
            seg = seg[1:]
        while seg and seg[0] in VERB_WORDS:
            seg = seg[1:]
        while seg and seg[-1] in VERB_WORDS:
            seg = seg[:-1]
        if seg:
            phrases.append(ContextPhrase(phrase=" ".join(seg), origin=caption))
    return phrases


AUGMENT_PATTERNS = (
    "A real photo of {phrase}",
    "A realistic photo of {phrase}",
    "A photo of {phrase}, color",
)


def augment_context(
    phrases: list[ContextPhrase | str], per_phrase: int = 1
) -> list[str]:
    """Turn context phrases into generation prompts.

    Always emits "A real photo of <phrase>"; per_phrase > 1 adds the
    fixed heuristic variants, in order, capped at the available set.
    """
    if per_phrase < 1:
        raise ValueError("per_phrase must be >= 1")
    n = min(per_phrase, len(AUGMENT_PATTERNS))
    prompts = []
    for p in phrases:
        phrase = p.phrase if isinstance(p, ContextPhrase) else str(p)
        prompts.extend(pat.format(phrase=phrase) for pat in AUGMENT_PATTERNS[:n])
    return prompts


def mine_cdi(
    cdi_png: bytes,
    captions_per_cdi: int,
    gateway,
    interest_classes: Iterable[ClassLabel | str],
    noun_lexicon: Iterable[str] | None = None,
    per_phrase: int = 1,
    source_cdi: str = "",
) -> list[str]:
    """Caption a CDI and return deduplicated augmented context prompts.

    Gateway failures propagate; captions yielding no context are skipped.
    """
    if captions_per_cdi < 1:
        raise ValueError("captions_per_cdi must be >= 1")
    texts = gateway.caption_image(cdi_png, captions_per_cdi)
    prompts: list[str] = []
    for rank, text in enumerate(texts):
        caption = Caption(text=text, source_cdi=source_cdi, rank=rank)
        phrases = extract_context(caption, interest_classes, noun_lexicon)
        prompts.extend(augment_context(phrases, per_phrase))
    return list(dict.fromkeys(" ".join(p.split()) for p in prompts))
