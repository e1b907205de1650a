"""Deterministic in-process stand-in for the three model endpoints.

Every output is a pure function of its inputs, so pipeline runs are
byte-reproducible without any model weights:

* generate: prompts matching a foreground template render one saturated
  ellipse/polygon on an off-white field; everything else renders a
  low-frequency color gradient.  Shape parameters come from a PRNG seeded
  by sha256(prompt, seed, index).
* score: token Jaccard similarity between each text and the prompt the
  image was generated from (recovered from a PNG text chunk), computed
  over content tokens so that scaffolding words like "a photo of" do not
  create spurious similarity.
* caption: fixed syntactic variations of the recorded prompt.
"""

from __future__ import annotations

import colorsys
import io
import math
import re

import numpy as np
from PIL import Image, ImageDraw, PngImagePlugin

from .prompting import SLOT, TemplateSet, default_templates
from .protocol import GenerationRequest
from .util import derive_seed, tokenize

MOCK_PROMPT_KEY = "mockprompt"

# Scaffolding words ignored by the mock similarity measure; without this a
# background generated from "A real photo of blue sky" would score > 0
# against "a photo of dog" purely on shared template words.
MOCK_STOPWORDS = frozenset({"a", "an", "the", "of", "in", "on", "photo", "picture", "image"})


def content_tokens(text: str) -> frozenset[str]:
    return frozenset(t for t in tokenize(text) if t not in MOCK_STOPWORDS)


def token_jaccard(a: str, b: str) -> float:
    ta, tb = content_tokens(a), content_tokens(b)
    union = ta | tb
    if not union:
        return 0.0
    return len(ta & tb) / len(union)


def encode_png(array: np.ndarray, prompt: str | None = None) -> bytes:
    """Encode an HxWx3 uint8 array as PNG, optionally recording its prompt.

    compress_level=1 keeps encoding fast on noisy synthetic images; the
    output is still a deterministic function of the pixel data.
    """
    img = Image.fromarray(array)
    info = None
    if prompt is not None:
        info = PngImagePlugin.PngInfo()
        info.add_text(MOCK_PROMPT_KEY, prompt)
    buf = io.BytesIO()
    img.save(buf, format="PNG", pnginfo=info, compress_level=1)
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    img = Image.open(io.BytesIO(data)).convert("RGB")
    return np.asarray(img)


def png_prompt(data: bytes) -> str | None:
    """Recover the generating prompt recorded in a mock PNG, if any."""
    img = Image.open(io.BytesIO(data))
    value = img.info.get(MOCK_PROMPT_KEY)
    return value if isinstance(value, str) else None


class MockBackend:
    """Implements generate/score/caption deterministically, in process."""

    def __init__(self, templates: TemplateSet | None = None):
        templates = templates or default_templates()
        self._fg_patterns = [
            re.compile(re.escape(t.pattern).replace(re.escape(SLOT), r"([^,]+)"))
            for t in templates.foreground
        ]

    # -- generate ----------------------------------------------------------

    def generate(self, req: GenerationRequest) -> list[bytes]:
        return [
            self._render(req.prompt, req.seed, i, req.width, req.height)
            for i in range(req.n)
        ]

    def _is_foreground_prompt(self, prompt: str) -> bool:
        return any(rx.fullmatch(prompt) for rx in self._fg_patterns)

    def _render(self, prompt: str, seed: int, index: int, w: int, h: int) -> bytes:
        rng = np.random.default_rng(derive_seed(prompt, seed, index))
        if self._is_foreground_prompt(prompt):
            arr = self._render_foreground(rng, w, h)
        else:
            arr = self._render_background(rng, w, h)
        return encode_png(arr, prompt)

    @staticmethod
    def _render_foreground(rng: np.random.Generator, w: int, h: int) -> np.ndarray:
        # Off-white field with mild noise: border-ring variance stays < 5
        # (8-bit units), which downstream extraction relies on.
        base = 243.0 + rng.normal(0.0, 1.2, size=(h, w, 3))
        arr = np.clip(base, 236, 250).astype(np.uint8)

        img = Image.fromarray(arr)
        draw = ImageDraw.Draw(img)
        m = min(w, h)
        cx = w / 2 + rng.uniform(-0.05, 0.05) * m
        cy = h / 2 + rng.uniform(-0.05, 0.05) * m
        hue = rng.uniform(0.0, 1.0)
        rgb = colorsys.hsv_to_rgb(hue, rng.uniform(0.75, 1.0), rng.uniform(0.6, 0.9))
        color = tuple(int(round(255 * c)) for c in rgb)

        if rng.random() < 0.5:
            a = rng.uniform(0.13, 0.22) * m
            b = rng.uniform(0.13, 0.22) * m
            draw.ellipse([cx - a, cy - b, cx + a, cy + b], fill=color)
        else:
            k = int(rng.integers(5, 9))
            radius = rng.uniform(0.15, 0.23) * m
            start = rng.uniform(0, 2 * math.pi)
            pts = []
            for j in range(k):
                ang = start + 2 * math.pi * j / k
                r = radius * rng.uniform(0.75, 1.0)
                pts.append((cx + r * math.cos(ang), cy + r * math.sin(ang)))
            draw.polygon(pts, fill=color)
        return np.asarray(img)

    @staticmethod
    def _render_background(rng: np.random.Generator, w: int, h: int) -> np.ndarray:
        yy, xx = np.meshgrid(
            np.linspace(0.0, 1.0, h), np.linspace(0.0, 1.0, w), indexing="ij"
        )
        channels = []
        for _ in range(3):
            base = rng.uniform(80, 180)
            amp = rng.uniform(20, 55)
            fx, fy = rng.uniform(0.2, 1.3, size=2)
            phase = rng.uniform(0, 2 * math.pi)
            ramp = rng.uniform(-35, 35)
            chan = base + amp * np.sin(2 * math.pi * (fx * xx + fy * yy) + phase) + ramp * xx
            channels.append(chan)
        arr = np.clip(np.stack(channels, axis=-1), 15, 240)
        return arr.astype(np.uint8)

    # -- score -------------------------------------------------------------

    def score(self, png: bytes, texts: list[str]) -> list[float]:
        prompt = png_prompt(png) or ""
        return [token_jaccard(prompt, t) for t in texts]

    # -- caption -----------------------------------------------------------

    def caption(self, png: bytes, n: int) -> list[str]:
        if n < 1:
            raise ValueError("n must be >= 1")
        prompt = png_prompt(png) or "an unlabeled scene"
        base = [
            prompt,
            f"a picture of {prompt}",
            f"there is {prompt}",
            f"a view of {prompt}",
        ]
        return [base[i] if i < len(base) else f"{prompt} take {i}" for i in range(n)]
