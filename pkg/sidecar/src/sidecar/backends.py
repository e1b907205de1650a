"""Model backends, one instance per capability.

ToyGenerator/ToyScorer/ToyCaptioner are procedural and fully
deterministic: they exist so the wire protocol can be served and tested
without any model weights.  The Hf* classes wrap real checkpoints via
diffusers/transformers and are selected purely by configuration.
"""

from __future__ import annotations

import hashlib
import io
import math

import numpy as np
from PIL import Image


def _seed_from(*parts: object) -> int:
    text = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def _png_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG", compress_level=1)
    return buf.getvalue()


class ToyGenerator:
    """Seeded procedural imagery: smooth gradients plus a few color blobs."""

    def __init__(self, model_id: str = "toy"):
        self.model_id = model_id

    def generate(self, prompt: str, n: int, seed: int, width: int, height: int) -> list[bytes]:
        return [self._render(prompt, seed, i, width, height) for i in range(n)]

    def _render(self, prompt: str, seed: int, index: int, w: int, h: int) -> bytes:
        rng = np.random.default_rng(_seed_from(self.model_id, prompt, seed, index))
        yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
        img = np.zeros((h, w, 3), dtype=np.float64)
        for c in range(3):
            base = rng.uniform(60, 190)
            amp = rng.uniform(15, 60)
            fx, fy = rng.uniform(0.3, 1.6, size=2)
            phase = rng.uniform(0, 2 * math.pi)
            img[:, :, c] = base + amp * np.sin(2 * math.pi * (fx * xx + fy * yy) + phase)
        for _ in range(int(rng.integers(1, 4))):
            cx, cy = rng.uniform(0.2, 0.8, size=2)
            radius = rng.uniform(0.05, 0.18)
            blob = ((xx - cx) ** 2 + (yy - cy) ** 2) <= radius * radius
            img[blob] = rng.uniform(30, 225, size=3)
        return _png_bytes(np.clip(img, 0, 255).astype(np.uint8))


def _hashed_embedding(tokens: list[str], dim: int = 64) -> np.ndarray:
    vec = np.zeros(dim)
    for tok in tokens:
        bucket = _seed_from("bucket", tok) % dim
        sign = 1.0 if _seed_from("sign", tok) % 2 else -1.0
        vec[bucket] += sign
    return vec


class ToyScorer:
    """Deterministic pseudo-similarity: cosine between a pixel-statistics
    embedding of the image and a hashed bag-of-tokens embedding of the
    text.  Output is bounded in [-1, 1]; it carries no real semantics and
    exists for protocol conformance and offline testing."""

    def __init__(self, model_id: str = "toy"):
        self.model_id = model_id

    def score(self, png: bytes, texts: list[str]) -> list[float]:
        img = np.asarray(Image.open(io.BytesIO(png)).convert("RGB"), dtype=np.float64)
        pooled = img.reshape(-1, 3)
        stats = np.concatenate(
            [pooled.mean(axis=0), pooled.std(axis=0), np.percentile(pooled, [25, 50, 75], axis=0).ravel()]
        )
        image_vec = np.zeros(64)
        image_vec[: stats.size] = (stats - stats.mean()) / (stats.std() + 1e-9)
        out = []
        for text in texts:
            text_vec = _hashed_embedding(text.lower().split())
            denom = np.linalg.norm(image_vec) * np.linalg.norm(text_vec)
            value = float(image_vec @ text_vec / denom) if denom else 0.0
            out.append(max(-1.0, min(1.0, value)))
        return out


class ToyCaptioner:
    """Deterministic captions derived from an image digest."""

    VOCAB = [
        "gradient", "blobs", "texture", "pattern", "shapes", "tones",
        "composition", "palette", "surface", "contrast",
    ]

    def __init__(self, model_id: str = "toy"):
        self.model_id = model_id

    def caption(self, png: bytes, n: int) -> list[str]:
        digest = hashlib.sha256(png).hexdigest()
        rng = np.random.default_rng(_seed_from(self.model_id, digest))
        words = list(rng.choice(self.VOCAB, size=3, replace=False))
        base = f"a synthetic image with {words[0]} and {words[1]} {words[2]}"
        return [base if i == 0 else f"{base}, variation {i}" for i in range(n)]


class HfGenerator:
    """Text-to-image via a diffusers pipeline (loaded lazily)."""

    def __init__(self, model_id: str, device: str = "cpu"):
        import torch
        from diffusers import AutoPipelineForText2Image

        self._torch = torch
        self.pipe = AutoPipelineForText2Image.from_pretrained(model_id).to(device)
        self.device = device

    def generate(self, prompt: str, n: int, seed: int, width: int, height: int) -> list[bytes]:
        out = []
        for i in range(n):
            generator = self._torch.Generator(device=self.device).manual_seed(
                (seed + i) % (2**63)
            )
            image = self.pipe(
                prompt, num_inference_steps=25, width=width, height=height,
                generator=generator,
            ).images[0]
            buf = io.BytesIO()
            image.save(buf, format="PNG")
            out.append(buf.getvalue())
        return out


class HfScorer:
    """Image-text cosine similarity via a CLIP-style dual encoder."""

    def __init__(self, model_id: str, device: str = "cpu"):
        import torch
        from transformers import CLIPModel, CLIPProcessor

        self._torch = torch
        self.model = CLIPModel.from_pretrained(model_id).to(device)
        self.processor = CLIPProcessor.from_pretrained(model_id)
        self.device = device

    def score(self, png: bytes, texts: list[str]) -> list[float]:
        image = Image.open(io.BytesIO(png)).convert("RGB")
        inputs = self.processor(
            text=texts, images=image, return_tensors="pt", padding=True, truncation=True
        ).to(self.device)
        with self._torch.no_grad():
            img_emb = self.model.get_image_features(pixel_values=inputs["pixel_values"])
            txt_emb = self.model.get_text_features(
                input_ids=inputs["input_ids"], attention_mask=inputs["attention_mask"]
            )
        img_emb = img_emb / img_emb.norm(dim=-1, keepdim=True)
        txt_emb = txt_emb / txt_emb.norm(dim=-1, keepdim=True)
        sims = (txt_emb @ img_emb.T).squeeze(-1)
        return [float(max(-1.0, min(1.0, s))) for s in sims.tolist()]


class HfCaptioner:
    """Image captioning via a vision-language generation model."""

    def __init__(self, model_id: str, device: str = "cpu"):
        import torch
        from transformers import AutoModelForVision2Seq, AutoProcessor

        self._torch = torch
        self.model = AutoModelForVision2Seq.from_pretrained(model_id).to(device)
        self.processor = AutoProcessor.from_pretrained(model_id)
        self.device = device

    def caption(self, png: bytes, n: int) -> list[str]:
        image = Image.open(io.BytesIO(png)).convert("RGB")
        inputs = self.processor(images=image, return_tensors="pt").to(self.device)
        with self._torch.no_grad():
            ids = self.model.generate(
                **inputs, num_return_sequences=n, do_sample=n > 1, num_beams=max(n, 1),
                max_new_tokens=30,
            )
        captions = self.processor.batch_decode(ids, skip_special_tokens=True)
        return [c.strip() or "an image" for c in captions[:n]]


def build_generator(model_id: str, device: str):
    if model_id.startswith("toy"):
        return ToyGenerator(model_id)
    return HfGenerator(model_id, device)


def build_scorer(model_id: str, device: str):
    if model_id.startswith("toy"):
        return ToyScorer(model_id)
    return HfScorer(model_id, device)


def build_captioner(model_id: str, device: str):
    if model_id.startswith("toy"):
        return ToyCaptioner(model_id)
    return HfCaptioner(model_id, device)
