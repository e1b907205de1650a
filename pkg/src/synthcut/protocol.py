"""Wire schemas for the three model endpoints.

JSON over HTTP; images travel as base64-encoded PNG.  Request decoding
raises ValueError (a server maps that to HTTP 400); response decoding
raises BadResponse (clients never retry schema violations).

    POST /v1/generate  {"prompt", "n", "seed", "width", "height"} -> {"images": [b64 png]}
    POST /v1/score     {"image", "texts"}                          -> {"scores": [float]}
    POST /v1/caption   {"image", "n"}                              -> {"captions": [str]}
"""

from __future__ import annotations

import base64
import binascii
import math
from dataclasses import dataclass

from .errors import BadResponse

MAX_BATCH = 64
MIN_SIDE, MAX_SIDE = 64, 2048

GENERATE_PATH = "/v1/generate"
SCORE_PATH = "/v1/score"
CAPTION_PATH = "/v1/caption"


@dataclass(frozen=True)
class GenerationRequest:
    """A text-to-image request; sizes are multiples of 8 in [64, 2048]."""

    prompt: str
    n: int
    seed: int
    width: int = 512
    height: int = 512

    def __post_init__(self) -> None:
        if not isinstance(self.prompt, str) or not self.prompt:
            raise ValueError("prompt must be a non-empty string")
        if not 1 <= self.n <= MAX_BATCH:
            raise ValueError(f"n must be in [1, {MAX_BATCH}], got {self.n}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        for side, name in ((self.width, "width"), (self.height, "height")):
            if not MIN_SIDE <= side <= MAX_SIDE or side % 8:
                raise ValueError(
                    f"{name} must be a multiple of 8 in [{MIN_SIDE}, {MAX_SIDE}]"
                )


def _b64encode(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _b64decode(text: str, what: str) -> bytes:
    if not isinstance(text, str):
        raise BadResponse(f"{what}: expected base64 string")
    try:
        return base64.b64decode(text, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise BadResponse(f"{what}: invalid base64 payload") from exc


def encode_generate_request(req: GenerationRequest) -> dict:
    return {
        "prompt": req.prompt,
        "n": req.n,
        "seed": req.seed,
        "width": req.width,
        "height": req.height,
    }


def decode_generate_request(body: dict) -> GenerationRequest:
    if not isinstance(body, dict):
        raise ValueError("generate request must be a JSON object")
    try:
        return GenerationRequest(
            prompt=body["prompt"],
            n=int(body["n"]),
            seed=int(body["seed"]),
            width=int(body.get("width", 512)),
            height=int(body.get("height", 512)),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed generate request: {exc}") from exc


def encode_generate_response(images: list[bytes]) -> dict:
    return {"images": [_b64encode(img) for img in images]}


def decode_generate_response(body: dict, expected_n: int | None = None) -> list[bytes]:
    if not isinstance(body, dict) or not isinstance(body.get("images"), list):
        raise BadResponse("generate response must contain an 'images' list")
    images = [_b64decode(item, "generate response image") for item in body["images"]]
    if expected_n is not None and len(images) != expected_n:
        raise BadResponse(
            f"generate response returned {len(images)} images, expected {expected_n}"
        )
    return images


def encode_score_request(png: bytes, texts: list[str]) -> dict:
    return {"image": _b64encode(png), "texts": list(texts)}


def decode_score_request(body: dict) -> tuple[bytes, list[str]]:
    if not isinstance(body, dict):
        raise ValueError("score request must be a JSON object")
    texts = body.get("texts")
    if not isinstance(texts, list) or not texts or not all(isinstance(t, str) for t in texts):
        raise ValueError("score request needs a non-empty 'texts' list of strings")
    try:
        image = base64.b64decode(body["image"], validate=True)
    except (KeyError, TypeError, binascii.Error, ValueError) as exc:
        raise ValueError(f"malformed score request image: {exc}") from exc
    return image, texts


def encode_score_response(scores: list[float]) -> dict:
    return {"scores": [float(s) for s in scores]}


def decode_score_response(body: dict, expected_n: int | None = None) -> list[float]:
    if not isinstance(body, dict) or not isinstance(body.get("scores"), list):
        raise BadResponse("score response must contain a 'scores' list")
    scores = []
    for s in body["scores"]:
        if not isinstance(s, (int, float)) or isinstance(s, bool) or not math.isfinite(s):
            raise BadResponse(f"score response contains a non-finite score: {s!r}")
        if not -1.0 <= float(s) <= 1.0:
            raise BadResponse(f"score {s} outside [-1, 1]")
        scores.append(float(s))
    if expected_n is not None and len(scores) != expected_n:
        raise BadResponse(
            f"score response returned {len(scores)} scores, expected {expected_n}"
        )
    return scores


def encode_caption_request(png: bytes, n: int) -> dict:
    return {"image": _b64encode(png), "n": int(n)}


def decode_caption_request(body: dict) -> tuple[bytes, int]:
    if not isinstance(body, dict):
        raise ValueError("caption request must be a JSON object")
    n = body.get("n")
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ValueError("caption request needs integer n >= 1")
    try:
        image = base64.b64decode(body["image"], validate=True)
    except (KeyError, TypeError, binascii.Error, ValueError) as exc:
        raise ValueError(f"malformed caption request image: {exc}") from exc
    return image, n


def encode_caption_response(captions: list[str]) -> dict:
    return {"captions": list(captions)}


def decode_caption_response(body: dict, expected_n: int | None = None) -> list[str]:
    if not isinstance(body, dict) or not isinstance(body.get("captions"), list):
        raise BadResponse("caption response must contain a 'captions' list")
    captions = body["captions"]
    if not all(isinstance(c, str) and c for c in captions):
        raise BadResponse("caption response must contain non-empty strings")
    if expected_n is not None and len(captions) != expected_n:
        raise BadResponse(
            f"caption response returned {len(captions)} captions, expected {expected_n}"
        )
    return list(captions)
