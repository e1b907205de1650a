"""Uniform client for the generate/score/caption endpoints.

Backed either by the deterministic in-process mock or by a remote HTTP
sidecar speaking the same wire protocol.  Connection-level failures are
retried with exponential backoff; schema violations are never retried.
"""

from __future__ import annotations

import io
import logging
import threading
import time
from collections import Counter
from dataclasses import dataclass

import httpx
from PIL import Image

from . import protocol
from .errors import BadResponse, GatewayUnavailable
from .mock_backend import MockBackend
from .prompting import TemplateSet
from .protocol import GenerationRequest
from .util import derive_seed

log = logging.getLogger("synthcut.gateway")


@dataclass
class GatewayConfig:
    backend: str = "mock"  # "mock" | "remote"
    endpoint: str = "http://127.0.0.1:8008"
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.5
    max_in_flight: int = 8

    def __post_init__(self) -> None:
        if self.backend not in ("mock", "remote"):
            raise ValueError(f"backend must be 'mock' or 'remote', got {self.backend!r}")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class GeneratedImage:
    """A generated PNG plus the provenance used for deterministic tie-breaks."""

    png: bytes
    prompt: str
    seed: int
    index: int

    @property
    def candidate_id(self) -> str:
        return f"{self.seed}_{self.index}"


class GatewayClient:
    """Thread-safe client; an in-flight semaphore bounds remote concurrency."""

    def __init__(
        self,
        config: GatewayConfig | None = None,
        *,
        transport: httpx.BaseTransport | None = None,
        templates: TemplateSet | None = None,
    ):
        self.config = config or GatewayConfig()
        self.calls: Counter[str] = Counter()
        self._calls_lock = threading.Lock()
        self._sem = threading.BoundedSemaphore(self.config.max_in_flight)
        self._mock: MockBackend | None = None
        self._http: httpx.Client | None = None
        if self.config.backend == "mock":
            self._mock = MockBackend(templates)
        else:
            self._http = httpx.Client(
                base_url=self.config.endpoint,
                timeout=self.config.timeout,
                transport=transport,
            )

    # -- plumbing ----------------------------------------------------------

    def _post(self, path: str, body: dict) -> dict:
        assert self._http is not None
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                time.sleep(self.config.backoff_base * (2 ** (attempt - 1)))
            try:
                with self._sem:
                    resp = self._http.post(path, json=body)
            except httpx.HTTPError as exc:
                last_error = exc
                log.warning("gateway retry path=%s attempt=%d error=%s", path, attempt, exc)
                continue
            if resp.status_code >= 500:
                last_error = GatewayUnavailable(f"{path}: HTTP {resp.status_code}")
                log.warning("gateway retry path=%s attempt=%d status=%d", path, attempt, resp.status_code)
                continue
            if resp.status_code != 200:
                raise BadResponse(f"{path}: HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise BadResponse(f"{path}: response is not JSON") from exc
        raise GatewayUnavailable(f"{path}: gave up after {self.config.max_retries + 1} attempts: {last_error}")

    # -- operations ----------------------------------------------------------

    def generate_images(self, req: GenerationRequest) -> list[bytes]:
        """Generate exactly req.n PNGs of the requested size."""
        with self._calls_lock:
            self.calls["generate"] += 1
        body = protocol.encode_generate_request(req)
        if self._mock is not None:
            raw = protocol.encode_generate_response(
                self._mock.generate(protocol.decode_generate_request(body))
            )
        else:
            raw = self._post(protocol.GENERATE_PATH, body)
        images = protocol.decode_generate_response(raw, expected_n=req.n)
        for i, png in enumerate(images):
            size = Image.open(io.BytesIO(png)).size
            if size != (req.width, req.height):
                raise BadResponse(
                    f"generate image {i} has size {size}, requested {(req.width, req.height)}"
                )
        return images

    def score_image_text(self, png: bytes, texts: list[str]) -> list[float]:
        """One similarity score in [-1, 1] per text, order-aligned."""
        if not texts:
            raise ValueError("texts must be non-empty")
        with self._calls_lock:
            self.calls["score"] += 1
        body = protocol.encode_score_request(png, texts)
        if self._mock is not None:
            image, decoded_texts = protocol.decode_score_request(body)
            raw = protocol.encode_score_response(self._mock.score(image, decoded_texts))
        else:
            raw = self._post(protocol.SCORE_PATH, body)
        return protocol.decode_score_response(raw, expected_n=len(texts))

    def caption_image(self, png: bytes, n: int) -> list[str]:
        """n deterministic captions under the mock backend."""
        if n < 1:
            raise ValueError("n must be >= 1")
        with self._calls_lock:
            self.calls["caption"] += 1
        body = protocol.encode_caption_request(png, n)
        if self._mock is not None:
            image, decoded_n = protocol.decode_caption_request(body)
            raw = protocol.encode_caption_response(self._mock.caption(image, decoded_n))
        else:
            raw = self._post(protocol.CAPTION_PATH, body)
        return protocol.decode_caption_response(raw, expected_n=n)

    def close(self) -> None:
        if self._http is not None:
            self._http.close()


def generate_batch(
    client: GatewayClient,
    prompt: str,
    n: int,
    seed: int,
    width: int = 512,
    height: int = 512,
) -> list[GeneratedImage]:
    """Generate n images, chunking into protocol-sized calls.

    Each chunk gets its own derived seed so (seed, index) provenance stays
    unique and the output is independent of the chunk size.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    out: list[GeneratedImage] = []
    produced = 0
    chunk = 0
    while produced < n:
        take = min(protocol.MAX_BATCH, n - produced)
        chunk_seed = derive_seed(seed, "chunk", chunk)
        req = GenerationRequest(prompt=prompt, n=take, seed=chunk_seed, width=width, height=height)
        for i, png in enumerate(client.generate_images(req)):
            out.append(GeneratedImage(png=png, prompt=prompt, seed=chunk_seed, index=i))
        produced += take
        chunk += 1
    return out
