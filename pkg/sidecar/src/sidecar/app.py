"""FastAPI application serving the gateway wire protocol.

Schema violations answer 400; endpoints answer 503 until their model has
finished loading.  A per-capability lock serializes access to each model
instance; requests larger than the configured batch size are chunked
internally so the response still carries exactly n results.
"""

from __future__ import annotations

import asyncio
import base64
import binascii
import logging
import threading

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import backends
from .config import SidecarConfig

log = logging.getLogger("sidecar")

MAX_BATCH_WIRE = 64
MIN_SIDE, MAX_SIDE = 64, 2048


class GenerateBody(BaseModel):
    prompt: str = Field(min_length=1)
    n: int
    seed: int
    width: int = 512
    height: int = 512


class ScoreBody(BaseModel):
    image: str
    texts: list[str]


class CaptionBody(BaseModel):
    image: str
    n: int


def _bad_request(message: str) -> HTTPException:
    return HTTPException(status_code=400, detail=message)


def _decode_image(b64: str) -> bytes:
    try:
        return base64.b64decode(b64, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise _bad_request(f"invalid base64 image: {exc}")


def create_app(config: SidecarConfig | None = None) -> FastAPI:
    config = config or SidecarConfig()

    def load_models(app: FastAPI) -> None:
        # Loading happens off the event loop; endpoints serve 503 meanwhile.
        app.state.models["generate"] = backends.build_generator(
            config.generator_model, config.device
        )
        log.info("generator ready: %s", config.generator_model)
        app.state.models["score"] = backends.build_scorer(config.scorer_model, config.device)
        log.info("scorer ready: %s", config.scorer_model)
        app.state.models["caption"] = backends.build_captioner(
            config.captioner_model, config.device
        )
        log.info("captioner ready: %s", config.captioner_model)

    from contextlib import asynccontextmanager

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        threading.Thread(target=load_models, args=(app,), daemon=True).start()
        yield

    app = FastAPI(title="synthcut-sidecar", lifespan=lifespan)
    app.state.config = config
    app.state.models = {}
    app.state.locks = {
        "generate": asyncio.Lock(),
        "score": asyncio.Lock(),
        "caption": asyncio.Lock(),
    }

    @app.exception_handler(RequestValidationError)
    async def validation_as_400(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    def model_for(capability: str):
        model = app.state.models.get(capability)
        if model is None:
            raise HTTPException(status_code=503, detail=f"{capability} model still loading")
        return model

    @app.get("/healthz")
    def healthz():
        ready = sorted(app.state.models)
        return {"ready": ready, "all_ready": len(ready) == 3}

    @app.post("/v1/generate")
    async def generate(body: GenerateBody):
        if not 1 <= body.n <= MAX_BATCH_WIRE:
            raise _bad_request(f"n must be in [1, {MAX_BATCH_WIRE}]")
        if not 0 <= body.seed < 2**64:
            raise _bad_request("seed must be an unsigned 64-bit integer")
        for side, name in ((body.width, "width"), (body.height, "height")):
            if not MIN_SIDE <= side <= MAX_SIDE or side % 8:
                raise _bad_request(f"{name} must be a multiple of 8 in [{MIN_SIDE}, {MAX_SIDE}]")
        model = model_for("generate")
        images: list[bytes] = []
        async with app.state.locks["generate"]:
            offset = 0
            while offset < body.n:
                take = min(config.max_batch, body.n - offset)
                chunk = await asyncio.to_thread(
                    model.generate, body.prompt, take, body.seed + offset,
                    body.width, body.height,
                )
                images.extend(chunk)
                offset += take
        return {"images": [base64.b64encode(img).decode("ascii") for img in images]}

    @app.post("/v1/score")
    async def score(body: ScoreBody):
        if not body.texts or not all(isinstance(t, str) and t for t in body.texts):
            raise _bad_request("texts must be a non-empty list of non-empty strings")
        png = _decode_image(body.image)
        model = model_for("score")
        async with app.state.locks["score"]:
            scores = await asyncio.to_thread(model.score, png, body.texts)
        return {"scores": [float(max(-1.0, min(1.0, s))) for s in scores]}

    @app.post("/v1/caption")
    async def caption(body: CaptionBody):
        if body.n < 1:
            raise _bad_request("n must be >= 1")
        png = _decode_image(body.image)
        model = model_for("caption")
        async with app.state.locks["caption"]:
            captions = await asyncio.to_thread(model.caption, png, body.n)
        return {"captions": list(captions)}

    return app


def serve(config: SidecarConfig) -> None:
    """Run the sidecar until interrupted."""
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="info")
