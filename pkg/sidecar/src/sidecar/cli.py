"""Sidecar launcher."""

from __future__ import annotations

import logging

import click

from .app import serve
from .config import SidecarConfig


@click.command()
@click.option("--generator", default="toy", help="text-to-image model id (or 'toy')")
@click.option("--scorer", default="toy", help="image-text similarity model id (or 'toy')")
@click.option("--captioner", default="toy", help="captioning model id (or 'toy')")
@click.option("--device", default="cpu")
@click.option("--max-batch", default=8, type=int)
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8008, type=int)
def main(generator, scorer, captioner, device, max_batch, host, port):
    """Serve the generate/score/caption endpoints."""
    logging.basicConfig(level=logging.INFO)
    config = SidecarConfig(
        generator_model=generator,
        scorer_model=scorer,
        captioner_model=captioner,
        device=device,
        max_batch=max_batch,
        host=host,
        port=port,
    )
    serve(config)


if __name__ == "__main__":
    main()
