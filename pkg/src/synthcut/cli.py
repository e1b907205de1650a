"""Command-line front end.

Exit codes: 0 success, 2 config error, 3 gateway failure, 4 pipeline
invariant violation.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .dataset_io import dataset_stats, format_stats, load_manifest, validate_dataset
from .errors import BadResponse, ConfigError, GatewayUnavailable, SynthcutError
from .pipeline import Pipeline, PipelineConfig, load_config

EXIT_CONFIG = 2
EXIT_GATEWAY = 3
EXIT_INVARIANT = 4


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
        stream=sys.stderr,
    )


def _load(config_path: str, seed, backend, endpoint, workers) -> PipelineConfig:
    config = load_config(config_path)
    overrides = {}
    if seed is not None:
        overrides["master_seed"] = seed
    if backend is not None:
        overrides["gateway"] = {"backend": backend}
        if endpoint is not None:
            overrides["gateway"]["endpoint"] = endpoint
    elif endpoint is not None:
        overrides["gateway"] = {
            "backend": config.gateway.backend,
            "endpoint": endpoint,
        }
    if workers is not None:
        overrides["workers"] = workers
    if overrides:
        doc = config.to_dict()
        gw = overrides.pop("gateway", None)
        if gw:
            doc["gateway"].update(gw)
        doc.update(overrides)
        from .pipeline import config_from_dict

        config = config_from_dict(doc)
    return config


def _dispatch(fn) -> None:
    try:
        fn()
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (GatewayUnavailable, BadResponse) as exc:
        click.echo(f"gateway failure: {exc}", err=True)
        sys.exit(EXIT_GATEWAY)
    except SynthcutError as exc:
        click.echo(f"pipeline error: {exc}", err=True)
        sys.exit(EXIT_INVARIANT)


def _common(fn):
    fn = click.option("--config", "config_path", required=True, type=click.Path(exists=True))(fn)
    fn = click.option("--out", "out_dir", required=True, type=click.Path())(fn)
    fn = click.option("--seed", type=int, default=None, help="override master_seed")(fn)
    fn = click.option("--backend", type=click.Choice(["mock", "remote"]), default=None)(fn)
    fn = click.option("--endpoint", default=None, help="remote gateway URL")(fn)
    fn = click.option("--workers", type=int, default=None)(fn)
    fn = click.option("-v", "--verbose", is_flag=True, default=False)(fn)
    return fn


@click.group()
def main() -> None:
    """Synthetic cut-paste dataset factory."""


def _stage_command(name: str, stages: list[str]):
    @main.command(name)
    @_common
    def command(config_path, out_dir, seed, backend, endpoint, workers, verbose):
        _configure_logging(verbose)

        def body():
            config = _load(config_path, seed, backend, endpoint, workers)
            pipeline = Pipeline(config, out_dir)
            manifest = None
            for stage in stages:
                if stage == "gen_foregrounds":
                    pipeline.stage_gen_foregrounds()
                elif stage == "gen_backgrounds":
                    pipeline.stage_gen_backgrounds()
                elif stage == "mine_cdi":
                    pipeline.stage_mine_cdi()
                elif stage == "filter":
                    pipeline.stage_filter()
                elif stage == "compose":
                    manifest = pipeline.stage_compose()
                elif stage == "mix":
                    manifest = pipeline.stage_mix(pipeline.stage_compose())
            if manifest is not None:
                click.echo(f"images: {len(manifest.images)}  annotations: {manifest.annotation_count}")

        _dispatch(body)

    command.__name__ = f"cmd_{name.replace('-', '_')}"
    return command


_stage_command("gen-foregrounds", ["gen_foregrounds"])
_stage_command("gen-backgrounds", ["gen_backgrounds"])
_stage_command("mine-cdi", ["mine_cdi"])
_stage_command("filter", ["filter"])
_stage_command("compose", ["compose"])
_stage_command("mix", ["mix"])


@main.command("run")
@_common
def cmd_run(config_path, out_dir, seed, backend, endpoint, workers, verbose):
    """Execute the full recipe (resumable; completed stages are skipped)."""
    _configure_logging(verbose)

    def body():
        config = _load(config_path, seed, backend, endpoint, workers)
        manifest = Pipeline(config, out_dir).run()
        click.echo(f"images: {len(manifest.images)}  annotations: {manifest.annotation_count}")

    _dispatch(body)


@main.command("stats")
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True))
def cmd_stats(dataset_dir):
    """Print dataset statistics as a table."""

    def body():
        dataset_dir_p = Path(dataset_dir)
        manifest = load_manifest(dataset_dir_p / "manifest.json")
        annotations = None
        ann_path = dataset_dir_p / "annotations.json"
        if ann_path.is_file():
            annotations = json.loads(ann_path.read_text())
        click.echo(format_stats(dataset_stats(manifest, annotations)))

    _dispatch(body)


@main.command("validate")
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True))
def cmd_validate(dataset_dir):
    """Referential-integrity check of an emitted dataset."""

    def body():
        problems = validate_dataset(dataset_dir)
        if problems:
            for p in problems:
                click.echo(f"FAIL {p}", err=True)
            sys.exit(EXIT_INVARIANT)
        click.echo("ok")

    _dispatch(body)


if __name__ == "__main__":
    main()
