"""The ``callctx`` command line.

Exit codes: 0 on success, 1 on a stage failure, 2 on a config error.  Every
subcommand is a thin wrapper over one pipeline stage so pipelines can be
rebuilt piecemeal from their JSONL artifacts.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .assembly import PRESETS, TEMPLATES
from .extraction import FilterConfig
from .pipeline import (
    ConfigError,
    StageError,
    artifact_digest,
    load_config,
    load_universe,
    pipeline_run,
    stage_assemble,
    stage_coverage,
    stage_envs,
    stage_eval,
    stage_extract,
    stage_resolve,
    stage_split,
)
from .splits import SplitError, sample_split, ImportGraph


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
@click.version_option()
def main() -> None:
    """Extract, resolve, assemble and evaluate function-call argument
    completion datasets."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--force", is_flag=True, help="Re-run stages whose outputs already exist.")
def run(config_path: str, out_dir: str, force: bool) -> None:
    """Run the full pipeline from a declarative config file."""
    try:
        config = load_config(config_path)
    except ConfigError as exc:
        _fail(str(exc), 2)
    try:
        manifest = pipeline_run(config, out_dir, force=force)
    except StageError as exc:
        _fail(str(exc), 1)
    for name, stage in manifest.stages.items():
        state = "cached" if stage["skipped"] else f"{stage['seconds']}s"
        click.echo(f"{name}: {state} {stage['counts']}")
    click.echo(f"manifest: {Path(out_dir) / 'run_manifest.json'}")


@main.group()
def envs() -> None:
    """Environment building."""


@envs.command("build")
@click.option("--registry-list", "registry_list", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--jobs", default=1, show_default=True, type=int)
def envs_build(registry_list: str, out_dir: str, jobs: int) -> None:
    """Build isolated per-project environments.

    The registry list is a JSON file: {"registry": dir, "projects": [names]}
    (an empty or missing project list means every registry package).
    """
    try:
        spec = json.loads(Path(registry_list).read_text(encoding="utf-8"))
        registry = spec["registry"]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        _fail(f"bad registry list: {exc}", 2)
    try:
        accepted, rejected = stage_envs(
            registry, out_dir, projects=spec.get("projects") or None, jobs=jobs
        )
    except Exception as exc:
        _fail(str(exc), 1)
    for name in accepted:
        click.echo(f"built {name}")
    for name, reason in sorted(rejected.items()):
        click.echo(f"rejected {name}: {reason}")


@main.command()
@click.option("--universe", "universe_paths", required=True, multiple=True,
              type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--keep-rejected", is_flag=True)
@click.option("--denylist", default=None, help="Comma-separated callee denylist override.")
def extract(universe_paths, out_path, keep_rejected, denylist) -> None:
    """Extract and filter call instances from one or more universes."""
    from .environments import SourceUniverse

    universes = [
        SourceUniverse.from_json(json.loads(Path(p).read_text(encoding="utf-8")))
        for p in universe_paths
    ]
    filter_config = FilterConfig()
    if denylist is not None:
        filter_config.denylist = {d.strip() for d in denylist.split(",") if d.strip()}
    try:
        counts = stage_extract(
            universes, Path(out_path), keep_rejected=keep_rejected,
            filter_config=filter_config,
        )
    except Exception as exc:
        _fail(str(exc), 1)
    click.echo(json.dumps(counts, sort_keys=True))


@main.command()
@click.option("--instances", "instances_path", required=True, type=click.Path(exists=True))
@click.option("--envs", "envs_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def resolve(instances_path, envs_dir, out_path) -> None:
    """Resolve kept instances to their definitions via the analyzer."""
    try:
        counts = stage_resolve(Path(instances_path), Path(envs_dir), Path(out_path))
    except Exception as exc:
        _fail(str(exc), 1)
    click.echo(json.dumps(counts, sort_keys=True))


@main.command()
@click.option("--graph", "graph_path", required=True, type=click.Path(exists=True))
@click.option("--level", default=4, show_default=True, type=click.IntRange(1, 4))
@click.option("--ratio", default="10:1:1", show_default=True)
@click.option("--seed", default=7, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
def split(graph_path, level, ratio, seed, out_path) -> None:
    """Sample a dependency-isolated train/valid/test split from a graph file."""
    try:
        parts = tuple(int(p) for p in ratio.split(":"))
        if len(parts) != 3:
            raise ValueError
    except ValueError:
        _fail(f"ratio must look like 10:1:1, got {ratio}", 2)
    graph = ImportGraph.from_json(json.loads(Path(graph_path).read_text(encoding="utf-8")))
    try:
        manifest = sample_split(graph, level=level, seed=seed, ratio=parts)
    except SplitError as exc:
        _fail(str(exc), 1)
    Path(out_path).write_text(
        json.dumps(manifest.to_json(), sort_keys=True, indent=2), encoding="utf-8"
    )
    click.echo(
        f"train={len(manifest.train)} valid={len(manifest.valid)} test={len(manifest.test)}"
    )
    for warning in manifest.warnings:
        click.echo(f"warning: {warning}", err=True)


@main.command()
@click.option("--resolved", "resolved_path", required=True, type=click.Path(exists=True))
@click.option("--preset", default="finetune", show_default=True,
              type=click.Choice(PRESETS))
@click.option("--template", default="encoder-decoder", show_default=True,
              type=click.Choice(TEMPLATES))
@click.option("--total", default=512, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
def assemble(resolved_path, preset, template, total, out_path) -> None:
    """Render budget-trimmed inputs from resolved instances."""
    try:
        counts = stage_assemble(
            Path(resolved_path), Path(out_path), preset=preset, template=template,
            total=total,
        )
    except Exception as exc:
        _fail(str(exc), 1)
    click.echo(json.dumps(counts, sort_keys=True))


@main.command("eval")
@click.option("--assembled", "assembled_path", required=True, type=click.Path(exists=True))
@click.option("--predictor", default="copy-threshold:0.8", show_default=True,
              help='empty | copy-top | copy-threshold:T | external:cmd="..."')
@click.option("--k-max", default=10, show_default=True, type=int)
@click.option("--no-require-all-bound", is_flag=True,
              help="Disable the all-required-parameters-bound check.")
@click.option("--out", "out_path", required=True, type=click.Path())
def eval_cmd(assembled_path, predictor, k_max, no_require_all_bound, out_path) -> None:
    """Score a predictor over assembled instances."""
    try:
        counts = stage_eval(
            Path(assembled_path), Path(out_path), predictor_spec=predictor,
            k_max=k_max, require_all_bound=not no_require_all_bound,
        )
    except ConfigError as exc:
        _fail(str(exc), 2)
    except Exception as exc:
        _fail(str(exc), 1)
    click.echo(json.dumps(counts, sort_keys=True))


@main.command()
@click.option("--assembled", "assembled_path", required=True, type=click.Path(exists=True))
@click.option("--k-max", default=10, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
def coverage(assembled_path, k_max, out_path) -> None:
    """Exact-usage coverage curve over assembled instances."""
    try:
        counts = stage_coverage(Path(assembled_path), Path(out_path), k_max=k_max)
    except Exception as exc:
        _fail(str(exc), 1)
    click.echo(json.dumps(counts, sort_keys=True))


if __name__ == "__main__":
    main()
