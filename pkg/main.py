# imports from click
import json
import logging
import sys
from pathlib import Path

import click

# import "objects" from "this" project
from __init__ import config  # settings shared by every module
from model import codegraph, pipeline
from model.errors import CheckmateError
from model.llm import HttpProvider, ScriptedProvider
from model.manifest import load_manifest


def configure_logging(verbose):
    level = logging.DEBUG if verbose else getattr(logging, str(config['LOG_LEVEL']).upper(), logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def make_provider(kind, script):
    if kind == "scripted":
        if script is None:
            raise click.UsageError("--provider scripted needs --script")
        return ScriptedProvider.from_file(script)
    provider = HttpProvider()
    provider.check()
    return provider


def fail(error):
    '''Prints a CheckmateError and exits with its family code'''
    click.secho(f"{type(error).__name__}: {error.message}", fg="red", err=True)
    sys.exit(error.exit_code)


# Command group, one command per entry point
@click.group(help="Approximate a C codebase for intermittent devices")
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
def cli(verbose):
    configure_logging(verbose)


@cli.command("run")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--provider", type=click.Choice(["http", "scripted"]), default="http", show_default=True)
@click.option("--script", type=click.Path(exists=True, dir_okay=False), help="JSON array of replies for --provider scripted")
@click.option("--iterations", type=click.IntRange(min=1), default=None, help=f"Tuner budget [default: {config['TUNE_ITERATIONS']}]")
@click.option("--error-bound", type=click.FloatRange(0.0, 1.0, min_open=True), default=None,
              help="Overrides the manifest's error_bound")
@click.option("--seed", type=int, default=None, help=f"Tuner seed [default: {config['SEED']}]")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="out", show_default=True)
@click.option("--keep-workdirs", is_flag=True, help="Keep build directories under OUT/work")
def run_command(manifest_path, provider, script, iterations, error_bound, seed, out_dir, keep_workdirs):
    try:
        report = pipeline.run(manifest_path, make_provider(provider, script), out_dir, iterations=iterations,
                              error_bound=error_bound, seed=seed, keep_workdirs=keep_workdirs)
    except CheckmateError as e:
        fail(e)
    click.echo(f"status: {report.status}")
    click.echo(f"e_m: {report.e_m:.4f}  c_r: {report.c_r:.4f}  objective: {report.objective:.4f}")
    click.echo(f"power cycle reduction: {report.reduction:.1f}%")
    for name, value in sorted(report.best_values.items()):
        click.echo(f"  {name} = {value}")
    click.echo(f"report: {Path(out_dir) / pipeline.REPORT_FILE}")


@cli.command("graph")
@click.option("--source", "source_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--dot", "dot_path", type=click.Path(dir_okay=False), help="Write the call graph as DOT")
def graph_command(source_dir, dot_path):
    try:
        _, graph = codegraph.analyze(source_dir)
    except CheckmateError as e:
        fail(e)
    for name in graph.order:
        click.echo(name)
    for caller, callee in graph.removed_edges:
        click.echo(f"removed {caller} -> {callee}", err=True)
    if dot_path:
        Path(dot_path).write_text(graph.to_dot(), encoding="utf-8")


@cli.command("baseline")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--provider", type=click.Choice(["http", "scripted"]), default="http", show_default=True)
@click.option("--script", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="out", show_default=True)
@click.option("--json", "as_json", is_flag=True, help="Print the trace map as JSON")
def baseline_command(manifest_path, provider, script, out_dir, as_json):
    try:
        c_o = pipeline.baseline(load_manifest(manifest_path), make_provider(provider, script), out_dir)
    except CheckmateError as e:
        fail(e)
    if as_json:
        click.echo(json.dumps(c_o, indent=2, sort_keys=True))
        return
    for trace, cycles in sorted(c_o.items()):
        click.echo(f"{trace}: {cycles}")


# this runs the command line when executed directly
if __name__ == "__main__":
    cli()
