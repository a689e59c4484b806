"""
Command line: genscene, sample, train, reconstruct, evaluate.

    python cli.py genscene --out scenes/capsule --views 1
    python cli.py sample --scene scenes/capsule/view_000 --out samples
    python cli.py train --scene scenes/capsule/view_000 --samples samples --out runs/capsule
    python cli.py reconstruct --checkpoint runs/capsule/final.tnsr --scene scenes/capsule/view_000 --out recon.obj
    python cli.py evaluate --scene scenes/capsule/view_000 --recon recon.obj --out metrics.jsonl

Every command accepts ``--config <file>`` and ``--seed``. Failures exit with
2 (usage or configuration), 3 (data) or 4 (numeric) and print one
``error: <message>`` line on standard error.
"""

import sys

import click
import torch

from definitions import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, NUM_THREADS
from exceptions import ConfigError, DataError, NumericError, StateError
from log import logging
from pipeline import Pipeline, PipelineConfig

logger = logging.getLogger(__name__)


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, (click.UsageError, ConfigError)):
        return EXIT_USAGE
    if isinstance(error, NumericError):
        return EXIT_NUMERIC
    if isinstance(error, (DataError, FileNotFoundError, ValueError, StateError)):
        return EXIT_DATA
    return 1


class ReconGroup(click.Group):
    """Group whose failures end in a single stderr line and a category exit code."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            rv = super().main(args=args, prog_name=prog_name, complete_var=complete_var,
                              standalone_mode=False, **extra)
        except click.Abort:
            click.echo("error: aborted", err=True)
            sys.exit(1)
        except click.ClickException as e:
            logger.error(f"Usage error: {e.format_message()}")
            click.echo(f"error: {e.format_message()}", err=True)
            sys.exit(EXIT_USAGE if isinstance(e, click.UsageError) else e.exit_code)
        except Exception as e:
            logger.exception(f"Command failed: {e}")
            message = str(e).splitlines()[0] if str(e) else type(e).__name__
            click.echo(f"error: {message}", err=True)
            sys.exit(exit_code_for(e))
        sys.exit(rv if isinstance(rv, int) else EXIT_OK)


def common_options(command):
    command = click.option("--seed", type=int, default=None, help="Seed for every configuration section.")(command)
    command = click.option("--config", "config_path", type=str, default=None,
                           help="Flat key = value configuration file.")(command)
    return command


def make_pipeline(config_path, seed) -> Pipeline:
    return Pipeline(PipelineConfig.from_file(config_path, seed))


@click.group(cls=ReconGroup)
def cli():
    """Single-view RGB-D implicit surface reconstruction toolkit."""
    torch.set_num_threads(NUM_THREADS)


@cli.command()
@click.option("--out", "out_dir", required=True, help="Scene directory to create.")
@click.option("--views", type=click.IntRange(min=1), default=None, help="Number of orbit views.")
@common_options
def genscene(out_dir, views, config_path, seed):
    """Procedural body mesh and its rendered views."""
    for directory in make_pipeline(config_path, seed).genscene(out_dir, views):
        click.echo(directory)


@cli.command()
@click.option("--scene", "scene_dirs", multiple=True, required=True, help="Scene view directory (repeatable).")
@click.option("--out", "out_dir", required=True, help="Samples directory.")
@common_options
def sample(scene_dirs, out_dir, config_path, seed):
    """Labelled body points and depth-supervision points per scene."""
    for directory in make_pipeline(config_path, seed).sample(scene_dirs, out_dir):
        click.echo(directory)


@cli.command()
@click.option("--scene", "scene_dirs", multiple=True, required=True, help="Scene view directory (repeatable).")
@click.option("--samples", "samples_dir", required=True, help="Samples directory written by 'sample'.")
@click.option("--out", "out_dir", required=True, help="Run directory for checkpoints and the log.")
@common_options
def train(scene_dirs, samples_dir, out_dir, config_path, seed):
    """Train the model end to end."""
    make_pipeline(config_path, seed).train(scene_dirs, samples_dir, out_dir)


@cli.command()
@click.option("--checkpoint", required=True, help="Model checkpoint (.tnsr archive).")
@click.option("--scene", "scene_dir", required=True, help="Scene view directory with the RGB-D input.")
@click.option("--out", "out_path", required=True, help="Output OBJ path.")
@click.option("--m-resolution", type=click.IntRange(min=2), default=None, help="Grid resolution M.")
@click.option("--field-out", "field_path", default=None, help="Optional TNSR dump of the scalar field.")
@common_options
def reconstruct(checkpoint, scene_dir, out_path, m_resolution, field_path, config_path, seed):
    """Evaluate the field on the inference grid and extract the mesh."""
    mesh = make_pipeline(config_path, seed).reconstruct(checkpoint, scene_dir, out_path, m_resolution, field_path)
    click.echo(f"{out_path}: {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles")


@cli.command()
@click.option("--scene", "scene_dirs", multiple=True, required=True, help="Ground-truth scene view directory.")
@click.option("--recon", "recon_paths", multiple=True, required=True, help="Reconstructed OBJ, one per --scene.")
@click.option("--out", "out_path", required=True, help="Metric records (JSON lines).")
@common_options
def evaluate(scene_dirs, recon_paths, out_path, config_path, seed):
    """Chamfer, P2S and normal reprojection against the ground truth."""
    report = make_pipeline(config_path, seed).evaluate(scene_dirs, recon_paths, out_path)
    click.echo(report.to_string(index=False))


if __name__ == "__main__":
    cli()
