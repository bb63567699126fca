"""Command-line entry points for figure rendering."""

from __future__ import annotations

import sys

import click

from .figures import FigureJob, SchemaError, deff_scaling, learning_curves, \
    phase_heatmap


@click.group()
def main():
    """Render figures from laboratory experiment CSVs."""


def _run(kind, inputs, out, title):
    job = FigureJob(tuple(inputs), kind, out, title=title)
    try:
        {"phase_heatmap": phase_heatmap,
         "learning_curves": learning_curves,
         "deff_scaling": deff_scaling}[kind](job)
    except SchemaError as err:
        raise click.ClickException(str(err))
    click.echo(f"wrote {out}")


@main.command()
@click.option("--in", "inputs", "--input", required=True, multiple=True,
              type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--title", default=None)
def phase(inputs, out, title):
    """Two-panel exponent phase diagram from a phase-grid sweep CSV."""
    _run("phase_heatmap", inputs, out, title)


@main.command()
@click.option("--in", "inputs", "--input", required=True, multiple=True,
              type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--title", default=None)
def curves(inputs, out, title):
    """Learning curves from trace or sample-complexity CSVs."""
    _run("learning_curves", inputs, out, title)


@main.command()
@click.option("--in", "inputs", "--input", required=True, multiple=True,
              type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--title", default=None)
def deff(inputs, out, title):
    """Effective-dimension scaling plot from a deff-scaling sweep CSV."""
    _run("deff_scaling", inputs, out, title)


if __name__ == "__main__":
    sys.exit(main())
