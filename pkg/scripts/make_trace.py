#!/usr/bin/env python3

""" make_trace.py
Writes an energy-harvesting trace CSV (time_s,voltage_v) for desk experiments.

Usage: Run from the root of the project:
> scripts/make_trace.py constant --volts 3.3 --seconds 0.5 traces/constant.csv
> scripts/make_trace.py square --high 3.3 --low 0.0 --period 0.05 traces/square.csv
"""
import os
import sys

import click
import numpy as np
import pandas as pd

# Add the directory containing main.py to the Python path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))
from model.simulator import TRACE_COLUMNS


def write_trace(path, voltages, dt):
    times = np.arange(len(voltages)) * dt
    frame = pd.DataFrame({TRACE_COLUMNS[0]: times, TRACE_COLUMNS[1]: voltages})
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.9g")
    click.echo(f"Wrote {len(frame)} samples to {path}")


@click.group()
def cli():
    pass


@cli.command()
@click.argument("path", type=click.Path(dir_okay=False))
@click.option("--volts", type=float, default=3.3, show_default=True)
@click.option("--seconds", type=float, default=0.5, show_default=True)
@click.option("--dt", type=float, default=1e-4, show_default=True)
def constant(path, volts, seconds, dt):
    samples = max(2, int(round(seconds / dt)))
    write_trace(path, np.full(samples, volts), dt)


@cli.command()
@click.argument("path", type=click.Path(dir_okay=False))
@click.option("--high", type=float, default=3.3, show_default=True)
@click.option("--low", type=float, default=0.0, show_default=True)
@click.option("--period", type=float, default=0.05, show_default=True, help="Seconds per high+low cycle")
@click.option("--duty", type=click.FloatRange(0.0, 1.0), default=0.5, show_default=True)
@click.option("--seconds", type=float, default=1.0, show_default=True)
@click.option("--dt", type=float, default=1e-4, show_default=True)
def square(path, high, low, period, duty, seconds, dt):
    samples = max(2, int(round(seconds / dt)))
    phase = (np.arange(samples) * dt % period) / period
    write_trace(path, np.where(phase < duty, high, low), dt)


if __name__ == "__main__":
    cli()
