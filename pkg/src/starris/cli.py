"""Command-line entry point: ``starris gen-data|solve|train|infer|bench``."""

from __future__ import annotations

import copy
import csv
import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from .config import load_config


def _fail(msg: str):
    raise click.ClickException(msg)


@click.group()
def main():
    """Joint beamforming and STAR-RIS coefficient design."""


@main.command("gen-data")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--samples", type=click.IntRange(min=1), required=True)
@click.option("--seed", type=int, default=None, help="Overrides rng_seed from the config file.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def gen_data(config_path, samples, seed, out):
    """Sample channel realizations into a dataset file."""
    from .dataset import generate_dataset

    cfg, _ = load_config(config_path)
    if seed is not None:
        cfg = cfg.replace(rng_seed=seed)
    generate_dataset(cfg, samples, out)
    click.echo(f"wrote {samples} samples to {out}")


def _load_data(path):
    from .dataset import load_dataset

    try:
        return load_dataset(path)
    except (OSError, ValueError) as exc:
        _fail(str(exc))


@main.command()
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--method", type=click.Choice(["ao", "ao-exh"]), default="ao", show_default=True)
@click.option("--starts", type=click.IntRange(min=1), default=16, show_default=True)
@click.option("--limit", type=click.IntRange(min=1), default=None, help="Solve only the first N samples.")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed for the AO initializations.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def solve(data, method, starts, limit, seed, out):
    """Run AO-SCA on every sample and write one CSV row per sample."""
    from .sca import ao_exhaustive, ao_optimize

    ds = _load_data(data)
    n = len(ds) if limit is None else min(limit, len(ds))
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "sum_rate", "phase_iters", "amplitude_iters", "precoder_iters", "outer_iters", "wall_time_s", "modulus_violation"])
        for i in range(n):
            chan = ds[i]
            t0 = time.perf_counter()
            if method == "ao":
                _, _, trace = ao_optimize(chan, ds.cfg, seed=seed)
            else:
                _, _, _, trace, _ = ao_exhaustive(chan, ds.cfg, starts, seed=seed)
            wall = time.perf_counter() - t0
            it = trace.block_iterations
            w.writerow([i, repr(trace.sum_rate[-1]), it["phase"], it["amplitude"], it["precoder"], trace.outer_iterations, f"{wall:.4f}", repr(trace.max_modulus_violation)])
    click.echo(f"solved {n} samples -> {out}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out-model", type=click.Path(dir_okay=False), required=True)
@click.option("--log", "log_path", type=click.Path(dir_okay=False), required=True)
@click.option("--verbose", is_flag=True)
def train(config_path, data, out_model, log_path, verbose):
    """Unsupervised BHGNN training; training keys live in the same config file.

    Writes the best-validation model to OUT_MODEL and the final-epoch model to OUT_MODEL.last.
    """
    from .bhgnn import save_params
    from .training import TrainConfig, train as run_train

    _, extra = load_config(config_path)
    tcfg = TrainConfig.from_items(extra)
    ds = _load_data(data)
    model, log = run_train(ds, tcfg, verbose=verbose)
    save_params(model, out_model)
    last = copy.deepcopy(model)
    last.load_state_dict(log.last_state)
    save_params(last, f"{out_model}.last")
    log.write_csv(log_path)
    click.echo(f"{log.status}; best epoch {log.best_epoch}; model -> {out_model} (last epoch -> {out_model}.last)")


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def infer(model_path, data, out):
    """Predict (W, theta, a) per sample; CSV holds sum rate and per-user SINR."""
    from .bhgnn import load_params
    from .system import sinr

    ds = _load_data(data)
    try:
        model = load_params(model_path, n_tx=ds.cfg.n_tx)
    except ValueError as exc:
        _fail(str(exc))
    k = ds.cfg.n_users
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "sum_rate", *[f"sinr_{j}" for j in range(k)]])
        for i in range(len(ds)):
            chan = ds[i]
            ris, bm = model.predict(chan, ds.cfg.p_max, ds.cfg.noise_power)
            rep = sinr(chan, ris, bm, ds.cfg.noise_power)
            w.writerow([i, repr(rep.sum_rate), *[repr(float(x)) for x in rep.sinr]])
    click.echo(f"inferred {len(ds)} samples -> {out}")


@main.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def bench(spec_path, out):
    """Run an experiment spec; writes results.csv, timing.csv, pe_audit.csv and manifest.json."""
    from .bench import ExperimentSpec, run_bench

    spec = ExperimentSpec.from_text(Path(spec_path).read_text(), spec_path)
    result = run_bench(spec, out)
    for reason in result["skipped"]:
        click.echo(f"skipped: {reason}", err=True)
    for s in result["summary"]:
        click.echo(json.dumps(s))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
