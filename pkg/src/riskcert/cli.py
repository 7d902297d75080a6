"""Command line interface.

Subcommands: ``run`` executes an experiment config, ``bound`` recomputes a
certificate for a saved checkpoint on a CSV dataset, ``synth`` generates an
imbalanced Gaussian dataset, and ``oracle-check`` cross-checks the risk
solver against the grid oracle. Exit codes: 0 on success, 1 for invalid
input or configuration, 2 for runtime failures.
"""

from __future__ import annotations

import json
import os

import click
import numpy as np

from . import bounds
from .data import (
    CLASS_RATIO,
    UNIFORM,
    load_csv,
    partition_by_class,
    partition_per_example,
    synth_imbalanced,
    write_csv,
)
from .errors import DimensionMismatch, InputError, RiskcertError
from .experiment import ExperimentConfig, emit_report, run_experiment
from .model import load_checkpoint
from .risk import RiskSpec, constrained_weights, oracle_risk_grid
from .training import CVAR, EVAR, certify


@click.group()
def cli():
    """Risk certificates for subgroup-sensitive classifiers."""


@cli.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--outdir", required=True,
              type=click.Path(file_okay=False),
              help="Directory for report.json and plotdata.csv.")
@click.option("--checkpoints", is_flag=True,
              help="Also save one model checkpoint per grid cell.")
@click.option("--traces", is_flag=True,
              help="Also save per-step bound traces as JSONL.")
def run(config_path, outdir, checkpoints, traces):
    """Run the experiment described by CONFIG_PATH."""
    config = ExperimentConfig.from_file(config_path)
    report = run_experiment(config, outdir=outdir,
                            save_checkpoints=checkpoints, save_traces=traces)
    json_path, csv_path = emit_report(report, outdir)
    click.echo(f"wrote {json_path} and {csv_path} "
               f"({len(report['results'])} grid cells)")


@cli.command()
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.argument("dataset_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--alpha", type=float, required=True,
              help="Tail mass of the risk measure, in (0, 1].")
@click.option("--bound-kind", type=click.Choice(bounds.BOUND_KINDS),
              required=True)
@click.option("--label-column", default="label", show_default=True)
@click.option("--delta", type=float, default=0.05, show_default=True)
@click.option("--lambda", "lam", type=float, default=1.0, show_default=True)
@click.option("--risk", type=click.Choice([CVAR, EVAR]), default=CVAR,
              show_default=True)
@click.option("--reference", type=click.Choice([CLASS_RATIO, UNIFORM]),
              default=CLASS_RATIO, show_default=True,
              help="Subgroup reference weights (subgroup bounds only).")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Seed for sampling the certified network.")
def bound(checkpoint, dataset_csv, alpha, bound_kind, label_column, delta,
          lam, risk, reference, seed):
    """Certify a saved CHECKPOINT on the examples in DATASET_CSV."""
    arch, posterior, prior, n_priors = load_checkpoint(checkpoint)
    data = load_csv(dataset_csv, label_column)
    if data.n_features != arch.n_features:
        raise DimensionMismatch(
            f"dataset has {data.n_features} features, the checkpoint expects "
            f"{arch.n_features}"
        )
    if data.n_classes > arch.n_classes:
        raise DimensionMismatch(
            f"dataset has {data.n_classes} classes, the checkpoint only "
            f"scores {arch.n_classes}"
        )
    if bound_kind in bounds.PER_EXAMPLE_KINDS:
        partition = partition_per_example(data)
    else:
        partition = partition_by_class(data, reference)
    report, _ = certify(bound_kind, arch, posterior, prior, data, partition,
                        alpha=alpha, risk=risk, lam=lam, delta=delta,
                        n_priors=n_priors, sample_seed=[seed, 29])
    click.echo(json.dumps(report.to_json_dict(), sort_keys=True, indent=2))


@cli.command()
@click.argument("counts")
@click.option("-o", "--out", required=True,
              type=click.Path(dir_okay=False),
              help="Output CSV path.")
@click.option("--dx", type=int, default=2, show_default=True,
              help="Feature dimension.")
@click.option("--separation", type=float, default=2.0, show_default=True,
              help="Distance between consecutive class means.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--label-column", default="label", show_default=True)
def synth(counts, out, dx, separation, seed, label_column):
    """Generate Gaussian blobs with per-class COUNTS like '960,40'."""
    try:
        parsed = tuple(int(part.strip()) for part in counts.split(",")
                       if part.strip())
    except ValueError as exc:
        raise click.UsageError(f"COUNTS must be comma-separated integers: {exc}")
    data = synth_imbalanced(parsed, dx, separation, seed)
    directory = os.path.dirname(out)
    if directory:
        os.makedirs(directory, exist_ok=True)
    write_csv(data, out, label_column)
    click.echo(f"wrote {out}: {data.m} examples, {data.n_classes} classes, "
               f"{data.n_features} features")


@cli.command(name="oracle-check")
@click.option("--instances", type=int, default=50, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--resolution", type=float, default=1e-4, show_default=True,
              help="Grid resolution of the oracle.")
def oracle_check(instances, seed, resolution):
    """Cross-check the solver against the exhaustive grid oracle.

    Random instances alternate between the cap-only measure (2 to 4
    subgroups) and the entropic measure (2 subgroups, where the grid is
    exhaustive). Fails with exit code 2 on any disagreement.
    """
    if instances < 1:
        raise click.UsageError("--instances must be >= 1")
    rng = np.random.default_rng(seed)
    tolerance = 5.0 * resolution
    worst = 0.0
    for index in range(instances):
        entropic = index % 2 == 1
        n = 2 if entropic else int(rng.integers(2, 5))
        losses = rng.random(n)
        pi = rng.dirichlet(np.ones(n))
        pi = np.maximum(pi, 1e-3)
        pi = pi / pi.sum()
        alpha = float(rng.uniform(0.05, 1.0))
        spec = RiskSpec.evar(alpha) if entropic else RiskSpec.cvar(alpha)
        solved = constrained_weights(losses, pi, spec).value
        oracle = oracle_risk_grid(losses, pi, spec, resolution)
        gap = abs(solved - oracle)
        worst = max(worst, gap)
        if gap > tolerance:
            raise RiskcertError(
                f"instance {index}: solver {solved:.8f} vs oracle "
                f"{oracle:.8f} (gap {gap:.2e} > {tolerance:.2e})"
            )
    click.echo(f"oracle-check: {instances}/{instances} within "
               f"{tolerance:.2e} (worst gap {worst:.2e})")


def main() -> int:
    try:
        cli.main(standalone_mode=False)
    except click.exceptions.Abort:
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except (InputError, FileNotFoundError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except RiskcertError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except Exception as exc:  # keep tracebacks out of the terminal
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
