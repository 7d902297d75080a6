"""Experiment grid: repetitions x alpha values x bound families.

One repetition splits the data into train/test, the train part again into a
prior half and a posterior half, and standardizes each leaf on its own
statistics. The prior is learned once per (repetition, alpha) cell and
shared by every bound family in that cell; the posterior is trained per
family because each family is its own training objective.

``run_experiment`` returns a JSON-ready payload; ``emit_report`` writes it
as ``report.json`` plus a flat ``plotdata.csv`` for plotting tools.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from . import bounds
from .data import (
    CLASS_RATIO,
    UNIFORM,
    Dataset,
    load_csv,
    partition_by_class,
    partition_per_example,
    standardize,
    stratified_split,
    synth_imbalanced,
)
from .errors import ConfigError
from .model import MlpArch, evaluate, save_checkpoint
from .training import (
    BY_CLASS,
    CVAR,
    EVAR,
    PER_EXAMPLE,
    PriorGrid,
    TrainConfig,
    learn_prior,
    train_posterior,
)

_ALPHA_GRID = (0.01, 0.1, 0.3, 0.5, 0.7, 0.9)


@dataclass(frozen=True)
class ExperimentConfig:
    """Parsed experiment description; every field has a validated default."""

    dataset_csv: str | None = None
    label_column: str = "label"
    synth_counts: tuple[int, ...] | None = None
    synth_dx: int = 2
    synth_separation: float = 2.0
    synth_seed: int = 0
    reference: str = CLASS_RATIO
    risk: str = CVAR
    bounds: tuple[str, ...] = (bounds.SUBGROUPS_KL, bounds.SUBGROUPS_SQRT)
    alpha_grid: tuple[float, ...] = _ALPHA_GRID
    repetitions: int = 3
    seed: int = 0
    train_fraction: float = 0.8
    prior_fraction: float = 0.5
    epochs: int = 10
    batch_size: int = 256
    learning_rate: float = 1e-8
    sigma2: float = 1e-6
    lam: float = 1.0
    delta: float = 0.05
    l_max: float = 4.0
    prior_learning_rates: tuple[float, ...] = (0.1, 0.01, 0.001)
    prior_epochs: int = 20
    hidden: tuple[int, ...] = (128, 128)

    def __post_init__(self):
        if (self.dataset_csv is None) == (self.synth_counts is None):
            raise ConfigError(
                "exactly one of dataset.csv and dataset.synth_counts is required"
            )
        if not self.bounds:
            raise ConfigError("need at least one bound kind")
        for kind in self.bounds:
            if kind not in bounds.BOUND_KINDS:
                raise ConfigError(f"unknown bound kind {kind!r}")
        modes = {PER_EXAMPLE if k in bounds.PER_EXAMPLE_KINDS else BY_CLASS
                 for k in self.bounds}
        if len(modes) > 1:
            raise ConfigError(
                "subgroup bounds and per-example bounds cannot share one run; "
                "they measure risk over different partitions"
            )
        if self.risk not in (CVAR, EVAR):
            raise ConfigError(f"unknown risk kind {self.risk!r}")
        if bounds.MHAMMEDI_ESTIMATE in self.bounds and self.risk != CVAR:
            raise ConfigError("the single-sample baseline bound only holds for cvar")
        if self.reference not in (CLASS_RATIO, UNIFORM):
            raise ConfigError(f"unknown reference {self.reference!r}")
        if not self.alpha_grid:
            raise ConfigError("alpha.grid must not be empty")
        for a in self.alpha_grid:
            if not (0.0 < a <= 1.0):
                raise ConfigError(f"alpha values must lie in (0, 1], got {a}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if not (0.0 < self.train_fraction < 1.0):
            raise ConfigError("split.train_fraction must lie in (0, 1)")
        if not (0.0 < self.prior_fraction < 1.0):
            raise ConfigError("split.prior_fraction must lie in (0, 1)")
        if not self.hidden or any(int(h) < 1 for h in self.hidden):
            raise ConfigError("arch.hidden needs positive layer widths")

    @property
    def mode(self) -> str:
        return (PER_EXAMPLE if self.bounds[0] in bounds.PER_EXAMPLE_KINDS
                else BY_CLASS)

    @staticmethod
    def from_file(path: str) -> "ExperimentConfig":
        """Parse a flat ``key = value`` file; '#' starts a comment."""
        values: dict[str, str] = {}
        with open(path, "r", encoding="utf-8") as handle:
            for lineno, raw in enumerate(handle, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(
                        f"{path}:{lineno}: expected 'key = value', got {line!r}"
                    )
                key, _, value = line.partition("=")
                key = key.strip()
                if key in values:
                    raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
                values[key] = value.strip()
        return ExperimentConfig.from_mapping(values, source=path)

    @staticmethod
    def from_mapping(values: dict[str, str],
                     source: str = "<config>") -> "ExperimentConfig":
        values = dict(values)
        kwargs = {}
        for key, (name, parser) in _CONFIG_KEYS.items():
            if key in values:
                raw = values.pop(key)
                try:
                    kwargs[name] = parser(raw)
                except ConfigError:
                    raise
                except Exception as exc:
                    raise ConfigError(
                        f"{source}: bad value for {key!r}: {exc}"
                    ) from exc
        declared_mode = values.pop("partition.mode", None)
        if values:
            unknown = ", ".join(sorted(values))
            raise ConfigError(f"{source}: unknown config key(s): {unknown}")
        config = ExperimentConfig(**kwargs)
        if declared_mode is not None and declared_mode != config.mode:
            raise ConfigError(
                f"{source}: partition.mode {declared_mode!r} conflicts with "
                f"the bounds, which need {config.mode!r}"
            )
        return config

    def snapshot(self) -> dict:
        """JSON-ready view of every setting, keyed like the config file."""
        return {
            "dataset.csv": self.dataset_csv,
            "dataset.label_column": self.label_column,
            "dataset.synth_counts": (list(self.synth_counts)
                                     if self.synth_counts else None),
            "dataset.synth_dx": self.synth_dx,
            "dataset.synth_separation": self.synth_separation,
            "dataset.synth_seed": self.synth_seed,
            "partition.mode": self.mode,
            "partition.reference": self.reference,
            "risk.kind": self.risk,
            "bounds": list(self.bounds),
            "alpha.grid": [float(a) for a in self.alpha_grid],
            "repetitions": self.repetitions,
            "seed": self.seed,
            "split.train_fraction": self.train_fraction,
            "split.prior_fraction": self.prior_fraction,
            "train.epochs": self.epochs,
            "train.batch_size": self.batch_size,
            "train.learning_rate": self.learning_rate,
            "train.sigma2": self.sigma2,
            "train.lambda": self.lam,
            "train.delta": self.delta,
            "train.l_max": self.l_max,
            "prior.learning_rates": [float(r) for r in self.prior_learning_rates],
            "prior.epochs": self.prior_epochs,
            "arch.hidden": list(self.hidden),
        }


def _strip(raw: str) -> str:
    return raw.strip()


def _ints(raw: str) -> tuple[int, ...]:
    return tuple(int(part.strip()) for part in raw.split(",") if part.strip())


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(part.strip()) for part in raw.split(",") if part.strip())


def _strs(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


_CONFIG_KEYS = {
    "dataset.csv": ("dataset_csv", _strip),
    "dataset.label_column": ("label_column", _strip),
    "dataset.synth_counts": ("synth_counts", _ints),
    "dataset.synth_dx": ("synth_dx", int),
    "dataset.synth_separation": ("synth_separation", float),
    "dataset.synth_seed": ("synth_seed", int),
    "partition.reference": ("reference", _strip),
    "risk.kind": ("risk", _strip),
    "bounds": ("bounds", _strs),
    "alpha.grid": ("alpha_grid", _floats),
    "repetitions": ("repetitions", int),
    "seed": ("seed", int),
    "split.train_fraction": ("train_fraction", float),
    "split.prior_fraction": ("prior_fraction", float),
    "train.epochs": ("epochs", int),
    "train.batch_size": ("batch_size", int),
    "train.learning_rate": ("learning_rate", float),
    "train.sigma2": ("sigma2", float),
    "train.lambda": ("lam", float),
    "train.delta": ("delta", float),
    "train.l_max": ("l_max", float),
    "prior.learning_rates": ("prior_learning_rates", _floats),
    "prior.epochs": ("prior_epochs", int),
    "arch.hidden": ("hidden", _ints),
}


def _load_dataset(config: ExperimentConfig) -> Dataset:
    if config.dataset_csv is not None:
        return load_csv(config.dataset_csv, config.label_column)
    return synth_imbalanced(config.synth_counts, config.synth_dx,
                            config.synth_separation, config.synth_seed)


def _standardized(data: Dataset) -> Dataset:
    return Dataset(standardize(data.features), data.labels.copy())


def _cell_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


def _partition_builder(config: ExperimentConfig):
    if config.mode == PER_EXAMPLE:
        return partition_per_example
    return lambda data: partition_by_class(data, config.reference)


def run_experiment(config: ExperimentConfig, outdir: str | None = None,
                   save_checkpoints: bool = False,
                   save_traces: bool = False) -> dict:
    """Run the full grid and return the report payload.

    When ``outdir`` is given (required for checkpoints or traces), per-cell
    artifacts land under ``outdir/checkpoints`` and ``outdir/traces``.
    """
    if (save_checkpoints or save_traces) and outdir is None:
        raise ConfigError("checkpoints and traces need an output directory")
    full = _load_dataset(config)
    arch = MlpArch((full.n_features, *config.hidden, full.n_classes))
    grid = PriorGrid(config.prior_learning_rates, config.prior_epochs)
    build_partition = _partition_builder(config)
    results: list[dict] = []
    for rep in range(config.repetitions):
        train_full, test = stratified_split(full, config.train_fraction,
                                            seed=[config.seed, 101, rep])
        prior_data, post_data = stratified_split(train_full,
                                                 config.prior_fraction,
                                                 seed=[config.seed, 103, rep])
        prior_data = _standardized(prior_data)
        post_data = _standardized(post_data)
        test_data = _standardized(test)
        post_partition = build_partition(post_data)
        test_partition = build_partition(test_data)
        for alpha_idx, alpha in enumerate(config.alpha_grid):
            prior_cfg = TrainConfig(
                epochs=config.epochs, batch_size=config.batch_size,
                learning_rate=config.learning_rate, sigma2=config.sigma2,
                alpha=alpha, risk=config.risk, bound=config.bounds[0],
                lam=config.lam, delta=config.delta, l_max=config.l_max,
                seed=_cell_seed(config.seed, 211, rep, alpha_idx),
            )
            prior, n_priors = learn_prior(grid, prior_cfg, arch, prior_data,
                                          post_data, build_partition)
            for bound_idx, bound_kind in enumerate(config.bounds):
                cfg = TrainConfig(
                    epochs=config.epochs, batch_size=config.batch_size,
                    learning_rate=config.learning_rate, sigma2=config.sigma2,
                    alpha=alpha, risk=config.risk, bound=bound_kind,
                    lam=config.lam, delta=config.delta, l_max=config.l_max,
                    n_priors=n_priors,
                    seed=_cell_seed(config.seed, 307, rep, alpha_idx,
                                    bound_idx),
                )
                outcome = train_posterior(cfg, arch, prior, post_data,
                                          post_partition)
                metrics = evaluate(arch, outcome.certified_sample, test_data,
                                   test_partition, cfg.risk_spec(),
                                   config.l_max)
                cert = outcome.certificate
                results.append({
                    "bound": bound_kind,
                    "alpha": float(alpha),
                    "repetition": rep,
                    "bound_value": cert.bound,
                    "empirical_risk": cert.empirical_risk,
                    "complexity": cert.complexity,
                    "components": dict(cert.components),
                    "vacuous": cert.vacuous,
                    "estimate": cert.estimate,
                    "n_priors": n_priors,
                    "test_risk": metrics["risk"],
                    "f_score": metrics["f_score"],
                    "class_errors": metrics["class_errors"],
                    "zero_one_error": metrics["zero_one_error"],
                })
                stem = f"{bound_kind}_{alpha:g}_{rep}"
                if save_checkpoints:
                    directory = os.path.join(outdir, "checkpoints")
                    os.makedirs(directory, exist_ok=True)
                    save_checkpoint(os.path.join(directory, stem + ".json"),
                                    arch, outcome.posterior, prior, n_priors)
                if save_traces:
                    directory = os.path.join(outdir, "traces")
                    os.makedirs(directory, exist_ok=True)
                    path = os.path.join(directory, stem + ".jsonl")
                    with open(path, "w", encoding="utf-8") as handle:
                        for record in outcome.steps:
                            json.dump(record.to_json_dict(), handle,
                                      sort_keys=True)
                            handle.write("\n")
    return {
        "config": config.snapshot(),
        "results": results,
        "aggregates": _aggregate(results),
    }


def _aggregate(results: list[dict]) -> dict:
    """Mean and population std of the headline numbers per grid cell."""
    cells: dict[str, list[dict]] = {}
    for record in results:
        key = f"{record['bound']}|alpha={record['alpha']:g}"
        cells.setdefault(key, []).append(record)
    aggregates = {}
    for key, records in cells.items():
        entry = {}
        for name in ("bound_value", "test_risk", "f_score"):
            values = np.array([r[name] for r in records], dtype=float)
            entry[name + "_mean"] = float(values.mean())
            entry[name + "_std"] = float(values.std(ddof=0))
        entry["vacuous_fraction"] = float(
            np.mean([1.0 if r["vacuous"] else 0.0 for r in records])
        )
        aggregates[key] = entry
    return aggregates


def emit_report(report: dict, outdir: str) -> tuple[str, str]:
    """Write ``report.json`` and ``plotdata.csv``; returns both paths.

    The CSV holds one summary row per result (class column empty) followed
    by one row per class carrying that class's error rate; all other columns
    repeat, so each row is self-contained for plotting.
    """
    os.makedirs(outdir, exist_ok=True)
    json_path = os.path.join(outdir, "report.json")
    with open(json_path, "w", encoding="utf-8") as handle:
        json.dump(report, handle, sort_keys=True, indent=2)
        handle.write("\n")
    csv_path = os.path.join(outdir, "plotdata.csv")
    columns = ["bound", "alpha", "repetition", "bound_value", "test_risk",
               "f_score", "class", "class_error"]
    with open(csv_path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for record in report["results"]:
            base = [record["bound"], repr(float(record["alpha"])),
                    record["repetition"], repr(float(record["bound_value"])),
                    repr(float(record["test_risk"])),
                    repr(float(record["f_score"]))]
            writer.writerow(base + ["", ""])
            for cls, error in enumerate(record["class_errors"]):
                writer.writerow(base + [cls, repr(float(error))])
    return json_path, csv_path
