"""Self-bounding training of Gaussian-posterior networks.

``train_posterior`` minimizes a bound objective directly: each step samples
``theta_tilde = theta + sigma * eps`` (one eps per step, shared by the bound
value and its gradient), solves the inner risk supremum on the batch, and
chains the maximizing weights through the per-example loss gradients (the
envelope theorem), plus the divergence term's gradient. Under this
reparameterization the ``-||theta_tilde - theta||^2`` part of the
disintegrated divergence is constant and contributes nothing.

``learn_prior`` trains one candidate per (learning rate, epoch) pair by
risk-only gradient descent on the held-out prior set and returns the
candidate with the lowest sampled risk on the posterior set, along with the
candidate count that every certificate must union-bound over.

Batch-level bound evaluations use batch sizes; the end-of-training
certificate is always recomputed on the full set with the true sizes and a
fresh sampled model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import bounds
from .bounds import BoundContext, BoundReport
from .data import Dataset, SubgroupPartition
from .errors import (
    BatchTooSmall,
    ConfigError,
    DimensionMismatch,
    NonFiniteGradient,
)
from .model import (
    GaussianParamDist,
    MlpArch,
    ParamVector,
    backward,
    bounded_cross_entropy_batch,
    classical_kl,
    disintegrated_kl,
    forward_batch,
    sample_params,
    subgroup_losses,
)
from .risk import (
    DEFAULT_TOL,
    ReferenceDistribution,
    RiskSpec,
    SubgroupLosses,
    constrained_weights,
)

CVAR = "cvar"
EVAR = "evar"

BY_CLASS = "by-class"
PER_EXAMPLE = "per-example"


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one posterior training run."""

    epochs: int = 10
    batch_size: int = 256
    learning_rate: float = 1e-8
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    sigma2: float = 1e-6
    alpha: float = 0.5
    risk: str = CVAR
    bound: str = bounds.SUBGROUPS_SQRT
    lam: float = 1.0
    delta: float = 0.05
    l_max: float = 4.0
    n_priors: int = 1
    seed: int = 0
    solver_tol: float = DEFAULT_TOL

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.eps_adam <= 0 or self.sigma2 <= 0 or self.l_max <= 0:
            raise ConfigError("eps_adam, sigma2 and l_max must be positive")
        if self.risk not in (CVAR, EVAR):
            raise ConfigError(f"unknown risk kind {self.risk!r}")
        if self.bound not in bounds.BOUND_KINDS:
            raise ConfigError(f"unknown bound kind {self.bound!r}")
        if self.bound == bounds.MHAMMEDI_ESTIMATE and self.risk != CVAR:
            raise ConfigError("the single-sample baseline bound only holds for cvar")
        if not (0.0 < self.alpha <= 1.0):
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not (0.0 < self.delta <= 1.0):
            raise ConfigError(f"delta must lie in (0, 1], got {self.delta}")
        if self.lam <= 0:
            raise ConfigError("lam must be positive")
        if self.n_priors < 1:
            raise ConfigError("n_priors must be >= 1")

    @property
    def mode(self) -> str:
        return (PER_EXAMPLE if self.bound in bounds.PER_EXAMPLE_KINDS
                else BY_CLASS)

    def risk_spec(self) -> RiskSpec:
        if self.risk == CVAR:
            return RiskSpec.cvar(self.alpha)
        return RiskSpec.evar(self.alpha)


@dataclass(frozen=True)
class PriorGrid:
    """Learning-rate grid and epoch budget for prior candidates."""

    learning_rates: tuple[float, ...] = (0.1, 0.01, 0.001)
    epochs: int = 20

    def __post_init__(self):
        rates = tuple(float(r) for r in self.learning_rates)
        if not rates or any(r <= 0 for r in rates):
            raise ConfigError("need a non-empty grid of positive learning rates")
        if self.epochs < 1:
            raise ConfigError("prior training needs at least one epoch")
        object.__setattr__(self, "learning_rates", rates)

    @property
    def k(self) -> int:
        return len(self.learning_rates)


@dataclass(frozen=True)
class AdamState:
    """First/second moment accumulators plus the step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @staticmethod
    def init(dim: int) -> "AdamState":
        return AdamState(m=np.zeros(dim), v=np.zeros(dim), t=0)


def adam_step(state: AdamState, params: ParamVector, gradient: np.ndarray,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps_adam: float = 1e-8) -> tuple[AdamState, ParamVector]:
    """One bias-corrected Adam update; returns the new state and parameters."""
    gradient = np.asarray(gradient, dtype=float)
    if gradient.shape != state.m.shape or gradient.shape != params.shape:
        raise DimensionMismatch("gradient and state dimensions must match")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * gradient
    v = beta2 * state.v + (1.0 - beta2) * gradient * gradient
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps_adam)
    return AdamState(m=m, v=v, t=t), new_params


def minibatch_sampler(partition: SubgroupPartition, pi=None,
                      batch_size: int = 256, seed=0) -> list[np.ndarray]:
    """One epoch of reference-aware batches; deterministic per seed.

    Each batch starts with one uniformly-drawn example per subgroup, then
    fills the remaining slots by drawing subgroups from pi and examples
    uniformly within, never repeating an example inside a batch. The epoch
    ends once every example has appeared at least once. When batch_size
    exceeds the example count, batches are capped at the example count.
    """
    if pi is None:
        pi = partition.pi
    probs = pi.probs if isinstance(pi, ReferenceDistribution) else np.asarray(pi)
    n = partition.n
    m = partition.m
    effective = min(int(batch_size), m)
    if effective < n:
        raise BatchTooSmall(
            f"batch_size {batch_size} cannot cover {n} subgroups"
        )
    rng = np.random.default_rng(seed)
    groups = partition.groups()
    seen = np.zeros(m, dtype=bool)
    batches: list[np.ndarray] = []
    while not seen.all():
        in_batch = np.zeros(m, dtype=bool)
        batch: list[int] = []
        for a in range(n):
            pick = int(rng.choice(groups[a]))
            batch.append(pick)
            in_batch[pick] = True
        while len(batch) < effective:
            a = int(rng.choice(n, p=probs))
            pool = groups[a][~in_batch[groups[a]]]
            if pool.size == 0:
                if in_batch.sum() >= m:
                    break
                continue
            pick = int(rng.choice(pool))
            batch.append(pick)
            in_batch[pick] = True
        indices = np.array(batch, dtype=int)
        seen[indices] = True
        batches.append(indices)
    return batches


def _shuffle_chunks(m: int, batch_size: int, seed) -> list[np.ndarray]:
    """Plain permutation chunks: every example exactly once per epoch."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(m)
    return [perm[i:i + batch_size] for i in range(0, m, batch_size)]


def training_batches(partition: SubgroupPartition, mode: str, batch_size: int,
                     seed) -> list[np.ndarray]:
    """Batches for one epoch; the per-example partition cannot satisfy the
    coverage rule (n = m exceeds any batch), so it falls back to shuffled
    chunks, which trivially avoid within-batch duplicates."""
    if mode == PER_EXAMPLE:
        return _shuffle_chunks(partition.m, batch_size, seed)
    return minibatch_sampler(partition, partition.pi, batch_size, seed)


@dataclass(frozen=True)
class StepRecord:
    """One optimization step of the bound objective trace."""

    step: int
    batch_size: int
    report: BoundReport

    def to_json_dict(self) -> dict:
        payload = {"step": self.step, "batch_size": self.batch_size}
        payload.update(self.report.to_json_dict())
        return payload


@dataclass(frozen=True)
class TrainResult:
    posterior: GaussianParamDist
    steps: tuple[StepRecord, ...]
    certificate: BoundReport
    certified_sample: ParamVector


def _objective_kind(bound_kind: str) -> str:
    """The differentiable objective trained for each certificate family."""
    if bound_kind in bounds.SUBGROUP_KINDS:
        return bounds.SUBGROUPS_SQRT
    return bound_kind


def _batch_risk(config: TrainConfig, partition: SubgroupPartition,
                batch: np.ndarray, losses: np.ndarray):
    """Subgroup losses, solver output and per-example Danskin weights."""
    if config.mode == PER_EXAMPLE:
        sub = SubgroupLosses(losses)
        sol = constrained_weights(sub, ReferenceDistribution.uniform(len(batch)),
                                  config.risk_spec(), config.solver_tol)
        w = sol.weights.copy()
        ctx_sizes = np.ones(len(batch), dtype=int)
        pi = None
    else:
        sub_ids = partition.assignment[batch]
        counts = np.bincount(sub_ids, minlength=partition.n)
        sums = np.bincount(sub_ids, weights=losses, minlength=partition.n)
        sub = SubgroupLosses(sums / np.maximum(counts, 1))
        sol = constrained_weights(sub, partition.pi, config.risk_spec(),
                                  config.solver_tol)
        w = sol.weights[sub_ids] / counts[sub_ids]
        ctx_sizes = counts
        pi = partition.pi.probs
    return sol, w, ctx_sizes, pi


def _objective_report(config: TrainConfig, ctx: BoundContext, risk_value: float,
                      kl_dis: float, kl_cls: float) -> BoundReport:
    kind = _objective_kind(config.bound)
    if kind == bounds.SUBGROUPS_SQRT:
        return bounds.bound_subgroups_sqrt(risk_value, replace(ctx, kl_term=kl_dis))
    if kind == bounds.ONE_EXAMPLE_DIS:
        return bounds.bound_one_example_dis(risk_value, replace(ctx, kl_term=kl_dis))
    if kind == bounds.ONE_EXAMPLE_CLASSICAL:
        return bounds.bound_one_example_classical(risk_value, kl_cls, ctx)
    return bounds.bound_mhammedi_estimate(risk_value, kl_cls, ctx)


def _objective_grads(config: TrainConfig, ctx: BoundContext, risk_value: float,
                     kl_dis: float, kl_cls: float) -> tuple[float, float, str]:
    """(d objective / d risk, d objective / d kl, which kl the second uses).

    Derivatives of the same closed forms the bound functions evaluate; the
    clamp at kl <= 0 has zero gradient.
    """
    kind = _objective_kind(config.bound)
    if kind == bounds.SUBGROUPS_SQRT:
        kl = max(kl_dis, 0.0)
        log_terms = np.log(2.0 * ctx.n * ctx.n_priors * np.sqrt(ctx.m_a)
                           / ctx.delta)
        radius = float(np.sum(ctx.pi * (kl + log_terms)
                              / (2.0 * ctx.alpha * ctx.m_a)))
        d_radius = float(np.sum(ctx.pi / (2.0 * ctx.alpha * ctx.m_a)))
        d_kl = d_radius / (2.0 * math.sqrt(radius)) if kl_dis > 0.0 else 0.0
        return 1.0, d_kl, "dis"
    if kind in (bounds.ONE_EXAMPLE_DIS, bounds.ONE_EXAMPLE_CLASSICAL):
        classical = kind == bounds.ONE_EXAMPLE_CLASSICAL
        kl_raw = kl_cls if classical else kl_dis
        kl = max(kl_raw, 0.0)
        confidence = math.log(2.0 * ctx.n_priors * (ctx.lam + 1.0) / ctx.delta)
        extra = 3.5 if classical else 0.0
        inner = ((1.0 + 1.0 / ctx.lam) * kl + confidence + extra) / (2.0 * ctx.m)
        d_kl = 0.0
        if kl_raw > 0.0:
            d_kl = ((1.0 + 1.0 / ctx.lam) / (2.0 * ctx.m)
                    / (2.0 * math.sqrt(inner)) / ctx.alpha)
        return 1.0, d_kl, "classical" if classical else "dis"
    # single-sample baseline objective
    kl = max(kl_cls, 0.0)
    am = ctx.alpha * ctx.m
    g = math.log(2.0 * ctx.n_priors * math.ceil(math.log2(ctx.m / ctx.alpha))
                 / ctx.delta)
    k_bar = kl + g
    risk_floor = max(risk_value, 1e-12)
    d_risk = (1.0 + 2.0 * (math.sqrt(g / (2.0 * am)) + g / (3.0 * am))
              + 0.5 * math.sqrt(27.0 * k_bar / (5.0 * am * risk_floor)))
    # the clamped kl never goes negative here, so no subgradient case split
    d_kl = 27.0 / (5.0 * am)
    if risk_value > 0.0:
        d_kl += 0.5 * math.sqrt(27.0 * risk_value / (5.0 * am * k_bar))
    return d_risk, d_kl, "classical"


def train_posterior(config: TrainConfig, arch: MlpArch,
                    prior: GaussianParamDist, data: Dataset,
                    partition: SubgroupPartition) -> TrainResult:
    """Minimize the configured bound objective starting from the prior mean.

    Returns the final posterior, the per-step objective trace, and the
    certificate recomputed on the full set with a fresh sampled model.
    """
    if prior.d != arch.param_count:
        raise DimensionMismatch(
            f"prior dimension {prior.d} does not match the architecture "
            f"({arch.param_count} parameters)"
        )
    theta = prior.mean.copy()
    adam = AdamState.init(theta.size)
    records: list[StepRecord] = []
    step = 0
    for epoch in range(config.epochs):
        batches = training_batches(partition, config.mode, config.batch_size,
                                   seed=[config.seed, 17, epoch])
        for batch in batches:
            dist = GaussianParamDist(theta, config.sigma2)
            theta_tilde, _ = sample_params(dist, seed=[config.seed, 23, step])
            probs = forward_batch(arch, theta_tilde, data.features[batch])
            losses = bounded_cross_entropy_batch(probs, data.labels[batch],
                                                 config.l_max)
            sol, w, ctx_sizes, pi = _batch_risk(config, partition, batch, losses)
            kl_dis = disintegrated_kl(theta_tilde, theta, prior.mean,
                                      config.sigma2)
            kl_cls = classical_kl(theta, prior.mean, config.sigma2)
            ctx = BoundContext(delta=config.delta, m=len(batch),
                               n=len(ctx_sizes), m_a=ctx_sizes,
                               alpha=config.alpha, lam=config.lam,
                               n_priors=config.n_priors, kl_term=kl_dis, pi=pi)
            report = _objective_report(config, ctx, sol.value, kl_dis, kl_cls)
            d_risk, d_kl, which = _objective_grads(config, ctx, sol.value,
                                                   kl_dis, kl_cls)
            grad = backward(arch, theta_tilde, data.features[batch],
                            data.labels[batch], d_risk * w, config.l_max)
            if d_kl != 0.0:
                if which == "dis":
                    grad = grad + d_kl * (theta_tilde - prior.mean) / config.sigma2
                else:
                    grad = grad + d_kl * (theta - prior.mean) / config.sigma2
            if not np.all(np.isfinite(grad)):
                raise NonFiniteGradient(step)
            records.append(StepRecord(step=step, batch_size=len(batch),
                                      report=report))
            adam, theta = adam_step(adam, theta, grad, config.learning_rate,
                                    config.beta1, config.beta2, config.eps_adam)
            step += 1
    posterior = GaussianParamDist(theta, config.sigma2)
    certificate, certified_sample = certify(
        config.bound, arch, posterior, prior, data, partition,
        alpha=config.alpha, risk=config.risk, lam=config.lam,
        delta=config.delta, n_priors=config.n_priors, l_max=config.l_max,
        sample_seed=[config.seed, 29], tol=config.solver_tol,
    )
    return TrainResult(posterior=posterior, steps=tuple(records),
                       certificate=certificate,
                       certified_sample=certified_sample)


def certify(bound_kind: str, arch: MlpArch, posterior: GaussianParamDist,
            prior: GaussianParamDist, data: Dataset,
            partition: SubgroupPartition, *, alpha: float, risk: str = CVAR,
            lam: float = 1.0, delta: float = 0.05, n_priors: int = 1,
            l_max: float = 4.0, sample_seed=0,
            tol: float = DEFAULT_TOL) -> tuple[BoundReport, ParamVector]:
    """Full-set certificate for one sampled model from the posterior.

    Uses the true subgroup sizes of ``data``; returns the report and the
    sampled parameter vector it covers.
    """
    if bound_kind not in bounds.BOUND_KINDS:
        raise ConfigError(f"unknown bound kind {bound_kind!r}")
    if bound_kind == bounds.MHAMMEDI_ESTIMATE and risk != CVAR:
        raise ConfigError("the single-sample baseline bound only holds for cvar")
    theta_tilde, _ = sample_params(posterior, sample_seed)
    spec = RiskSpec.cvar(alpha) if risk == CVAR else RiskSpec.evar(alpha)
    sub = subgroup_losses(arch, theta_tilde, data, partition, l_max)
    sol = constrained_weights(sub, partition.pi, spec, tol)
    kl_dis = disintegrated_kl(theta_tilde, posterior.mean, prior.mean,
                              posterior.sigma2)
    ctx = BoundContext(delta=delta, m=partition.m, n=partition.n,
                       m_a=partition.sizes, alpha=alpha, lam=lam,
                       n_priors=n_priors, kl_term=kl_dis,
                       pi=partition.pi.probs)
    if bound_kind in (bounds.ONE_EXAMPLE_CLASSICAL, bounds.MHAMMEDI_ESTIMATE):
        kl_cls = classical_kl(posterior.mean, prior.mean, posterior.sigma2)
        report = bounds.compute_bound(bound_kind, sol.value, ctx,
                                      kl_classical=kl_cls)
    else:
        report = bounds.compute_bound(bound_kind, sol.value, ctx)
    return report, theta_tilde


def learn_prior(grid: PriorGrid, config: TrainConfig, arch: MlpArch,
                prior_data: Dataset, select_data: Dataset,
                build_partition) -> tuple[GaussianParamDist, int]:
    """Risk-only training over the learning-rate grid with epoch snapshots.

    Trains each candidate on ``prior_data`` (fresh Xavier initialization per
    learning rate), snapshots the mean after every epoch, and returns the
    candidate whose sampled risk on ``select_data`` is lowest (one shared
    evaluation noise draw keeps the comparison fair), plus the candidate
    count n_priors = epochs * len(learning_rates).

    ``build_partition`` maps a Dataset to the SubgroupPartition the risk is
    measured on (by-class or per-example, fixed by the experiment).
    """
    spec = config.risk_spec()
    train_partition = build_partition(prior_data)
    select_partition = build_partition(select_data)
    candidates: list[ParamVector] = []
    for k, lr in enumerate(grid.learning_rates):
        theta = arch.init_xavier(seed=[config.seed, 41, k])
        adam = AdamState.init(theta.size)
        step = 0
        for epoch in range(grid.epochs):
            batches = training_batches(train_partition, config.mode,
                                       config.batch_size,
                                       seed=[config.seed, 43, k, epoch])
            for batch in batches:
                probs = forward_batch(arch, theta, prior_data.features[batch])
                losses = bounded_cross_entropy_batch(
                    probs, prior_data.labels[batch], config.l_max)
                sol, w, _, _ = _batch_risk(config, train_partition, batch,
                                           losses)
                grad = backward(arch, theta, prior_data.features[batch],
                                prior_data.labels[batch], w, config.l_max)
                if not np.all(np.isfinite(grad)):
                    raise NonFiniteGradient(step)
                adam, theta = adam_step(adam, theta, grad, lr, config.beta1,
                                        config.beta2, config.eps_adam)
                step += 1
            candidates.append(theta.copy())
    n_priors = len(candidates)

    eval_rng = np.random.default_rng([config.seed, 47])
    eps_eval = eval_rng.standard_normal(arch.param_count)
    sigma = math.sqrt(config.sigma2)
    best_idx = 0
    best_value = math.inf
    for idx, theta_c in enumerate(candidates):
        sub = subgroup_losses(arch, theta_c + sigma * eps_eval, select_data,
                              select_partition, config.l_max)
        value = constrained_weights(sub, select_partition.pi, spec,
                                    config.solver_tol).value
        if value < best_value:
            best_value = value
            best_idx = idx
    return GaussianParamDist(candidates[best_idx], config.sigma2), n_priors
