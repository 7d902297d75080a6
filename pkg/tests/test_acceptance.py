"""Acceptance gate: one test per shipped guarantee.

Each test is self-contained and runs at the stated tolerance; `pytest -v`
prints one pass/fail line per criterion.
"""

import dataclasses
import math
import os

import numpy as np
import pytest
from click.testing import CliRunner

from riskcert.bounds import (
    BoundContext,
    bound_mhammedi_estimate,
    bound_one_example_classical,
    bound_one_example_dis,
    bound_subgroups_kl,
    bound_subgroups_sqrt,
    kl_inverse,
    kl_plus,
)
from riskcert.cli import cli
from riskcert.data import (
    Dataset,
    partition_by_class,
    partition_per_example,
    standardize,
    stratified_split,
    synth_imbalanced,
)
from riskcert.model import (
    MlpArch,
    backward,
    bounded_cross_entropy_batch,
    example_losses,
    forward_batch,
)
from riskcert.risk import (
    RiskSpec,
    constrained_weights,
    cvar_weights,
    oracle_risk_grid,
    risk_gradient,
)
from riskcert.training import PriorGrid, TrainConfig, certify, learn_prior, train_posterior

from oracles import (
    central_difference,
    cvar_by_vertex_enumeration,
    evar_by_grid_1d,
    mp_bound_constants,
)

ORACLE = mp_bound_constants()


def random_instance(rng, n):
    losses = rng.random(n)
    pi = rng.dirichlet(np.ones(n))
    pi = np.maximum(pi, 1e-3)
    pi = pi / pi.sum()
    alpha = float(rng.uniform(0.05, 1.0))
    return losses, pi, alpha


def test_criterion_1_risk_solver_oracle_equivalence():
    rng = np.random.default_rng(0)
    for _ in range(500):
        losses, pi, alpha = random_instance(rng, int(rng.integers(2, 5)))
        solved = cvar_weights(losses, pi, alpha).value
        grid = oracle_risk_grid(losses, pi, RiskSpec.cvar(alpha), 1e-4)
        exact = cvar_by_vertex_enumeration(losses, pi, alpha)
        assert abs(solved - grid) <= 2e-4
        assert abs(solved - exact) <= 1e-9
    for _ in range(200):
        losses, pi, alpha = random_instance(rng, 2)
        solved = constrained_weights(losses, pi, RiskSpec.evar(alpha)).value
        grid = evar_by_grid_1d(losses, pi, alpha)
        assert abs(solved - grid) <= 1e-3


def test_criterion_2_single_swap_sensitivity():
    rng = np.random.default_rng(1)
    sizes = (10, 100)
    alphas = (0.1, 0.5, 1.0)
    for trial in range(1000):
        m = sizes[trial % 2]
        alpha = alphas[(trial // 2) % 3]
        pi = np.full(m, 1.0 / m)
        losses = rng.random(m)
        before = cvar_weights(losses, pi, alpha).value
        swapped = losses.copy()
        swapped[rng.integers(m)] = rng.random()
        after = cvar_weights(swapped, pi, alpha).value
        assert abs(after - before) <= 1.0 / (m * alpha) + 1e-9


def test_criterion_3_kl_machinery():
    grid = np.linspace(0.0, 1.0, 101)
    for a in grid:
        for b in grid:
            if a <= b:
                assert 2.0 * (b - a) ** 2 <= kl_plus(a, b) + 1e-12
    rng = np.random.default_rng(2)
    checked = 0
    for _ in range(400):
        a = float(rng.uniform(0.0, 0.95))
        eps = float(rng.uniform(0.0, 2.0))
        b = kl_inverse(a, eps)
        if b > 0.999:
            continue
        assert abs(kl_plus(a, b) - eps) <= 1e-8
        checked += 1
    assert checked >= 200
    assert kl_plus(0.5, 0.5) == 0.0
    assert kl_plus(0.6, 0.4) == 0.0
    assert round(kl_plus(0.1, 0.5), 6) == round(ORACLE["kl_01_05"], 6)
    assert round(kl_inverse(0.1, ORACLE["kl_01_05"]), 6) == 0.5
    assert kl_inverse(0.37, 0.0) == 0.37
    assert round(kl_inverse(0.0, 0.2), 6) == round(1.0 - math.exp(-0.2), 6)


def by_class_ctx(rng):
    n = int(rng.integers(1, 5))
    m_a = rng.integers(5, 500, size=n)
    return BoundContext(
        delta=float(rng.uniform(0.01, 0.5)), m=int(m_a.sum()), n=n,
        m_a=m_a, alpha=float(rng.uniform(0.05, 1.0)),
        lam=float(rng.uniform(0.1, 10.0)),
        n_priors=int(rng.integers(1, 20)),
        kl_term=float(rng.uniform(0.0, 50.0)))


def per_example_ctx(rng):
    m = int(rng.integers(10, 500))
    return BoundContext(
        delta=float(rng.uniform(0.01, 0.5)), m=m, n=m, m_a=np.ones(m),
        alpha=float(rng.uniform(0.05, 1.0)),
        lam=float(rng.uniform(0.1, 10.0)),
        n_priors=int(rng.integers(1, 20)),
        kl_term=float(rng.uniform(0.0, 50.0)))


def doubled(ctx):
    if ctx.n == ctx.m:  # per-example mode doubles the number of subgroups
        return dataclasses.replace(ctx, m=2 * ctx.m, n=2 * ctx.m,
                                   m_a=np.ones(2 * ctx.m), pi=None)
    return dataclasses.replace(ctx, m=2 * ctx.m, m_a=2 * np.asarray(ctx.m_a),
                               pi=None)


def tightened(ctx):
    return dataclasses.replace(
        ctx,
        alpha=min(1.0, ctx.alpha * 1.5),
        delta=min(1.0, ctx.delta * 2.0),
        pi=None)


def test_criterion_4_bound_formula_pinning():
    pinned = BoundContext(delta=1.0, m=100, n=1, m_a=np.array([100]),
                          alpha=1.0, kl_term=0.0)
    report = bound_subgroups_kl(0.1, pinned)
    assert report.components["eps"] == pytest.approx(
        ORACLE["subgroups_eps"], abs=1e-3)
    assert bound_subgroups_sqrt(0.1, pinned).complexity == pytest.approx(
        ORACLE["subgroups_sqrt_complexity"], abs=1e-3)
    per = BoundContext(delta=0.05, m=100, n=100, m_a=np.ones(100), alpha=0.5,
                       lam=1.0, kl_term=0.0)
    assert bound_one_example_dis(0.0, per).complexity == pytest.approx(
        ORACLE["one_example_dis_complexity"], abs=1e-3)
    assert bound_one_example_classical(0.0, 0.0, per).complexity == (
        pytest.approx(ORACLE["one_example_classical_complexity"], abs=1e-3))
    mham = bound_mhammedi_estimate(0.2, 0.0, per)
    assert mham.components["G"] == pytest.approx(ORACLE["mhammedi_G"],
                                                 abs=1e-3)
    assert mham.bound == pytest.approx(ORACLE["mhammedi_bound"], abs=1e-3)

    rng = np.random.default_rng(3)
    for _ in range(500):
        ctx = by_class_ctx(rng)
        risk = float(rng.uniform(0.0, 0.9))
        for family in (bound_subgroups_kl, bound_subgroups_sqrt):
            base = family(risk, ctx).bound
            assert family(risk, tightened(ctx)).bound <= base + 1e-12
            assert family(risk, doubled(ctx)).bound <= base + 1e-12
            grown = dataclasses.replace(ctx, kl_term=ctx.kl_term + 5.0)
            assert family(risk, grown).bound >= base - 1e-12
        assert (bound_subgroups_kl(risk, ctx).bound
                <= bound_subgroups_sqrt(risk, ctx).bound + 1e-12)
    for _ in range(500):
        ctx = per_example_ctx(rng)
        risk = float(rng.uniform(0.0, 0.9))
        kl = ctx.kl_term
        assert (bound_one_example_classical(risk, kl, ctx).complexity
                >= bound_one_example_dis(risk, ctx).complexity - 1e-12)
        grown = dataclasses.replace(ctx, kl_term=kl + 5.0)
        for value, family in (
                (None, bound_one_example_dis),
                (kl, bound_one_example_classical),
                (kl, bound_mhammedi_estimate)):
            if value is None:
                base = family(risk, ctx).bound
                assert family(risk, tightened(ctx)).bound <= base + 1e-12
                assert family(risk, doubled(ctx)).bound <= base + 1e-12
                assert family(risk, grown).bound >= base - 1e-12
            else:
                base = family(risk, value, ctx).bound
                assert family(risk, value, tightened(ctx)).bound <= (
                    base + 1e-12)
                assert family(risk, value, doubled(ctx)).bound <= base + 1e-12
                assert family(risk, value + 5.0, ctx).bound >= base - 1e-12


def test_criterion_5_gradient_integrity():
    arch = MlpArch((3, 6, 3))
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        params = arch.init_xavier(seed=seed) + 0.05 * rng.normal(
            size=arch.param_count)
        x = rng.normal(size=(8, 3))
        y = rng.integers(0, 3, size=8)
        w = rng.uniform(0.1, 1.0, size=8)

        def loss_at(theta):
            probs = forward_batch(arch, theta, x)
            return float(w @ bounded_cross_entropy_batch(probs, y, 4.0))

        grad = backward(arch, params, x, y, w, 4.0)
        coords = rng.choice(arch.param_count, size=20, replace=False)
        for i in coords:
            fd = central_difference(loss_at, params, int(i))
            assert abs(grad[int(i)] - fd) <= 1e-4 * max(abs(fd), 1e-2)

    rng = np.random.default_rng(4)
    checked = 0
    while checked < 50:
        n = int(rng.integers(2, 5))
        losses, pi, alpha = random_instance(rng, n)
        if np.min(np.diff(np.sort(losses))) < 1e-2:
            continue
        for spec in (RiskSpec.cvar(alpha), RiskSpec.evar(alpha)):
            solution = constrained_weights(losses, pi, spec)
            grad = risk_gradient(solution)

            def value_at(vec):
                return constrained_weights(vec, pi, spec).value

            for i in range(n):
                fd = central_difference(value_at, losses, i, step=1e-5)
                assert abs(grad[i] - fd) <= 1e-3 * max(abs(fd), 1e-2)
        checked += 1


def test_criterion_6_statistical_soundness():
    rng = np.random.default_rng(1234)
    arch = MlpArch((2, 8, 2))
    theta = arch.init_xavier(seed=7)
    m, alpha, delta = 200, 0.5, 0.05
    keep = int(round(alpha * m))

    def draw():
        labels = (rng.random(m) < 0.2).astype(int)
        means = np.zeros((m, 2))
        means[labels == 1, 0] = 2.0
        features = means + rng.normal(size=(m, 2))
        if labels.min() == labels.max():  # keep both classes present
            labels[0] = 1 - labels[0]
        return Dataset(features, labels)

    def sharp_risk(data):
        losses = example_losses(arch, theta, data, 4.0)
        top = np.partition(losses, m - keep)[m - keep:]
        return float(top.mean())

    reference = float(np.mean([sharp_risk(draw()) for _ in range(4000)]))
    ctx = BoundContext(delta=delta, m=m, n=m, m_a=np.ones(m), alpha=alpha,
                       lam=1.0, n_priors=1, kl_term=0.0)
    radius = bound_one_example_dis(0.0, ctx).complexity
    assert radius == pytest.approx(
        math.sqrt(math.log(2.0 * 2.0 / delta) / (2.0 * m)) / alpha,
        abs=1e-12)

    pi = np.full(m, 1.0 / m)
    spec = RiskSpec.cvar(alpha)
    violations = 0
    for trial in range(500):
        data = draw()
        losses = example_losses(arch, theta, data, 4.0)
        observed = constrained_weights(losses, pi, spec).value
        if trial == 0:
            assert observed == pytest.approx(sharp_risk(data), abs=1e-12)
        if abs(observed - reference) > radius:
            violations += 1
    threshold = delta + 3.0 * math.sqrt(delta * (1 - delta) / 500)
    assert violations / 500 <= threshold


def test_criterion_7_alpha_trend_and_family_comparison():
    seed = 2024
    data = synth_imbalanced((960, 40), 2, 2.0, seed=seed)
    train_full, _ = stratified_split(data, 0.8, seed=[seed, 101, 0])
    prior_data, post_data = stratified_split(train_full, 0.5,
                                             seed=[seed, 103, 0])
    prior_data = Dataset(standardize(prior_data.features),
                         prior_data.labels.copy())
    post_data = Dataset(standardize(post_data.features),
                        post_data.labels.copy())
    arch = MlpArch((2, 128, 128, 2))
    grid = PriorGrid((0.1, 0.01, 0.001), 5)
    alphas = (0.1, 0.5, 0.9)

    def run_family(train_kind, certify_kinds, build_partition):
        cfg0 = TrainConfig(epochs=5, batch_size=256, alpha=0.5, risk="cvar",
                           bound=train_kind, seed=seed)
        prior, n_priors = learn_prior(grid, cfg0, arch, prior_data, post_data,
                                      build_partition)
        cfg = dataclasses.replace(cfg0, n_priors=n_priors)
        partition = build_partition(post_data)
        outcome = train_posterior(cfg, arch, prior, post_data, partition)
        curves = {}
        for kind in certify_kinds:
            values = []
            for alpha in alphas:
                report, _ = certify(kind, arch, outcome.posterior, prior,
                                    post_data, partition, alpha=alpha,
                                    risk="cvar", n_priors=n_priors,
                                    sample_seed=[seed, 29])
                values.append(report.bound)
            curves[kind] = values
        return curves

    curves = {}
    curves.update(run_family(
        "subgroups_kl", ("subgroups_kl",),
        lambda d: partition_by_class(d, "class-ratio")))
    curves.update(run_family(
        "subgroups_sqrt", ("subgroups_sqrt",),
        lambda d: partition_by_class(d, "class-ratio")))
    curves.update(run_family(
        "one_example_dis",
        ("one_example_dis", "one_example_classical", "mhammedi_estimate"),
        partition_per_example))

    for kind, values in curves.items():
        assert values[0] >= values[1] - 1e-12, kind
        assert values[1] >= values[2] - 1e-12, kind
    assert curves["subgroups_sqrt"][2] < 1.0
    for dis, mham in zip(curves["one_example_dis"],
                         curves["mhammedi_estimate"]):
        assert dis <= 1.05 * mham


def test_criterion_8_report_determinism(tmp_path):
    config_text = (
        "dataset.synth_counts = 40, 24\n"
        "bounds = subgroups_kl, subgroups_sqrt\n"
        "alpha.grid = 0.5, 0.9\n"
        "repetitions = 2\n"
        "seed = 11\n"
        "train.epochs = 1\n"
        "train.batch_size = 8\n"
        "prior.learning_rates = 0.05\n"
        "prior.epochs = 1\n"
        "arch.hidden = 4\n"
    )
    config_path = tmp_path / "exp.cfg"
    config_path.write_text(config_text)
    runner = CliRunner()
    payloads = []
    for name in ("first", "second"):
        outdir = tmp_path / name
        result = runner.invoke(cli, ["run", str(config_path), "-o",
                                     str(outdir)])
        assert result.exit_code == 0, result.output
        with open(os.path.join(str(outdir), "report.json"), "rb") as handle:
            payloads.append(handle.read())
    assert payloads[0] == payloads[1]
