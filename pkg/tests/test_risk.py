"""Tests for the constrained risk solvers against independent oracles."""

import numpy as np
import pytest

from riskcert.errors import (
    AlphaOutOfRange,
    DimensionMismatch,
    DomainError,
    TooManySubgroups,
)
from riskcert.risk import (
    ReferenceDistribution,
    RiskSpec,
    SubgroupLosses,
    constrained_weights,
    cvar_weights,
    oracle_risk_grid,
    risk_gradient,
)

from oracles import (
    cvar_by_linprog,
    cvar_by_vertex_enumeration,
    evar_by_grid_1d,
    kl_weights,
)

# frozen in tests/oracles.py (run it directly to regenerate)
CVAR_EXAMPLE_VALUE = 0.74
EVAR_EXAMPLE_VALUE = 0.8


def random_instance(rng, n_max=6):
    n = int(rng.integers(2, n_max + 1))
    losses = rng.random(n)
    pi = np.maximum(rng.dirichlet(np.ones(n)), 1e-3)
    pi = pi / pi.sum()
    alpha = float(rng.uniform(0.05, 1.0))
    return losses, pi, alpha


def test_cvar_frozen_example_matches_both_oracles():
    losses = [0.2, 0.9, 0.5]
    pi = [0.5, 0.3, 0.2]
    sol = cvar_weights(losses, pi, 0.5)
    assert sol.value == pytest.approx(CVAR_EXAMPLE_VALUE, abs=1e-12)
    assert cvar_by_vertex_enumeration(losses, pi, 0.5) == pytest.approx(
        CVAR_EXAMPLE_VALUE, abs=1e-9)
    assert cvar_by_linprog(losses, pi, 0.5) == pytest.approx(
        CVAR_EXAMPLE_VALUE, abs=1e-7)


def test_cvar_matches_vertex_enumeration_on_random_instances():
    rng = np.random.default_rng(11)
    for _ in range(200):
        losses, pi, alpha = random_instance(rng)
        sol = cvar_weights(losses, pi, alpha)
        oracle = cvar_by_vertex_enumeration(losses, pi, alpha)
        assert sol.value == pytest.approx(oracle, abs=1e-9)


def test_cvar_solution_invariants():
    rng = np.random.default_rng(12)
    for _ in range(200):
        losses, pi, alpha = random_instance(rng)
        sol = cvar_weights(losses, pi, alpha)
        assert sol.weights.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(sol.weights >= -1e-15)
        assert np.all(sol.weights <= pi / alpha + 1e-9)
        assert sol.feasible
        assert sol.dual_gap <= 1e-6


def test_cvar_alpha_one_returns_reference_mean():
    rng = np.random.default_rng(13)
    losses, pi, _ = random_instance(rng)
    sol = cvar_weights(losses, pi, 1.0)
    assert sol.value == pytest.approx(float(pi @ losses), abs=1e-12)
    assert np.allclose(sol.weights, pi, atol=1e-12)


def test_cvar_tie_break_prefers_lower_index_and_value_is_stable():
    # two tied maximal losses: the cap budget must go to index 0 first
    losses = np.array([0.7, 0.7, 0.1])
    pi = np.array([0.2, 0.5, 0.3])
    sol = cvar_weights(losses, pi, 0.5)
    assert sol.weights[0] == pytest.approx(0.4, abs=1e-12)  # pi/alpha cap
    # the value cannot depend on how ties are broken
    swapped = cvar_weights(losses[[1, 0, 2]], pi[[1, 0, 2]], 0.5)
    assert swapped.value == pytest.approx(sol.value, abs=1e-12)


def test_cvar_permutation_equivariance():
    rng = np.random.default_rng(14)
    for _ in range(50):
        losses, pi, alpha = random_instance(rng)
        perm = rng.permutation(len(losses))
        base = cvar_weights(losses, pi, alpha)
        moved = cvar_weights(losses[perm], pi[perm], alpha)
        assert moved.value == pytest.approx(base.value, abs=1e-9)


def test_evar_frozen_example():
    spec = RiskSpec.evar(0.5)
    sol = constrained_weights([0.1, 0.8], [0.5, 0.5], spec)
    assert sol.value == pytest.approx(EVAR_EXAMPLE_VALUE, abs=1e-6)
    assert evar_by_grid_1d([0.1, 0.8], [0.5, 0.5], 0.5) == pytest.approx(
        EVAR_EXAMPLE_VALUE, abs=1e-4)


def test_evar_matches_grid_oracle_on_two_subgroups():
    rng = np.random.default_rng(15)
    for _ in range(60):
        losses, pi, alpha = random_instance(rng, n_max=2)
        sol = constrained_weights(losses, pi, RiskSpec.evar(alpha))
        oracle = evar_by_grid_1d(losses, pi, alpha, resolution=1e-5)
        assert sol.value == pytest.approx(oracle, abs=1e-3)


def test_evar_solution_respects_caps_budget_and_gap():
    rng = np.random.default_rng(16)
    for _ in range(100):
        losses, pi, alpha = random_instance(rng)
        spec = RiskSpec.evar(alpha)
        sol = constrained_weights(losses, pi, spec)
        assert sol.weights.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(sol.weights <= pi / alpha + 1e-9)
        assert kl_weights(sol.weights, pi) <= spec.beta + 1e-6
        assert sol.dual_gap <= 1e-6


def test_evar_never_exceeds_cvar():
    # the KL budget only removes feasible points from the cap-only problem
    rng = np.random.default_rng(17)
    for _ in range(100):
        losses, pi, alpha = random_instance(rng)
        evar = constrained_weights(losses, pi, RiskSpec.evar(alpha)).value
        cvar = cvar_weights(losses, pi, alpha).value
        assert evar <= cvar + 1e-9


def test_evar_with_huge_budget_recovers_cvar():
    rng = np.random.default_rng(18)
    losses, pi, alpha = random_instance(rng)
    spec = RiskSpec.custom(alpha, None, 0.0)
    del spec  # not the point; build an explicit KL spec instead
    big = RiskSpec(alpha=alpha, divergence="kl", beta=1e6)
    assert constrained_weights(losses, pi, big).value == pytest.approx(
        cvar_weights(losses, pi, alpha).value, abs=1e-9)


def test_zero_budget_forces_reference_weights():
    losses = [0.3, 0.6, 0.9]
    pi = [0.2, 0.3, 0.5]
    spec = RiskSpec(alpha=0.5, divergence="kl", beta=0.0)
    sol = constrained_weights(losses, pi, spec)
    assert np.allclose(sol.weights, pi, atol=1e-12)
    assert sol.value == pytest.approx(float(np.asarray(pi) @ losses), abs=1e-12)


def test_evar_alpha_one_returns_reference_weights():
    losses = [0.3, 0.6, 0.9]
    pi = [0.2, 0.3, 0.5]
    sol = constrained_weights(losses, pi, RiskSpec.evar(1.0))
    assert np.allclose(sol.weights, pi, atol=1e-12)


def test_custom_kl_divergence_matches_builtin_evar():
    def xlnx(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(x > 0.0, x * np.log(np.where(x > 0.0, x, 1.0)), 0.0)
        return out

    rng = np.random.default_rng(19)
    for _ in range(10):
        losses, pi, alpha = random_instance(rng, n_max=4)
        spec_custom = RiskSpec.custom(alpha, xlnx, -np.log(alpha))
        spec_kl = RiskSpec.evar(alpha)
        custom = constrained_weights(losses, pi, spec_custom, 1e-4)
        builtin = constrained_weights(losses, pi, spec_kl)
        assert custom.value == pytest.approx(builtin.value, abs=5e-3)


def test_custom_chi_square_matches_grid_oracle():
    def chi2(x):
        x = np.asarray(x, dtype=float)
        return (x - 1.0) ** 2

    rng = np.random.default_rng(20)
    for _ in range(10):
        losses, pi, alpha = random_instance(rng, n_max=2)
        beta = float(rng.uniform(0.01, 0.5))
        spec = RiskSpec.custom(alpha, chi2, beta)
        sol = constrained_weights(losses, pi, spec, 1e-4)
        oracle = oracle_risk_grid(losses, pi, spec, 1e-4)
        assert sol.value == pytest.approx(oracle, abs=5e-3)


def test_risk_gradient_is_the_maximizing_weights():
    losses = [0.2, 0.9, 0.5]
    pi = [0.5, 0.3, 0.2]
    sol = cvar_weights(losses, pi, 0.5)
    grad = risk_gradient(sol)
    assert np.array_equal(grad, sol.weights)
    grad[0] = 99.0  # returned array must be a copy
    assert sol.weights[0] != 99.0


def test_risk_gradient_matches_finite_differences():
    rng = np.random.default_rng(21)
    checked = 0
    while checked < 20:
        losses, pi, alpha = random_instance(rng)
        if np.min(np.abs(np.subtract.outer(losses, losses))
                  + np.eye(len(losses))) < 1e-3:
            continue  # near-ties make the value non-differentiable
        sol = cvar_weights(losses, pi, alpha)
        grad = risk_gradient(sol)
        i = int(rng.integers(len(losses)))
        step = 1e-6
        up, down = losses.copy(), losses.copy()
        up[i] = min(up[i] + step, 1.0)
        down[i] = max(down[i] - step, 0.0)
        fd = (cvar_weights(up, pi, alpha).value
              - cvar_weights(down, pi, alpha).value) / (up[i] - down[i])
        assert grad[i] == pytest.approx(fd, abs=1e-4)
        checked += 1


def test_oracle_grid_rejects_large_instances_and_bad_resolution():
    with pytest.raises(TooManySubgroups):
        oracle_risk_grid(np.full(5, 0.5), np.full(5, 0.2), RiskSpec.cvar(0.5),
                         1e-2)
    with pytest.raises(DomainError):
        oracle_risk_grid([0.1, 0.2], [0.5, 0.5], RiskSpec.cvar(0.5), 0.0)


def test_oracle_grid_handles_single_subgroup():
    assert oracle_risk_grid([0.4], [1.0], RiskSpec.cvar(0.5), 1e-3) == 0.4


def test_input_validation():
    with pytest.raises(AlphaOutOfRange):
        RiskSpec.cvar(0.0)
    with pytest.raises(AlphaOutOfRange):
        RiskSpec.cvar(1.5)
    with pytest.raises(DimensionMismatch):
        cvar_weights([0.1, 0.2], [0.5, 0.3, 0.2], 0.5)
    with pytest.raises(DomainError):
        cvar_weights([0.1, 1.5], [0.5, 0.5], 0.5)  # loss outside [0, 1]
    with pytest.raises(DomainError):
        ReferenceDistribution(np.array([0.5, 0.0, 0.5]))
    with pytest.raises(DomainError):
        ReferenceDistribution(np.array([0.5, 0.4]))
    with pytest.raises(DomainError):
        SubgroupLosses(np.array([0.1, np.nan]))
    with pytest.raises(DomainError):
        RiskSpec(alpha=0.5, divergence="kl", beta=-0.1)


def test_reference_distribution_uniform_and_losses_are_read_only():
    pi = ReferenceDistribution.uniform(4)
    assert np.allclose(pi.probs, 0.25)
    with pytest.raises(ValueError):
        pi.probs[0] = 0.9
    sub = SubgroupLosses(np.array([0.2, 0.4]))
    with pytest.raises(ValueError):
        sub.values[0] = 0.5
