"""Constrained f-entropic risk measures over a finite set of subgroups.

The central object is the inner supremum

    sup { sum_a rho_a * L_a :  rho in simplex,  rho_a <= pi_a / alpha,
                               D_f(rho || pi) <= beta }

where ``pi`` is a reference distribution over subgroups, ``alpha`` caps the
density ratio, and ``D_f`` is an optional f-divergence budget. With no
divergence the measure is CVaR and the solver is an exact greedy fill; with
the KL divergence (EVaR) the inner problem is solved in closed form by
exponential tilting under caps and the budget multiplier is found by
bisection. A hook for other convex f is provided but only CVaR and EVaR are
first-class paths.

All functions are pure; every returned object is immutable.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    AlphaOutOfRange,
    DimensionMismatch,
    DomainError,
    SolverDidNotConverge,
    TooManySubgroups,
)

KL_DIVERGENCE = "kl"

DEFAULT_TOL = 1e-6

_MAX_OUTER_ITERATIONS = 400


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ReferenceDistribution:
    """Reference distribution pi over subgroup indices.

    Every entry must be strictly positive (every subgroup is represented)
    and the entries must sum to 1 within 1e-12.
    """

    probs: np.ndarray

    def __post_init__(self):
        probs = _freeze(self.probs)
        if probs.ndim != 1 or probs.size == 0:
            raise DimensionMismatch("probs must be a non-empty 1-D vector")
        if np.any(probs <= 0.0):
            raise DomainError("every reference probability must be strictly positive")
        if abs(float(probs.sum()) - 1.0) > 1e-12:
            raise DomainError(
                f"reference probabilities must sum to 1, got {probs.sum()!r}"
            )
        object.__setattr__(self, "probs", probs)

    def __len__(self) -> int:
        return self.probs.size

    @staticmethod
    def uniform(n: int) -> "ReferenceDistribution":
        return ReferenceDistribution(np.full(n, 1.0 / n))


@dataclass(frozen=True)
class SubgroupLosses:
    """Per-subgroup empirical losses, each in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        values = _freeze(self.values)
        if values.ndim != 1 or values.size == 0:
            raise DimensionMismatch("values must be a non-empty 1-D vector")
        if (not np.all(np.isfinite(values)) or np.any(values < -1e-12)
                or np.any(values > 1.0 + 1e-12)):
            raise DomainError("losses must lie in [0, 1]")
        clipped = np.clip(values, 0.0, 1.0)
        clipped.setflags(write=False)
        object.__setattr__(self, "values", clipped)

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class RiskSpec:
    """Which admissible set is in force.

    alpha caps the density ratio at 1/alpha; ``divergence`` is None for pure
    CVaR, the string "kl" for EVaR, or a convex callable f with f(1) = 0 that
    accepts numpy arrays elementwise; ``beta`` is the divergence budget
    (ignored when divergence is None; forced to -ln(alpha) by evar()).
    """

    alpha: float
    divergence: str | Callable[[np.ndarray], np.ndarray] | None = None
    beta: float = 0.0

    def __post_init__(self):
        alpha = float(self.alpha)
        if not (0.0 < alpha <= 1.0):
            raise AlphaOutOfRange(f"alpha must lie in (0, 1], got {alpha}")
        object.__setattr__(self, "alpha", alpha)
        if self.divergence is not None:
            beta = float(self.beta)
            if not (beta >= 0.0) or math.isnan(beta):
                raise DomainError(f"beta must be non-negative, got {beta}")
            object.__setattr__(self, "beta", beta)
            if isinstance(self.divergence, str) and self.divergence != KL_DIVERGENCE:
                raise DomainError(f"unknown divergence {self.divergence!r}")
        else:
            object.__setattr__(self, "beta", 0.0)

    @staticmethod
    def cvar(alpha: float) -> "RiskSpec":
        return RiskSpec(alpha=alpha, divergence=None)

    @staticmethod
    def evar(alpha: float) -> "RiskSpec":
        """KL-constrained measure with the budget forced to -ln(alpha)."""
        alpha = float(alpha)
        if not (0.0 < alpha <= 1.0):
            raise AlphaOutOfRange(f"alpha must lie in (0, 1], got {alpha}")
        return RiskSpec(alpha=alpha, divergence=KL_DIVERGENCE, beta=-math.log(alpha))

    @staticmethod
    def custom(alpha: float, f: Callable, beta: float) -> "RiskSpec":
        return RiskSpec(alpha=alpha, divergence=f, beta=beta)

    def df_value(self, rho: np.ndarray, pi: np.ndarray) -> float:
        """D_f(rho || pi) for this spec's divergence (0 when divergence is None)."""
        if self.divergence is None:
            return 0.0
        rho = np.asarray(rho, dtype=float)
        pi = np.asarray(pi, dtype=float)
        if self.divergence == KL_DIVERGENCE:
            mask = rho > 0.0
            return float(np.sum(rho[mask] * np.log(rho[mask] / pi[mask])))
        ratio = rho / pi
        return float(np.sum(pi * self.divergence(ratio)))


@dataclass(frozen=True)
class RiskSolution:
    """Optimal weights, risk value and dual certificate of the inner sup."""

    weights: np.ndarray
    value: float
    feasible: bool = True
    dual_gap: float = 0.0

    def __post_init__(self):
        weights = _freeze(self.weights)
        if weights.ndim != 1:
            raise DimensionMismatch("weights must be a 1-D vector")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "dual_gap", float(self.dual_gap))


def _coerce_losses(losses) -> np.ndarray:
    if isinstance(losses, SubgroupLosses):
        return losses.values
    return SubgroupLosses(np.asarray(losses, dtype=float)).values


def _coerce_pi(pi) -> np.ndarray:
    if isinstance(pi, ReferenceDistribution):
        return pi.probs
    return ReferenceDistribution(np.asarray(pi, dtype=float)).probs


def _check_lengths(losses: np.ndarray, pi: np.ndarray) -> None:
    if losses.size != pi.size:
        raise DimensionMismatch(
            f"losses and pi must have equal length ({losses.size} != {pi.size})"
        )


def _assert_solution(sol: RiskSolution, losses: np.ndarray, pi: np.ndarray,
                     spec: RiskSpec, tol: float) -> RiskSolution:
    # every solver output honors the weight invariants before it is returned
    w = sol.weights
    assert abs(w.sum() - 1.0) <= 1e-9, "weights must sum to 1"
    assert np.all(w >= -1e-12) and np.all(w <= pi / spec.alpha + 1e-9), \
        "weights must respect the caps"
    assert abs(sol.value - float(w @ losses)) <= 1e-9, "value must equal rho . L"
    if spec.divergence is not None:
        assert spec.df_value(w, pi) <= spec.beta + max(tol, 1e-9), \
            "divergence budget violated"
    return sol


def cvar_weights(losses, pi, alpha: float) -> RiskSolution:
    """Exact maximizer of sum rho_a L_a under the cap rho_a <= pi_a / alpha.

    Sorts subgroups by loss descending (ties broken by lower index) and
    fills each cap greedily until the unit mass is exhausted. The result is
    an exact vertex solution, so the dual gap is 0.
    """
    losses = _coerce_losses(losses)
    pi = _coerce_pi(pi)
    _check_lengths(losses, pi)
    alpha = float(alpha)
    if not (0.0 < alpha <= 1.0):
        raise AlphaOutOfRange(f"alpha must lie in (0, 1], got {alpha}")

    caps = pi / alpha
    order = np.argsort(-losses, kind="stable")  # ties: lower index first
    weights = np.zeros_like(losses)
    remaining = 1.0
    for idx in order:
        take = min(caps[idx], remaining)
        weights[idx] = take
        remaining -= take
        if remaining <= 0.0:
            break
    if remaining > 0.0:
        # float residue of the cap sum; park it on the first subgroup with headroom
        for idx in order:
            headroom = caps[idx] - weights[idx]
            if headroom > 0.0:
                take = min(headroom, remaining)
                weights[idx] += take
                remaining -= take
                if remaining <= 0.0:
                    break
    value = float(weights @ losses)
    sol = RiskSolution(weights=weights, value=value, feasible=True, dual_gap=0.0)
    return _assert_solution(sol, losses, pi, RiskSpec.cvar(alpha), 0.0)


def _tilted_weights(losses: np.ndarray, pi: np.ndarray, alpha: float,
                    lam: float) -> np.ndarray:
    """Closed-form inner maximizer for the KL case at multiplier lam > 0.

    rho_a = min(c * pi_a * exp(L_a / lam), pi_a / alpha) with c set so the
    weights sum to 1. Solved by bisection in log space for stability at
    small lam.
    """
    s = np.log(pi) + losses / lam
    log_caps = np.log(pi) - math.log(alpha)
    # sum(exp(t + s)) = 1 at t = -logsumexp(s); caps only reduce the sum
    s_max = float(s.max())
    t_lo = -(s_max + math.log(float(np.exp(s - s_max).sum())))
    t_hi = float((log_caps - s).max()) + 1e-12
    if t_hi <= t_lo:
        t_lo = t_hi - 1.0

    def weights_at(t: float) -> np.ndarray:
        # clamp in log space so the exponential never overflows
        return np.exp(np.minimum(t + s, log_caps))

    for _ in range(200):
        t_mid = 0.5 * (t_lo + t_hi)
        if float(weights_at(t_mid).sum()) < 1.0:
            t_lo = t_mid
        else:
            t_hi = t_mid
    rho = weights_at(t_hi)
    total = rho.sum()
    if total > 0:
        rho = rho / total
    return np.minimum(rho, pi / alpha)


def _custom_inner(losses: np.ndarray, pi: np.ndarray, alpha: float, lam: float,
                  f: Callable) -> np.ndarray:
    """Inner maximizer for a generic convex f at multiplier lam > 0.

    Per coordinate maximizes pi_a * (r (L_a - mu) - lam f(r)) over
    r in [0, 1/alpha] by ternary search (the integrand is concave in r), with
    mu bisected so the weights sum to 1.
    """
    cap = 1.0 / alpha

    def best_ratios(mu: float) -> np.ndarray:
        lo = np.zeros_like(losses)
        hi = np.full_like(losses, cap)
        coef = losses - mu
        for _ in range(90):
            m1 = lo + (hi - lo) / 3.0
            m2 = hi - (hi - lo) / 3.0
            v1 = m1 * coef - lam * f(m1)
            v2 = m2 * coef - lam * f(m2)
            lower = v1 < v2
            lo = np.where(lower, m1, lo)
            hi = np.where(lower, hi, m2)
        return 0.5 * (lo + hi)

    def total(mu: float) -> float:
        return float((pi * best_ratios(mu)).sum())

    mu_lo, mu_hi = float(losses.min()) - 1.0, float(losses.max()) + 1.0
    for _ in range(80):
        if total(mu_lo) >= 1.0:
            break
        mu_lo -= max(1.0, abs(mu_lo))
    for _ in range(80):
        if total(mu_hi) <= 1.0:
            break
        mu_hi += max(1.0, abs(mu_hi))
    for _ in range(90):
        mu_mid = 0.5 * (mu_lo + mu_hi)
        if total(mu_mid) > 1.0:
            mu_lo = mu_mid
        else:
            mu_hi = mu_mid
    rho = pi * best_ratios(0.5 * (mu_lo + mu_hi))
    s = rho.sum()
    if s > 0:
        rho = rho / s
    return np.minimum(rho, pi / alpha)


def constrained_weights(losses, pi, spec: RiskSpec,
                        tol: float = DEFAULT_TOL) -> RiskSolution:
    """Solve the capped, f-divergence-budgeted supremum to duality gap <= tol.

    The divergence constraint is dualized: for each multiplier lam the inner
    capped problem is solved exactly (closed form for KL, per-coordinate
    search for custom f) and lam is bisected against the budget. The greedy
    CVaR solution is returned directly when it already satisfies the budget
    (it maximizes over a superset, so it is exactly optimal). The reported
    dual_gap is the best dual value seen minus the value of the returned
    feasible point.
    """
    losses = _coerce_losses(losses)
    pi = _coerce_pi(pi)
    _check_lengths(losses, pi)
    if not (tol > 0.0):
        raise DomainError(f"tol must be positive, got {tol}")

    if spec.divergence is None:
        return cvar_weights(losses, pi, spec.alpha)

    beta = spec.beta
    if spec.alpha == 1.0 or beta <= 0.0:
        # caps (alpha = 1) or the zero budget force rho = pi
        value = float(pi @ losses)
        sol = RiskSolution(weights=pi.copy(), value=value, feasible=True, dual_gap=0.0)
        return _assert_solution(sol, losses, pi, spec, tol)

    greedy = cvar_weights(losses, pi, spec.alpha)
    if spec.df_value(greedy.weights, pi) <= beta + 1e-12:
        return _assert_solution(greedy, losses, pi, spec, tol)

    if spec.divergence == KL_DIVERGENCE:
        inner = lambda lam: _tilted_weights(losses, pi, spec.alpha, lam)
    else:
        inner = lambda lam: _custom_inner(losses, pi, spec.alpha, lam, spec.divergence)

    def dual_value(rho: np.ndarray, lam: float) -> float:
        return float(rho @ losses) - lam * (spec.df_value(rho, pi) - beta)

    best_dual = greedy.value  # lam = 0 is a valid dual point
    best_primal = float(pi @ losses)  # rho = pi is always feasible
    best_weights = pi.copy()
    iterations = 0

    # grow lam until the budget is met, then bisect
    lam_lo, lam_hi = 0.0, 1.0
    rho_hi = inner(lam_hi)
    iterations += 1
    while spec.df_value(rho_hi, pi) > beta and iterations < 80:
        lam_lo = lam_hi
        lam_hi *= 2.0
        rho_hi = inner(lam_hi)
        iterations += 1
    if spec.df_value(rho_hi, pi) > beta:
        raise SolverDidNotConverge(iterations, float("inf"))

    def consider(rho: np.ndarray, lam: float):
        nonlocal best_dual, best_primal, best_weights
        div = spec.df_value(rho, pi)
        value = float(rho @ losses)
        best_dual = min(best_dual, value - lam * (div - beta))
        if div <= beta + 1e-12 and value > best_primal:
            best_primal = value
            best_weights = rho

    consider(rho_hi, lam_hi)
    while iterations < _MAX_OUTER_ITERATIONS:
        if best_dual - best_primal <= tol:
            gap = max(best_dual - best_primal, 0.0)
            sol = RiskSolution(weights=best_weights, value=best_primal,
                               feasible=True, dual_gap=gap)
            return _assert_solution(sol, losses, pi, spec, tol)
        lam_mid = 0.5 * (lam_lo + lam_hi)
        rho_mid = inner(lam_mid)
        iterations += 1
        consider(rho_mid, lam_mid)
        if spec.df_value(rho_mid, pi) > beta:
            lam_lo = lam_mid
        else:
            lam_hi = lam_mid
    raise SolverDidNotConverge(iterations, best_dual - best_primal)


def risk_gradient(solution: RiskSolution) -> np.ndarray:
    """Gradient of the risk value with respect to the subgroup losses.

    By the envelope theorem this is the maximizing weights rho*; it is exact
    when the maximizer is unique and a valid supergradient otherwise.
    """
    if not solution.feasible:
        raise DomainError("cannot differentiate an infeasible solution")
    return solution.weights.copy()


def _linear_slice_max(losses: np.ndarray, caps: np.ndarray,
                      rho0_grid: np.ndarray) -> float:
    """Max of the linear objective over the grid of the first coordinate,
    resolving the remaining capped-simplex slice exactly at its corners."""
    n = losses.size
    mass = 1.0 - rho0_grid
    best = -np.inf
    if n == 2:
        feasible = mass <= caps[1] + 1e-15
        if feasible.any():
            vals = rho0_grid[feasible] * losses[0] + mass[feasible] * losses[1]
            best = float(vals.max())
        return best
    tail = np.arange(1, n)
    for frac in tail:
        others = [a for a in tail if a != frac]
        for bits in itertools.product((0, 1), repeat=len(others)):
            fixed = np.zeros(len(rho0_grid))
            fixed_val = np.zeros(len(rho0_grid))
            for a, bit in zip(others, bits):
                if bit:
                    fixed += caps[a]
                    fixed_val += caps[a] * losses[a]
            rest = mass - fixed
            ok = (rest >= -1e-15) & (rest <= caps[frac] + 1e-15)
            if ok.any():
                vals = (rho0_grid[ok] * losses[0] + fixed_val[ok]
                        + np.clip(rest[ok], 0.0, caps[frac]) * losses[frac])
                best = max(best, float(vals.max()))
    return best


def oracle_risk_grid(losses, pi, spec: RiskSpec, resolution: float) -> float:
    """Brute-force maximum of sum rho_a L_a over the feasible set; test oracle.

    The first coordinate is swept on a grid of the given resolution. With no
    divergence the objective is linear, so the remaining slice is resolved
    exactly at its corners (the quantization error stays <= resolution times
    the loss range). With an active divergence the full lattice over n - 1
    coordinates is swept and filtered by the caps and the budget, which costs
    O(resolution^-(n-1)); keep n <= 2 for fine resolutions. The reference
    point rho = pi is always included so the result is defined at any
    resolution.
    """
    losses = _coerce_losses(losses)
    pi = _coerce_pi(pi)
    _check_lengths(losses, pi)
    n = losses.size
    if n > 4:
        raise TooManySubgroups(f"grid oracle supports n <= 4, got {n}")
    if not (resolution > 0.0):
        raise DomainError(f"resolution must be positive, got {resolution}")

    caps = pi / spec.alpha
    if n == 1:
        return float(losses[0])

    def axis(lo: float, hi: float) -> np.ndarray:
        if hi < lo:
            return np.empty(0)
        pts = np.arange(lo, hi, resolution)
        return np.append(pts, hi)

    lo0 = max(0.0, 1.0 - float(caps[1:].sum()))
    hi0 = min(float(caps[0]), 1.0)
    grid0 = axis(lo0, hi0)

    if spec.divergence is None:
        return _linear_slice_max(losses, caps, grid0)

    best = float(pi @ losses)  # rho = pi is always feasible
    beta = spec.beta
    if n == 2:
        rho1 = 1.0 - grid0
        ok = rho1 <= caps[1] + 1e-15
        rho0, rho1 = grid0[ok], np.clip(rho1[ok], 0.0, None)
        stacked = np.stack([rho0, rho1], axis=1)
        div = _df_rows(stacked, pi, spec)
        feas = div <= beta + 1e-12
        if feas.any():
            vals = stacked[feas] @ losses
            best = max(best, float(vals.max()))
        return best

    # n = 3 or 4: lattice the first n-1 coordinates, chunked by rows
    for rho0 in grid0:
        mass0 = 1.0 - rho0
        lo1 = max(0.0, mass0 - float(caps[2:].sum()))
        hi1 = min(float(caps[1]), mass0)
        grid1 = axis(lo1, hi1)
        if grid1.size == 0:
            continue
        if n == 3:
            rho2 = mass0 - grid1
            ok = (rho2 >= -1e-15) & (rho2 <= caps[2] + 1e-15)
            if not ok.any():
                continue
            stacked = np.stack([np.full(ok.sum(), rho0), grid1[ok],
                                np.clip(rho2[ok], 0.0, None)], axis=1)
            div = _df_rows(stacked, pi, spec)
            feas = div <= beta + 1e-12
            if feas.any():
                best = max(best, float((stacked[feas] @ losses).max()))
        else:
            for rho1 in grid1:
                mass1 = mass0 - rho1
                lo2 = max(0.0, mass1 - float(caps[3]))
                hi2 = min(float(caps[2]), mass1)
                grid2 = axis(lo2, hi2)
                if grid2.size == 0:
                    continue
                rho3 = mass1 - grid2
                ok = (rho3 >= -1e-15) & (rho3 <= caps[3] + 1e-15)
                if not ok.any():
                    continue
                stacked = np.stack([np.full(ok.sum(), rho0),
                                    np.full(ok.sum(), rho1), grid2[ok],
                                    np.clip(rho3[ok], 0.0, None)], axis=1)
                div = _df_rows(stacked, pi, spec)
                feas = div <= beta + 1e-12
                if feas.any():
                    best = max(best, float((stacked[feas] @ losses).max()))
    return best


def _df_rows(rows: np.ndarray, pi: np.ndarray, spec: RiskSpec) -> np.ndarray:
    """Row-wise D_f(rho || pi) for a matrix of candidate weight vectors."""
    if spec.divergence == KL_DIVERGENCE:
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(rows > 0.0, rows * np.log(rows / pi), 0.0)
        return terms.sum(axis=1)
    ratio = rows / pi
    return (pi * spec.divergence(ratio)).sum(axis=1)
