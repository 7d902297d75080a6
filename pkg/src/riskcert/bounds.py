"""Generalization certificates for constrained risk measures.

Two families over class subgroups (a binary-kl inversion and its Pinsker
square-root relaxation), two per-example families (disintegrated and
classical, the latter carrying the +3.5 constant and the Gaussian
mean-shift KL), and the single-sample estimate of the CVaR-specific
baseline bound. The divergence penalty enters through ``kl_term``; negative
values are clamped at zero inside the formulas (the raw signed value stays
available to callers for diagnostics). ``n_priors`` is the number of
candidate priors union-bounded over; it multiplies every confidence log
term.

Finite bound values are reported raw (they can exceed 1) with a ``vacuous``
flag once they are >= 1; an infinite kl collapses the bound to exactly 1
and flags it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, DomainError
from .validation import check_in_range, check_positive

SUBGROUPS_KL = "subgroups_kl"
SUBGROUPS_SQRT = "subgroups_sqrt"
ONE_EXAMPLE_DIS = "one_example_dis"
ONE_EXAMPLE_CLASSICAL = "one_example_classical"
MHAMMEDI_ESTIMATE = "mhammedi_estimate"

BOUND_KINDS = (SUBGROUPS_KL, SUBGROUPS_SQRT, ONE_EXAMPLE_DIS,
               ONE_EXAMPLE_CLASSICAL, MHAMMEDI_ESTIMATE)

PER_EXAMPLE_KINDS = (ONE_EXAMPLE_DIS, ONE_EXAMPLE_CLASSICAL, MHAMMEDI_ESTIMATE)
SUBGROUP_KINDS = (SUBGROUPS_KL, SUBGROUPS_SQRT)


def kl_plus(a: float, b: float) -> float:
    """Binary KL divergence kl(a || b), truncated to 0 when a > b.

    Boundary conventions: 0 ln 0 = 0; kl(0 || 1) = +inf.
    """
    a = check_in_range(a, 0.0, 1.0, "a")
    b = check_in_range(b, 0.0, 1.0, "b")
    if a >= b:
        return 0.0
    # a < b here, so b > 0 and a < 1
    if b == 1.0:
        return math.inf
    first = a * math.log(a / b) if a > 0.0 else 0.0
    second = (1.0 - a) * math.log((1.0 - a) / (1.0 - b))
    return first + second


def kl_inverse(a: float, eps: float) -> float:
    """Largest b in [a, 1] with kl_plus(a, b) <= eps, to 1e-10 by bisection."""
    a = check_in_range(a, 0.0, 1.0, "a")
    if math.isnan(eps) or eps < 0.0:
        raise DomainError(f"eps must be non-negative, got {eps}")
    if eps == 0.0:
        return a
    if math.isinf(eps) or a == 1.0:
        return 1.0
    # iterate well past the documented 1e-10: kl is steep near b = 1, so the
    # extra precision keeps forward evaluation kl_plus(a, result) near eps
    lo, hi = a, 1.0
    for _ in range(100):
        if hi - lo <= 1e-13:
            break
        mid = 0.5 * (lo + hi)
        if kl_plus(a, mid) <= eps:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True)
class BoundContext:
    """Everything a bound formula needs besides the empirical risk.

    ``m_a`` holds the subgroup sizes (all ones with n = m in per-example
    mode); ``pi`` is the reference distribution used for the subgroup
    expectation and defaults to the empirical ratios m_a / m; ``kl_term`` is
    the disintegrated log density ratio (or a classical KL, per bound) and
    may be negative, the formulas clamp it.
    """

    delta: float
    m: int
    n: int
    m_a: np.ndarray
    alpha: float
    lam: float = 1.0
    n_priors: int = 1
    kl_term: float = 0.0
    pi: np.ndarray | None = None

    def __post_init__(self):
        check_in_range(self.delta, 1e-15, 1.0, "delta")
        check_in_range(self.alpha, 1e-15, 1.0, "alpha")
        check_positive(self.lam, "lam")
        if int(self.n_priors) < 1:
            raise DomainError(f"n_priors must be >= 1, got {self.n_priors}")
        object.__setattr__(self, "n_priors", int(self.n_priors))
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "n", int(self.n))
        m_a = np.array(self.m_a, dtype=int)
        if m_a.ndim != 1 or m_a.size != self.n:
            raise DimensionMismatch("m_a must be a vector of length n")
        if np.any(m_a < 1):
            raise DomainError("every subgroup size must be >= 1")
        if int(m_a.sum()) != self.m:
            raise DimensionMismatch("subgroup sizes must sum to m")
        m_a.setflags(write=False)
        object.__setattr__(self, "m_a", m_a)
        if self.pi is None:
            pi = m_a / self.m
        else:
            pi = np.array(self.pi, dtype=float)
            if pi.shape != (self.n,):
                raise DimensionMismatch("pi must be a vector of length n")
            if np.any(pi <= 0) or abs(float(pi.sum()) - 1.0) > 1e-9:
                raise DomainError("pi must be strictly positive and sum to 1")
        pi = np.asarray(pi, dtype=float)
        pi.setflags(write=False)
        object.__setattr__(self, "pi", pi)

    @property
    def per_example(self) -> bool:
        return self.n == self.m and bool(np.all(self.m_a == 1))


@dataclass(frozen=True)
class BoundReport:
    """Every term of one bound evaluation, JSON-serializable."""

    kind: str
    empirical_risk: float
    complexity: float
    bound: float
    components: dict
    vacuous: bool
    estimate: bool = False

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "empirical_risk": self.empirical_risk,
            "complexity": self.complexity,
            "bound": self.bound,
            "components": dict(self.components),
            "vacuous": self.vacuous,
            "estimate": self.estimate,
        }


def _check_risk(empirical_risk: float) -> float:
    return check_in_range(empirical_risk, 0.0, 1.0, "empirical_risk")


def _require_subgroup_mode(ctx: BoundContext, kind: str) -> None:
    if ctx.per_example and ctx.m > 1:
        raise DomainError(f"{kind} expects class-subgroup mode, "
                          "not the per-example partition")


def _require_per_example(ctx: BoundContext, kind: str) -> None:
    if not ctx.per_example:
        raise DomainError(f"{kind} requires the per-example partition "
                          "(every subgroup size 1 and n = m)")


def _infinite_report(kind: str, empirical_risk: float, estimate: bool = False,
                     **components) -> BoundReport:
    components = {key: float(value) for key, value in components.items()}
    components["kl_term"] = math.inf
    return BoundReport(kind=kind, empirical_risk=empirical_risk,
                       complexity=math.inf, bound=1.0, components=components,
                       vacuous=True, estimate=estimate)


def _subgroup_radius(ctx: BoundContext, halve: bool) -> float:
    kl = max(ctx.kl_term, 0.0)
    log_terms = np.log(2.0 * ctx.n * ctx.n_priors * np.sqrt(ctx.m_a) / ctx.delta)
    denom = (2.0 if halve else 1.0) * ctx.alpha * ctx.m_a
    return float(np.sum(ctx.pi * (kl + log_terms) / denom))


def bound_subgroups_kl(empirical_risk: float, ctx: BoundContext) -> BoundReport:
    """Subgroup-mode certificate through binary-kl inversion."""
    empirical_risk = _check_risk(empirical_risk)
    _require_subgroup_mode(ctx, SUBGROUPS_KL)
    if math.isinf(ctx.kl_term):
        return _infinite_report(SUBGROUPS_KL, empirical_risk)
    eps = _subgroup_radius(ctx, halve=False)
    bound = kl_inverse(empirical_risk, eps)
    return BoundReport(
        kind=SUBGROUPS_KL,
        empirical_risk=empirical_risk,
        complexity=eps,
        bound=bound,
        components={"eps": eps, "kl_term": max(ctx.kl_term, 0.0)},
        vacuous=bound >= 1.0,
    )


def bound_subgroups_sqrt(empirical_risk: float, ctx: BoundContext) -> BoundReport:
    """Subgroup-mode certificate in additive square-root form."""
    empirical_risk = _check_risk(empirical_risk)
    _require_subgroup_mode(ctx, SUBGROUPS_SQRT)
    if math.isinf(ctx.kl_term):
        return _infinite_report(SUBGROUPS_SQRT, empirical_risk)
    radius = _subgroup_radius(ctx, halve=True)
    complexity = math.sqrt(radius)
    bound = empirical_risk + complexity
    return BoundReport(
        kind=SUBGROUPS_SQRT,
        empirical_risk=empirical_risk,
        complexity=complexity,
        bound=bound,
        components={"radius": radius, "kl_term": max(ctx.kl_term, 0.0)},
        vacuous=bound >= 1.0,
    )


def bound_one_example_dis(empirical_risk: float, ctx: BoundContext) -> BoundReport:
    """Per-example certificate for a single model sampled from the posterior."""
    empirical_risk = _check_risk(empirical_risk)
    _require_per_example(ctx, ONE_EXAMPLE_DIS)
    if math.isinf(ctx.kl_term):
        return _infinite_report(ONE_EXAMPLE_DIS, empirical_risk)
    kl = max(ctx.kl_term, 0.0)
    confidence = math.log(2.0 * ctx.n_priors * (ctx.lam + 1.0) / ctx.delta)
    inner = ((1.0 + 1.0 / ctx.lam) * kl + confidence) / (2.0 * ctx.m)
    complexity = math.sqrt(inner) / ctx.alpha
    bound = empirical_risk + complexity
    return BoundReport(
        kind=ONE_EXAMPLE_DIS,
        empirical_risk=empirical_risk,
        complexity=complexity,
        bound=bound,
        components={"kl_term": kl, "confidence": confidence},
        vacuous=bound >= 1.0,
    )


def bound_one_example_classical(empirical_risk: float, kl_classical: float,
                                ctx: BoundContext) -> BoundReport:
    """Per-example certificate holding in expectation over the posterior."""
    empirical_risk = _check_risk(empirical_risk)
    _require_per_example(ctx, ONE_EXAMPLE_CLASSICAL)
    if math.isinf(kl_classical):
        return _infinite_report(ONE_EXAMPLE_CLASSICAL, empirical_risk)
    kl = max(float(kl_classical), 0.0)
    confidence = math.log(2.0 * ctx.n_priors * (ctx.lam + 1.0) / ctx.delta)
    inner = ((1.0 + 1.0 / ctx.lam) * kl + confidence + 3.5) / (2.0 * ctx.m)
    complexity = math.sqrt(inner) / ctx.alpha
    bound = empirical_risk + complexity
    return BoundReport(
        kind=ONE_EXAMPLE_CLASSICAL,
        empirical_risk=empirical_risk,
        complexity=complexity,
        bound=bound,
        components={"kl_term": kl, "confidence": confidence},
        vacuous=bound >= 1.0,
    )


def bound_mhammedi_estimate(empirical_risk: float, kl_classical: float,
                            ctx: BoundContext) -> BoundReport:
    """Single-sample estimate of the CVaR-specific baseline certificate.

    The expectation over the posterior is replaced by one sampled model, so
    the report is flagged ``estimate``. Valid for CVaR only.
    """
    empirical_risk = _check_risk(empirical_risk)
    _require_per_example(ctx, MHAMMEDI_ESTIMATE)
    if math.isinf(kl_classical):
        return _infinite_report(MHAMMEDI_ESTIMATE, empirical_risk, estimate=True)
    kl = max(float(kl_classical), 0.0)
    am = ctx.alpha * ctx.m
    g = math.log(2.0 * ctx.n_priors * math.ceil(math.log2(ctx.m / ctx.alpha))
                 / ctx.delta)
    k_bar = kl + g
    moment = 2.0 * empirical_risk * (math.sqrt(g / (2.0 * am)) + g / (3.0 * am))
    variance = math.sqrt(27.0 * empirical_risk * k_bar / (5.0 * am))
    tail = 27.0 * k_bar / (5.0 * am)
    complexity = moment + variance + tail
    bound = empirical_risk + complexity
    return BoundReport(
        kind=MHAMMEDI_ESTIMATE,
        empirical_risk=empirical_risk,
        complexity=complexity,
        bound=bound,
        components={"kl_term": kl, "G": g, "K_bar": k_bar,
                    "moment_term": moment, "variance_term": variance,
                    "tail_term": tail},
        vacuous=bound >= 1.0,
        estimate=True,
    )


def compute_bound(kind: str, empirical_risk: float, ctx: BoundContext,
                  kl_classical: float | None = None) -> BoundReport:
    """Dispatch to one of the five bound families by name."""
    if kind == SUBGROUPS_KL:
        return bound_subgroups_kl(empirical_risk, ctx)
    if kind == SUBGROUPS_SQRT:
        return bound_subgroups_sqrt(empirical_risk, ctx)
    if kind == ONE_EXAMPLE_DIS:
        return bound_one_example_dis(empirical_risk, ctx)
    if kind == ONE_EXAMPLE_CLASSICAL:
        if kl_classical is None:
            raise DomainError(f"{kind} needs kl_classical")
        return bound_one_example_classical(empirical_risk, kl_classical, ctx)
    if kind == MHAMMEDI_ESTIMATE:
        if kl_classical is None:
            raise DomainError(f"{kind} needs kl_classical")
        return bound_mhammedi_estimate(empirical_risk, kl_classical, ctx)
    raise DomainError(f"unknown bound kind {kind!r}")
