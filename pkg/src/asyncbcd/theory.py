"""Step-size bound and convergence-rate predictors for the asynchronous solver.

All geometric sums use closed forms; ``tests/test_theory.py`` cross-checks them
against direct summation.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

log = logging.getLogger(__name__)

DEFAULT_RHO = 2.0
SAFETY = 0.9


@dataclass(frozen=True)
class TheoryParams:
    rho: float = DEFAULT_RHO
    tau: int = 0
    m: int = 1
    k: int = 1
    lambda_res: float = 1.0
    lambda_nor: float = 1.0
    l_osc: float = 0.0
    L_max: float = 1.0

    def __post_init__(self):
        if not self.rho > 1:
            raise ValueError(f"rho must be > 1, got {self.rho}")
        if self.tau < 0 or self.m < 1 or self.k < 1:
            raise ValueError("need tau >= 0, m >= 1, k >= 1")
        if not (self.lambda_nor >= self.lambda_res >= 1):
            raise ValueError("need lambda_nor >= lambda_res >= 1")
        if self.l_osc < 0 or not self.L_max > 0:
            raise ValueError("need l_osc >= 0 and L_max > 0")


def _check_rho(rho):
    if not rho > 1:
        raise ValueError(f"rho must be > 1, got {rho}")


def _pow(base, e):
    try:
        return base ** e
    except OverflowError:
        return math.inf


def theta1(rho: float, tau: int) -> float:
    """sum_{t=1}^{tau} rho^(t/2)."""
    _check_rho(rho)
    if tau == 0:
        return 0.0
    r = math.sqrt(rho)
    return (r - _pow(rho, (tau + 1) / 2)) / (1 - r)


def theta2(rho: float, m: int) -> float:
    """sum_{t=1}^{m-1} rho^(t/2)."""
    _check_rho(rho)
    if m <= 1:
        return 0.0
    r = math.sqrt(rho)
    return (r - _pow(rho, m / 2)) / (1 - r)


def theta_prime(rho: float, tau: int) -> float:
    """sum_{t=1}^{tau} rho^t."""
    _check_rho(rho)
    if tau == 0:
        return 0.0
    return (_pow(rho, tau + 1) - rho) / (rho - 1)


@dataclass(frozen=True)
class GammaBound:
    """Outcome of the admissible-step computation.

    ``value`` is ``None`` when the first term's numerator is nonpositive (or
    the bound underflows to zero because the geometric sums overflow).
    ``rate_condition`` reports whether the step also satisfies the (stricter)
    condition required for the rate guarantees, evaluated at ``value``.
    """
    value: float | None
    term1: float
    term2: float
    theta1: float
    theta2: float
    rate_condition: bool

    @property
    def feasible(self) -> bool:
        return self.value is not None


def rate_condition_margin(p: TheoryParams, gamma: float) -> float:
    """1 - Lnor*g - g*tau*theta'/k - 2(Lres*th1 + Lnor*th2)*g/sqrt(k); >= 0 required."""
    th1, th2 = theta1(p.rho, p.tau), theta2(p.rho, p.m)
    tp = theta_prime(p.rho, p.tau)
    return (1 - p.lambda_nor * gamma - gamma * p.tau * tp / p.k
            - 2 * (p.lambda_res * th1 + p.lambda_nor * th2) * gamma / math.sqrt(p.k))


def gamma_bound(p: TheoryParams) -> GammaBound:
    th1, th2 = theta1(p.rho, p.tau), theta2(p.rho, p.m)
    sk = math.sqrt(p.k)
    num = sk * (1 - 1 / p.rho) - 4
    t1 = num / (4 * (p.lambda_res * (1 + th1) + p.lambda_nor * (1 + th2)))
    t2 = sk / (0.5 * sk + 2 * p.lambda_nor * th2 + p.lambda_res * th1)
    g = min(t1, t2)
    if num <= 0 or not g > 0:
        return GammaBound(None, t1, t2, th1, th2, False)
    return GammaBound(g, t1, t2, th1, th2, rate_condition_margin(p, g) >= 0)


def linear_rate(p: TheoryParams, gamma: float) -> float:
    """Predicted per-epoch contraction of the Lyapunov quantity."""
    if not p.l_osc > 0:
        raise ValueError("linear rate needs optimal strong convexity l_osc > 0")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    l = p.l_osc
    return 1.0 / (1.0 + 2 * p.m * gamma * l / (2 * p.k * (l * gamma + p.L_max)))


def sublinear_bound(p: TheoryParams, gamma: float, s: float, x0_dist_sq: float, f0_gap: float) -> float:
    """Bound on E F(x^s) - F* for general convex f (coordinate count read as k)."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if s < 0:
        raise ValueError("epoch index must be nonnegative")
    num = p.k * p.L_max * x0_dist_sq + 2 * gamma * p.k * f0_gap
    return num / (2 * gamma * p.k + 2 * p.m * gamma * s)


@dataclass(frozen=True)
class RatePrediction:
    params: TheoryParams
    bound: GammaBound
    gamma: float | None
    linear_factor: float | None

    @property
    def gamma_max(self) -> float | None:
        return self.bound.value

    def sublinear_bound_at(self, s, x0_dist_sq: float, f0_gap: float) -> float:
        if self.gamma is None:
            raise ValueError("no admissible step")
        return sublinear_bound(self.params, self.gamma, s, x0_dist_sq, f0_gap)


def predict(p: TheoryParams, gamma: float | None = None) -> RatePrediction:
    """Evaluate the bound and, at ``gamma`` (default: the bound), the linear factor."""
    gb = gamma_bound(p)
    g = gb.value if gamma is None else gamma
    lin = linear_rate(p, g) if (g is not None and p.l_osc > 0) else None
    return RatePrediction(p, gb, g, lin)


@dataclass(frozen=True)
class ResolvedGamma:
    gamma: float
    guaranteed: bool
    bound: GammaBound
    params: TheoryParams


def auto_gamma(p: TheoryParams, safety: float = SAFETY) -> ResolvedGamma:
    """Theory step times ``safety``; proximal-gradient heuristic when infeasible."""
    gb = gamma_bound(p)
    if gb.feasible:
        return ResolvedGamma(safety * gb.value, True, gb, p)
    g = min(0.1, 1.0 / p.lambda_nor)
    log.warning("step-size bound infeasible for k=%d, rho=%g (needs k > %.1f); "
                "falling back to gamma=%g without convergence guarantees",
                p.k, p.rho, (4 / (1 - 1 / p.rho)) ** 2, g)
    return ResolvedGamma(g, False, gb, p)
