"""Lipschitz constants of the component gradients.

Three constants are tracked, all as maxima over components ``i``:

* ``L_nor``: ``||grad f_i(x + d) - grad f_i(x)|| <= L_nor ||d||`` for any ``d``;
* ``L_res``: same left side, ``d`` supported on a single block ``G_j``;
* ``L_max``: only the block-``j`` slice of the gradient change, ``d`` on ``G_j``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .problem import CompositeProblem

_SLACK = 1e-9


@dataclass(frozen=True)
class LipschitzEstimates:
    L_nor: float
    L_res: float
    L_max: float

    def __post_init__(self):
        if not (self.L_max > 0 and self.L_res > 0 and self.L_nor > 0):
            raise ValueError("Lipschitz constants must be positive")

    @property
    def lambda_res(self) -> float:
        return self.L_res / self.L_max

    @property
    def lambda_nor(self) -> float:
        return self.L_nor / self.L_max

    def scaled(self, factor: float) -> "LipschitzEstimates":
        return LipschitzEstimates(self.L_nor * factor, self.L_res * factor, self.L_max * factor)


def block_norms(problem: CompositeProblem) -> tuple[np.ndarray, np.ndarray]:
    """Per-row ``||a_i||`` and ``max_j ||a_{i,G_j}||``."""
    A = problem.data.A
    l = problem.l
    rows = np.repeat(np.arange(l), np.diff(A.indptr))
    sq = A.data ** 2
    full = np.sqrt(np.bincount(rows, weights=sq, minlength=l))
    blk = problem.partition.coord_block[A.indices]
    key = rows * problem.k + blk
    uniq, inv = np.unique(key, return_inverse=True)
    per_block = np.sqrt(np.bincount(inv, weights=sq))
    best = np.zeros(l)
    np.maximum.at(best, uniq // problem.k, per_block)
    return full, best


def estimate_closed_form(problem: CompositeProblem) -> LipschitzEstimates:
    """Bounds from the rank-one Hessian ``phi'' a_i a_i^T + ridge * I``.

    With ``c`` the bound on ``phi''``: ``L_nor = c max ||a_i||^2``,
    ``L_max = c max ||a_{i,G_j}||^2``, the first and last plus the ridge ``mu``.
    ``L_res`` is the norm of the column block ``c a_i a_{i,G_j}^T + mu I_{:,G_j}``,
    ``sqrt((c^2 ||a_i||^2 + 2 c mu) ||a_{i,G_j}||^2 + mu^2)``. Per component these
    are exact operator norms of the ``c``-scaled Hessian, so only the ``phi''``
    bound is conservative.
    """
    if problem.l == 0:
        raise ValueError("empty dataset")
    c = problem.loss.curvature
    full, blk = block_norms(problem)
    mu = problem.ridge
    L_nor = c * float(np.max(full ** 2)) + mu
    L_res = float(np.max(np.sqrt((c * c * full ** 2 + 2 * c * mu) * blk ** 2 + mu * mu)))
    L_max = c * float(np.max(blk ** 2)) + mu
    if L_max <= 0:
        raise ValueError("all rows are zero and ridge is 0: f is constant")
    # ordering holds analytically; clamp rounding
    L_res = max(L_res, L_max)
    L_nor = max(L_nor, L_res)
    return LipschitzEstimates(L_nor, L_res, L_max)


def perturbation_ratios(problem: CompositeProblem, i: int, x, j: int, d_block) -> tuple[float, float]:
    """(full-change ratio, block-change ratio) for a block-j perturbation of f_i."""
    P = problem.partition
    x = np.asarray(x, dtype=np.float64)
    d_block = np.asarray(d_block, dtype=np.float64)
    g0 = problem.grad_component(i, x)
    g1 = problem.grad_component(i, x + P.scatter(j, d_block))
    diff = g1 - g0
    dn = np.linalg.norm(d_block)
    return np.linalg.norm(diff) / dn, np.linalg.norm(diff[P.groups[j]]) / dn


@dataclass
class ValidationReport:
    estimates: LipschitzEstimates
    max_ratio_nor: float = 0.0
    max_ratio_res: float = 0.0
    max_ratio_max: float = 0.0
    trials: int = 0
    # per perturbation scale: max of the three ratios observed at that scale
    by_scale: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        e = self.estimates
        return (self.max_ratio_nor <= e.L_nor * (1 + _SLACK)
                and self.max_ratio_res <= e.L_res * (1 + _SLACK)
                and self.max_ratio_max <= e.L_max * (1 + _SLACK))

    def lines(self):
        e = self.estimates
        for name, obs, est in (("L_nor", self.max_ratio_nor, e.L_nor),
                               ("L_res", self.max_ratio_res, e.L_res),
                               ("L_max", self.max_ratio_max, e.L_max)):
            ok = "ok" if obs <= est * (1 + _SLACK) else "VIOLATED"
            yield f"{name}: estimate {est:.6g}, max observed {obs:.6g} [{ok}]"


SCALES = (1e-4, 1e-2, 1.0, 1e2)


def validate_by_sampling(problem: CompositeProblem, estimates: LipschitzEstimates,
                         trials: int = 200, seed: int = 0) -> ValidationReport:
    """Probe the three inequalities at random points, blocks and perturbations."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    P = problem.partition
    rep = ValidationReport(estimates)
    for t in range(trials):
        scale = SCALES[t % len(SCALES)]
        i = int(rng.integers(problem.l))
        j = int(rng.integers(problem.k))
        x = rng.standard_normal(problem.n)
        d = rng.standard_normal(P.size(j))
        d *= scale / np.linalg.norm(d)
        r_res, r_max = perturbation_ratios(problem, i, x, j, d)
        D = rng.standard_normal(problem.n)
        D *= scale / np.linalg.norm(D)
        r_nor = np.linalg.norm(problem.grad_component(i, x + D) - problem.grad_component(i, x)) / scale
        rep.max_ratio_nor = max(rep.max_ratio_nor, r_nor)
        rep.max_ratio_res = max(rep.max_ratio_res, r_res)
        rep.max_ratio_max = max(rep.max_ratio_max, r_max)
        rep.by_scale[scale] = max(rep.by_scale.get(scale, 0.0), r_nor, r_res, r_max)
        rep.trials += 1
    return rep


def descent_slack(problem: CompositeProblem, L_max: float, i: int, x, j: int, d_block) -> float:
    """RHS minus LHS of the block descent inequality; nonnegative when it holds."""
    P = problem.partition
    x = np.asarray(x, dtype=np.float64)
    lhs = problem.component_value(i, x + P.scatter(j, d_block))
    g = problem.block_grad_component(i, j, x)
    rhs = problem.component_value(i, x) + g @ d_block + 0.5 * L_max * float(d_block @ d_block)
    return rhs - lhs
